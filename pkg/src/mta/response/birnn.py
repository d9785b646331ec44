"""Bidirectional recurrent response model.

Per-day inputs (log1p impression counts for every brand/position plus the
day's price indices) feed a forward-recurrence LSTM and a backward-recurrence
LSTM. User characteristics pass through a separate fully connected tanh layer
whose output shifts the logistic output layer additively, so it acts like a
learned per-user intercept. Each day's two hidden states and the user head
produce one logit per brand.

Dropout (inverted, configured as a keep probability) applies to the
non-recurrent connections only: the concatenated hidden vector and the user
head output feeding the output layer.
"""

from __future__ import annotations

import numpy as np

from ..core import Dims
from .base import Batch, ShapeMismatch, bernoulli_ll, check_inputs, sigmoid, stable_nll, PRED_EPS
from .init import init_parameters
from .lstm import lstm_backward, lstm_forward


class BiRecurrentModel:
    kind = "birnn"

    def __init__(
        self,
        dims: Dims,
        n_features: int,
        hidden: int = 32,
        user_hidden: int = 16,
        seed: int = 0,
    ):
        self.dims = dims
        self.n_features = n_features
        self.hidden = hidden
        self.user_hidden = user_hidden
        self.seed = seed
        D = dims.brands * dims.positions + dims.brands
        H, R, Hu, B = hidden, n_features, user_hidden, dims.brands
        self.params = init_parameters(
            [
                ("fw_wx", (D, 4 * H), "normal"),
                ("fw_wh", (H, 4 * H), "orthogonal"),
                ("fw_b", (4 * H,), "zeros"),
                ("bw_wx", (D, 4 * H), "normal"),
                ("bw_wh", (H, 4 * H), "orthogonal"),
                ("bw_b", (4 * H,), "zeros"),
                ("user_w", (R, Hu), "normal"),
                ("user_b", (Hu,), "zeros"),
                ("out_w", (2 * H, B), "normal"),
                ("out_u", (Hu, B), "normal"),
                ("out_b", (B,), "zeros"),
            ],
            seed,
        )

    # -- forward pieces -------------------------------------------------

    def _day_inputs(self, counts: np.ndarray, prices: np.ndarray) -> np.ndarray:
        n, T, _ = counts.shape
        tiled = np.broadcast_to(prices.T, (n, T, self.dims.brands))
        return np.concatenate([np.log1p(counts), tiled], axis=2)

    def _user_head(self, features: np.ndarray) -> np.ndarray:
        p = self.params
        return np.tanh(features @ p["user_w"] + p["user_b"])

    def _hidden_states(self, u: np.ndarray, want_cache: bool = False):
        p = self.params
        hf, cf = lstm_forward(u, p["fw_wx"], p["fw_wh"], p["fw_b"], reverse=False, want_cache=want_cache)
        hb, cb = lstm_forward(u, p["bw_wx"], p["bw_wh"], p["bw_b"], reverse=True, want_cache=want_cache)
        return hf, hb, cf, cb

    # -- public API ------------------------------------------------------

    def predict_batch(
        self, counts: np.ndarray, prices: np.ndarray, features: np.ndarray, brand: int, day: int
    ) -> np.ndarray:
        """Purchase probabilities for (brand, day), one per row of ``counts``."""
        check_inputs(self, counts, prices, brand, day)
        if features.shape[1] != self.n_features:
            raise ShapeMismatch(f"features have {features.shape[1]} columns, model expects {self.n_features}")
        p = self.params
        u = self._day_inputs(counts, prices)
        hf, hb, _, _ = self._hidden_states(u)
        z = np.concatenate([hf[:, day], hb[:, day]], axis=1)
        q = self._user_head(features)
        logit = z @ p["out_w"][:, brand] + q @ p["out_u"][:, brand] + p["out_b"][brand]
        return np.clip(sigmoid(logit), PRED_EPS, 1.0 - PRED_EPS)

    def predict_grid(self, batch: Batch) -> np.ndarray:
        """Probabilities for every (brand, day) cell, shape (n, B, T)."""
        p = self.params
        u = self._day_inputs(batch.counts, batch.prices)
        hf, hb, _, _ = self._hidden_states(u)
        z = np.concatenate([hf, hb], axis=2)
        q = self._user_head(batch.features)
        logits = z @ p["out_w"] + (q @ p["out_u"])[:, None, :] + p["out_b"]
        return np.clip(sigmoid(logits), PRED_EPS, 1.0 - PRED_EPS).transpose(0, 2, 1)

    def log_likelihood(self, batch: Batch) -> float:
        return bernoulli_ll(self.predict_grid(batch), batch.labels)

    def loss_and_grad(
        self, batch: Batch, keep_prob: float = 1.0, rng: np.random.Generator | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Negative log-likelihood over the whole (brand, day) label grid and
        its gradient w.r.t. every parameter."""
        p = self.params
        n, T, _ = batch.counts.shape
        H = self.hidden
        u = self._day_inputs(batch.counts, batch.prices)
        hf, hb, cf, cb = self._hidden_states(u, want_cache=True)
        z = np.concatenate([hf, hb], axis=2)
        q = self._user_head(batch.features)

        if keep_prob < 1.0:
            if rng is None:
                raise ValueError("dropout needs an rng")
            mask_z = (rng.random((n, 1, 2 * H)) < keep_prob) / keep_prob
            mask_q = (rng.random((n, self.user_hidden)) < keep_prob) / keep_prob
        else:
            mask_z = np.ones((n, 1, 2 * H))
            mask_q = np.ones((n, self.user_hidden))
        z_eff = z * mask_z
        q_eff = q * mask_q

        logits = z_eff @ p["out_w"] + (q_eff @ p["out_u"])[:, None, :] + p["out_b"]  # (n, T, B)
        y = np.asarray(batch.labels, dtype=np.float64).transpose(0, 2, 1)
        loss = stable_nll(logits, y)

        dlogit = sigmoid(logits) - y
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["out_b"][:] = dlogit.sum(axis=(0, 1))
        grads["out_w"][:] = np.einsum("ntz,ntb->zb", z_eff, dlogit)
        dl_sum_t = dlogit.sum(axis=1)
        grads["out_u"][:] = q_eff.T @ dl_sum_t

        dz = (dlogit @ p["out_w"].T) * mask_z
        dq = (dl_sum_t @ p["out_u"].T) * mask_q
        dq_pre = dq * (1.0 - q * q)
        grads["user_w"][:] = batch.features.T @ dq_pre
        grads["user_b"][:] = dq_pre.sum(axis=0)

        dwx, dwh, db = lstm_backward(dz[:, :, :H], u, cf, p["fw_wx"], p["fw_wh"], reverse=False)
        grads["fw_wx"][:] = dwx
        grads["fw_wh"][:] = dwh
        grads["fw_b"][:] = db
        dwx, dwh, db = lstm_backward(dz[:, :, H:], u, cb, p["bw_wx"], p["bw_wh"], reverse=True)
        grads["bw_wx"][:] = dwx
        grads["bw_wh"][:] = dwh
        grads["bw_b"][:] = db
        return loss, grads

    # -- checkpointing ----------------------------------------------------

    def meta(self) -> dict:
        return {
            "dims": {"brands": self.dims.brands, "positions": self.dims.positions, "days": self.dims.days},
            "n_features": self.n_features,
            "hidden": self.hidden,
            "user_hidden": self.user_hidden,
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "BiRecurrentModel":
        d = meta["dims"]
        return cls(
            Dims(d["brands"], d["positions"], d["days"]),
            meta["n_features"],
            hidden=meta["hidden"],
            user_hidden=meta["user_hidden"],
            seed=meta.get("seed", 0),
        )
