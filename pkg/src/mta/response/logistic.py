"""Flexible logistic response model.

For a target (brand, day) the feature map is:

  - own-brand impressions per (position, day-lag bucket), log1p of the
    bucket sum; lag buckets are [0,1), [1,2), [2,4), [4,8), [8,inf) under
    the default edges
  - competitor impression totals per lag bucket, log1p
  - every brand's price index on the prediction day
  - the user feature vector

with a per-brand weight vector and intercept. The model is trained for the
single day it will be evaluated at (the attribution day by default); the
recurrent model owns the all-days objective.
"""

from __future__ import annotations

import numpy as np

from ..core import Dims
from .base import Batch, ShapeMismatch, bernoulli_ll, check_inputs, sigmoid, stable_nll, PRED_EPS
from .init import init_parameters


class LogisticModel:
    kind = "logistic"

    def __init__(
        self,
        dims: Dims,
        n_features: int,
        lag_edges: tuple[int, ...] = (1, 2, 4, 8),
        target_day: int | None = None,
        seed: int = 0,
    ):
        self.dims = dims
        self.n_features = n_features
        self.lag_edges = tuple(lag_edges)
        self.n_buckets = len(self.lag_edges) + 1
        self.target_day = dims.days - 1 if target_day is None else target_day
        self.seed = seed
        F = dims.positions * self.n_buckets + self.n_buckets + dims.brands + n_features
        self.n_weights = F
        self.params = init_parameters(
            [("weights", (dims.brands, F), "normal"), ("intercept", (dims.brands,), "zeros")],
            seed,
        )

    def _bucket_matrix(self, day: int) -> np.ndarray:
        """(day+1, n_buckets) 0/1 matrix mapping exposure day to lag bucket."""
        lags = day - np.arange(day + 1)
        bidx = np.digitize(lags, self.lag_edges)
        m = np.zeros((day + 1, self.n_buckets), dtype=np.float64)
        m[np.arange(day + 1), bidx] = 1.0
        return m

    def features_for(
        self, counts: np.ndarray, prices: np.ndarray, features: np.ndarray, brand: int, day: int
    ) -> np.ndarray:
        """Build the (n, F) design matrix for one brand and day."""
        n = counts.shape[0]
        B, K = self.dims.brands, self.dims.positions
        c = counts[:, : day + 1].reshape(n, day + 1, B, K)
        own = c[:, :, brand, :]
        m = self._bucket_matrix(day)
        own_buckets = np.log1p(np.einsum("ntk,tj->nkj", own, m)).reshape(n, K * self.n_buckets)
        comp_daily = c.sum(axis=(2, 3)) - own.sum(axis=2)
        comp_buckets = np.log1p(comp_daily @ m)
        price_day = np.broadcast_to(prices[:, day], (n, B))
        return np.concatenate([own_buckets, comp_buckets, price_day, features], axis=1)

    def predict_batch(
        self, counts: np.ndarray, prices: np.ndarray, features: np.ndarray, brand: int, day: int
    ) -> np.ndarray:
        check_inputs(self, counts, prices, brand, day)
        if features.shape[1] != self.n_features:
            raise ShapeMismatch(f"features have {features.shape[1]} columns, model expects {self.n_features}")
        phi = self.features_for(counts, prices, features, brand, day)
        logit = phi @ self.params["weights"][brand] + self.params["intercept"][brand]
        return np.clip(sigmoid(logit), PRED_EPS, 1.0 - PRED_EPS)

    def _design(self, batch: Batch) -> np.ndarray:
        """(n, B, F) design stacked over brands at the target day."""
        phis = [
            self.features_for(batch.counts, batch.prices, batch.features, b, self.target_day)
            for b in range(self.dims.brands)
        ]
        return np.stack(phis, axis=1)

    def log_likelihood(self, batch: Batch) -> float:
        phi = self._design(batch)
        logits = np.einsum("nbf,bf->nb", phi, self.params["weights"]) + self.params["intercept"]
        probs = np.clip(sigmoid(logits), PRED_EPS, 1.0 - PRED_EPS)
        return bernoulli_ll(probs, batch.labels[:, :, self.target_day])

    def loss_and_grad(
        self, batch: Batch, keep_prob: float = 1.0, rng: np.random.Generator | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Negative log-likelihood at the target day and its gradient.

        keep_prob/rng are accepted for trainer uniformity; the linear model
        has no dropout.
        """
        phi = self._design(batch)
        logits = np.einsum("nbf,bf->nb", phi, self.params["weights"]) + self.params["intercept"]
        y = np.asarray(batch.labels[:, :, self.target_day], dtype=np.float64)
        loss = stable_nll(logits, y)
        dz = sigmoid(logits) - y
        grads = {
            "weights": np.einsum("nbf,nb->bf", phi, dz),
            "intercept": dz.sum(axis=0),
        }
        return loss, grads

    def own_position_weights(self) -> np.ndarray:
        """(B, K) total weight on each own position, summed over lag buckets.

        This is the aggregate a synthetic ground truth's per-position effects
        are compared against.
        """
        K, nb = self.dims.positions, self.n_buckets
        w = self.params["weights"][:, : K * nb].reshape(self.dims.brands, K, nb)
        return w.sum(axis=2)

    def meta(self) -> dict:
        return {
            "dims": {"brands": self.dims.brands, "positions": self.dims.positions, "days": self.dims.days},
            "n_features": self.n_features,
            "lag_edges": list(self.lag_edges),
            "target_day": self.target_day,
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "LogisticModel":
        d = meta["dims"]
        return cls(
            Dims(d["brands"], d["positions"], d["days"]),
            meta["n_features"],
            lag_edges=tuple(meta["lag_edges"]),
            target_day=meta["target_day"],
            seed=meta.get("seed", 0),
        )
