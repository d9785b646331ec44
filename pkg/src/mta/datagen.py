"""Synthetic dataset generation with a stored ground-truth response function.

The ground truth is an exposure-decay logistic: each (brand, position) keeps
a decayed stock of impressions, and purchase probability is a logistic in
log1p of those stocks, a competitor stock cross-effect, the day's own price,
and user features. It is simple, differentiable, monotone in own exposure
when the per-position weights are positive, and exhibits intensity, timing
and competition patterns, so trained models have signal to find and every
attribution result can be checked against a known function.

A targeting-bias knob makes high-affinity users receive more impressions;
the affinity driver is user feature 0, so models with a feature head can
control for the selection it induces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .core import Dataset, Dims, ImpressionLog, Order, PriceSeries
from .response.base import PRED_EPS, check_inputs, sigmoid
from .shapley import OrderContext

SHARD_USERS = 5000


class ExposureDecayModel:
    """Ground-truth response family: logistic over decayed exposure stocks.

    stock_{bk}(day) = sum_{t<=day} decay^(day-t) * counts_{bkt}; the logit for
    brand b is intercept + beta_b . log1p(own stocks) + gamma_b * log1p(total
    competitor stock) + price_w_b * price_{b,day} + theta_b . user_features.
    """

    kind = "decay"

    def __init__(self, dims: Dims, n_features: int, decay: float):
        if not (0.0 < decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")
        self.dims = dims
        self.n_features = n_features
        self.decay = decay
        B, K, R = dims.brands, dims.positions, n_features
        self.params: dict[str, np.ndarray] = {
            "beta": np.zeros((B, K)),
            "gamma": np.zeros(B),
            "price_w": np.zeros(B),
            "theta": np.zeros((B, R)),
            "intercept": np.zeros(B),
        }

    def _decay_weights(self, day: int) -> np.ndarray:
        return self.decay ** (day - np.arange(day + 1))

    def predict_batch(
        self, counts: np.ndarray, prices: np.ndarray, features: np.ndarray, brand: int, day: int
    ) -> np.ndarray:
        check_inputs(self, counts, prices, brand, day)
        n = counts.shape[0]
        B, K = self.dims.brands, self.dims.positions
        p = self.params
        w = self._decay_weights(day)
        c = counts[:, : day + 1].reshape(n, day + 1, B, K)
        stocks = np.einsum("t,ntbk->nbk", w, c)
        own = stocks[:, brand, :]
        comp = stocks.sum(axis=(1, 2)) - own.sum(axis=1)
        logit = (
            p["intercept"][brand]
            + np.log1p(own) @ p["beta"][brand]
            + p["gamma"][brand] * np.log1p(comp)
            + p["price_w"][brand] * prices[brand, day]
            + features @ p["theta"][brand]
        )
        return np.clip(sigmoid(logit), PRED_EPS, 1.0 - PRED_EPS)

    def coalition_evaluator(self, ctx: OrderContext):
        """Fast path for Shapley kernels: own stocks rebuilt per coalition
        from per-tuple decayed contributions; everything else is constant."""
        p = self.params
        b, day = ctx.brand, ctx.day
        tuples = ctx.exposure.tuples
        K = self.dims.positions
        sel = np.zeros((len(tuples), K))
        for j, (k, t) in enumerate(tuples):
            sel[j, k] = self.decay ** (day - t) * ctx.tensor.count(b, k, t)
        comp = 0.0
        for (b2, k, t), c in ctx.tensor.items():
            if b2 != b and t <= day:
                comp += self.decay ** (day - t) * c
        fixed = (
            p["intercept"][b]
            + p["gamma"][b] * np.log1p(comp)
            + p["price_w"][b] * ctx.prices.values[b, day]
            + float(ctx.features.values @ p["theta"][b])
        )
        beta_b = p["beta"][b]

        def evaluate(members: np.ndarray) -> np.ndarray:
            own = members @ sel
            logit = fixed + np.log1p(own) @ beta_b
            return np.clip(sigmoid(logit), PRED_EPS, 1.0 - PRED_EPS)

        return evaluate

    def meta(self) -> dict:
        return {
            "dims": {"brands": self.dims.brands, "positions": self.dims.positions, "days": self.dims.days},
            "n_features": self.n_features,
            "decay": self.decay,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "ExposureDecayModel":
        d = meta["dims"]
        return cls(Dims(d["brands"], d["positions"], d["days"]), meta["n_features"], meta["decay"])


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the generator. Generation is deterministic under the seed;
    user shards derive independent child seeds so shard boundaries never
    change the data."""

    users: int
    brands: int
    positions: int
    days: int
    features: int = 4
    model_kind: str = "decay"
    decay: float = 0.6
    ad_effect: float = 1.0
    negative_effect_fraction: float = 0.0
    competitor_effect: float = -0.15
    price_effect: float = -0.5
    affinity_effect: float = 0.8
    base_rate: float = 0.02
    exposure_rate: float = 6.0
    targeting_bias: float = 0.0
    click_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.users, self.brands, self.positions, self.days, self.features) < 1:
            raise ValueError("all dims must be >= 1")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")
        if not (0.0 < self.base_rate < 1.0):
            raise ValueError("base_rate must be in (0, 1)")
        if not (0.0 <= self.negative_effect_fraction <= 1.0):
            raise ValueError("negative_effect_fraction must be in [0, 1]")
        if self.model_kind != "decay":
            raise ValueError(f"unknown ground-truth kind {self.model_kind!r}")


@dataclass
class SynthData:
    dataset: Dataset
    model: ExposureDecayModel
    truth: dict


def _truth_model(spec: SynthSpec, rng: np.random.Generator) -> ExposureDecayModel:
    B, K, R = spec.brands, spec.positions, spec.features
    model = ExposureDecayModel(Dims(B, K, spec.days), R, spec.decay)
    p = model.params
    p["beta"][:] = spec.ad_effect * rng.uniform(0.2, 1.0, size=(B, K))
    if spec.negative_effect_fraction > 0:
        flip = rng.random(size=(B, K)) < spec.negative_effect_fraction
        p["beta"][flip] *= -1.0
    p["gamma"][:] = spec.competitor_effect * rng.uniform(0.5, 1.5, size=B)
    p["price_w"][:] = spec.price_effect * rng.uniform(0.5, 1.5, size=B)
    theta = rng.normal(0.0, 0.2, size=(B, R))
    theta[:, 0] = spec.affinity_effect * rng.uniform(0.75, 1.25, size=B)
    p["theta"][:] = theta
    p["intercept"][:] = np.log(spec.base_rate / (1.0 - spec.base_rate))
    return model


def generate(spec: SynthSpec) -> SynthData:
    """Draw impressions, prices, features, labels and clicks for the spec.

    Impressions are user-affinity-biased Poisson; labels are Bernoulli draws
    from the ground-truth response at every (brand, day); clicks are binomial
    thinnings of impressions.
    """
    root = np.random.SeedSequence(spec.seed)
    ss_params, ss_prices, ss_shards = root.spawn(3)
    B, K, T, R, N = spec.brands, spec.positions, spec.days, spec.features, spec.users

    model = _truth_model(spec, np.random.default_rng(ss_params))

    rng_p = np.random.default_rng(ss_prices)
    start = rng_p.uniform(0.8, 1.2, size=(B, 1))
    walk = np.cumsum(rng_p.normal(0.0, 0.03, size=(B, T)), axis=1)
    prices = PriceSeries(np.clip(start + walk, 0.05, None))

    brand_pop = np.random.default_rng(ss_params.spawn(1)[0]).uniform(0.5, 1.5, size=B)
    pos_weight = 1.0 / (1.0 + np.arange(K)) ** 0.7
    pos_weight /= pos_weight.sum()
    cell_rate = spec.exposure_rate * brand_pop[:, None, None] * pos_weight[None, :, None] / T
    cell_rate = np.broadcast_to(cell_rate, (B, K, T))

    n_shards = (N + SHARD_USERS - 1) // SHARD_USERS
    shard_seeds = ss_shards.spawn(n_shards)

    feats_all = np.empty((N, R))
    col_u, col_b, col_k, col_t, col_c = [], [], [], [], []
    clk_u, clk_b, clk_k, clk_t, clk_c = [], [], [], [], []
    orders: list[Order] = []

    beta, gamma = model.params["beta"], model.params["gamma"]
    price_w, theta, icept = model.params["price_w"], model.params["theta"], model.params["intercept"]

    for shard in range(n_shards):
        rng = np.random.default_rng(shard_seeds[shard])
        lo = shard * SHARD_USERS
        hi = min(lo + SHARD_USERS, N)
        n = hi - lo

        feats = rng.normal(0.0, 1.0, size=(n, R))
        feats_all[lo:hi] = feats
        mult = np.exp(spec.targeting_bias * feats[:, 0])

        x = np.empty((B, n, K, T), dtype=np.int32)
        for b in range(B):
            lam = mult[:, None, None] * cell_rate[b][None]
            x[b] = rng.poisson(lam)
            uu, kk, tt = np.nonzero(x[b])
            col_u.append(uu + lo)
            col_b.append(np.full(len(uu), b))
            col_k.append(kk)
            col_t.append(tt)
            col_c.append(x[b][uu, kk, tt].astype(np.int64))
            if spec.click_rate > 0:
                clicks = rng.binomial(x[b][uu, kk, tt], spec.click_rate)
                got = clicks > 0
                clk_u.append(uu[got] + lo)
                clk_b.append(np.full(int(got.sum()), b))
                clk_k.append(kk[got])
                clk_t.append(tt[got])
                clk_c.append(clicks[got].astype(np.int64))

        # Labels: walk the days once, updating decayed stocks in place.
        stocks = np.zeros((B, n, K))
        user_term = feats @ theta.T  # (n, B)
        for t in range(T):
            stocks *= spec.decay
            stocks += x[:, :, :, t]
            stock_totals = stocks.sum(axis=2)  # (B, n)
            all_total = stock_totals.sum(axis=0)
            for b in range(B):
                logit = (
                    icept[b]
                    + np.log1p(stocks[b]) @ beta[b]
                    + gamma[b] * np.log1p(all_total - stock_totals[b])
                    + price_w[b] * prices.values[b, t]
                    + user_term[:, b]
                )
                probs = np.clip(sigmoid(logit), PRED_EPS, 1.0 - PRED_EPS)
                hits = np.flatnonzero(rng.random(n) < probs)
                orders.extend(Order(int(u + lo), b, t) for u in hits)

    def _log(us, bs, ks, ts, cs) -> ImpressionLog:
        cat = lambda parts: np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        return ImpressionLog(N, cat(us), cat(bs), cat(ks), cat(ts), cat(cs))

    dataset = Dataset(
        dims=Dims(B, K, T),
        n_features=R,
        user_ids=np.arange(N, dtype=np.int64),
        impressions=_log(col_u, col_b, col_k, col_t, col_c),
        prices=prices,
        features=feats_all,
        orders=orders,
        clicks=_log(clk_u, clk_b, clk_k, clk_t, clk_c) if spec.click_rate > 0 else None,
    )

    truth = {
        "kind": model.kind,
        "meta": model.meta(),
        "params": {k: v.tolist() for k, v in model.params.items()},
        "spec": asdict(spec),
    }
    return SynthData(dataset=dataset, model=model, truth=truth)


def write_ground_truth(truth: dict, path) -> None:
    Path(path).write_text(json.dumps(truth, indent=1, sort_keys=True))


def load_ground_truth(path) -> ExposureDecayModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "decay":
        raise ValueError(f"unsupported ground-truth kind {doc.get('kind')!r}")
    model = ExposureDecayModel.from_meta(doc["meta"])
    for k, v in doc["params"].items():
        model.params[k][...] = np.asarray(v, dtype=np.float64)
    return model
