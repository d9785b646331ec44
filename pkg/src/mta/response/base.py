"""Response-model plumbing shared by every model class.

A response model maps one user's full exposure window to purchase
probabilities. The uniform calling convention is raw per-day impression
counts shaped ``(n, T, B*K)`` (day-major rows, brand-major then position
columns) plus the shared price matrix ``(B, T)`` and user features; each
model applies its own feature transform internally. That keeps masked
counterfactual evaluation identical across model families.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import Dims, MtaError, PriceSeries, UserFeatures

PRED_EPS = 1e-12


class ShapeMismatch(MtaError):
    """Input dimensions disagree with the model's."""


@dataclass
class Batch:
    """One training/evaluation batch.

    counts: (n, T, B*K) raw impression counts.
    prices: (B, T) shared price indices.
    features: (n, R) user characteristics.
    labels: (n, B, T) 0/1 purchase indicators.
    """

    counts: np.ndarray
    prices: np.ndarray
    features: np.ndarray
    labels: np.ndarray


def as_price_array(prices) -> np.ndarray:
    return prices.values if isinstance(prices, PriceSeries) else np.asarray(prices, dtype=np.float64)


def as_feature_matrix(features, n: int) -> np.ndarray:
    """Accept a single user's vector or an (n, R) matrix; broadcast the former."""
    v = features.values if isinstance(features, UserFeatures) else np.asarray(features, dtype=np.float64)
    if v.ndim == 1:
        return np.broadcast_to(v, (n, v.shape[0]))
    if v.shape[0] != n:
        raise ShapeMismatch(f"feature rows {v.shape[0]} != batch size {n}")
    return v


def build_counts(views: Sequence, dims: Dims) -> np.ndarray:
    """Assemble (n, T, B*K) raw count arrays from tensors or masked views.

    Cells are written in each view's canonical iteration order, so repeated
    builds are bitwise identical.
    """
    n = len(views)
    out = np.zeros((n, dims.days, dims.brands * dims.positions), dtype=np.float64)
    for i, view in enumerate(views):
        if view.dims != dims:
            raise ShapeMismatch(f"view dims {view.dims} != expected {dims}")
        for (b, k, t), c in view.items():
            out[i, t, b * dims.positions + k] = c
    return out


def check_inputs(model, counts: np.ndarray, prices: np.ndarray, brand: int, day: int) -> None:
    dims: Dims = model.dims
    if counts.ndim != 3 or counts.shape[2] != dims.brands * dims.positions:
        raise ShapeMismatch(
            f"counts shape {counts.shape} incompatible with B*K={dims.brands * dims.positions}"
        )
    if counts.shape[1] != dims.days:
        raise ShapeMismatch(f"counts have {counts.shape[1]} days, model expects {dims.days}")
    if prices.shape != (dims.brands, dims.days):
        raise ShapeMismatch(f"prices shape {prices.shape} != {(dims.brands, dims.days)}")
    if not (0 <= brand < dims.brands):
        raise ShapeMismatch(f"brand {brand} out of range")
    if not (0 <= day < dims.days):
        raise ShapeMismatch(f"day {day} out of range")


def predict(model, tensor, prices, features, brand: int, day: int) -> float:
    """Predicted purchase probability for (brand, day) from one exposure window.

    ``tensor`` may be a plain :class:`ImpressionTensor` or a lazy
    :class:`MaskedView`; both produce bitwise-identical inputs. Pure: never
    mutates model parameters.
    """
    counts = build_counts([tensor], model.dims)
    p = as_price_array(prices)
    f = as_feature_matrix(features, 1)
    check_inputs(model, counts, p, brand, day)
    return float(model.predict_batch(counts, p, f, brand, day)[0])


def log_likelihood(model, batch: Batch) -> float:
    """Bernoulli log-likelihood of the batch labels under the model.

    Predictions are clamped to [eps, 1-eps] with eps=1e-12 before the logs, so
    the result is always finite.
    """
    return float(model.log_likelihood(batch))


def bernoulli_ll(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, PRED_EPS, 1.0 - PRED_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def stable_nll(logits: np.ndarray, labels: np.ndarray) -> float:
    """Negative Bernoulli log-likelihood from logits, overflow-safe."""
    y = np.asarray(labels, dtype=np.float64)
    # -[y log sigma(z) + (1-y) log(1-sigma(z))] = y*softplus(-z) + (1-y)*softplus(z)
    return float(np.sum(y * np.logaddexp(0.0, -logits) + (1.0 - y) * np.logaddexp(0.0, logits)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in params])


def assign_flat(params: dict[str, np.ndarray], flat: np.ndarray) -> None:
    i = 0
    for k in params:
        size = params[k].size
        params[k][...] = flat[i : i + size].reshape(params[k].shape)
        i += size
    if i != flat.size:
        raise ShapeMismatch(f"flat vector size {flat.size} != parameter count {i}")
