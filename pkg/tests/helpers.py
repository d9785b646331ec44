"""Independent oracles and synthetic models shared across the test suite.

Everything here deliberately avoids the library's Shapley kernels: the
brute-force oracle walks raw permutations through the public predict/mask
path, AUC is an explicit rank-sum, and gradients are central finite
differences.
"""

from __future__ import annotations

import itertools

import numpy as np

from mta.masking import mask
from mta.response.base import PRED_EPS, check_inputs, flatten_params, sigmoid
from mta.response import predict
from mta.shapley import OrderContext


def brute_force_shapley(model, ctx: OrderContext) -> dict:
    """Average marginal contribution over every permutation of the exposure
    tuples (the textbook definition), memoizing sigma per coalition."""
    tuples = ctx.exposure.tuples
    cache: dict[frozenset, float] = {}

    def sigma(coalition) -> float:
        key = frozenset(coalition)
        if key not in cache:
            view = mask(ctx.tensor, ctx.brand, key)
            cache[key] = predict(model, view, ctx.prices, ctx.features, ctx.brand, ctx.day)
        return cache[key]

    credits = {kt: 0.0 for kt in tuples}
    perms = list(itertools.permutations(tuples))
    for phi in perms:
        seen: list = []
        before = sigma(seen)
        for kt in phi:
            seen.append(kt)
            after = sigma(seen)
            credits[kt] += after - before
            before = after
    return {kt: v / len(perms) for kt, v in credits.items()}


def rank_sum_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """AUC via the Mann-Whitney rank sum, with midranks for ties."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both classes for AUC")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def finite_difference_max_rel_err(
    model, batch, n_coords: int, seed: int = 0, h: float = 1e-5
) -> float:
    """Central finite differences on the training loss versus the analytic
    gradient, over randomly chosen parameter coordinates.

    Relative error uses max(|analytic|, |numeric|, 1e-4) in the denominator
    so near-zero gradients are compared absolutely at 1e-4 scale.
    """
    rng = np.random.default_rng(seed)
    _, grads = model.loss_and_grad(batch)
    flat_grad = flatten_params(grads)
    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    coords = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    for c in coords:
        which = int(np.searchsorted(offsets, c, side="right") - 1)
        local = int(c - offsets[which])
        arr = model.params[names[which]]
        idx = np.unravel_index(local, arr.shape)
        keep = arr[idx]
        arr[idx] = keep + h
        up, _ = model.loss_and_grad(batch)
        arr[idx] = keep - h
        down, _ = model.loss_and_grad(batch)
        arr[idx] = keep
        numeric = (up - down) / (2.0 * h)
        analytic = flat_grad[c]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
        worst = max(worst, rel)
    return worst


class WeightedSetModel:
    """Synthetic response: probability depends on which of one brand's
    exposure tuples survive masking, through a smooth non-additive score.

    sigma(S) = logistic(bias + sum_j w_j present_j + curvature * (sum)^2).
    Tuples with equal weights are interchangeable (symmetry); a zero-weight
    tuple is a dummy.
    """

    def __init__(self, dims, brand: int, weights: dict, bias: float = -1.0, curvature: float = 0.35):
        self.dims = dims
        self.brand = brand
        self.weights = dict(weights)
        self.bias = bias
        self.curvature = curvature
        self.n_features = 1

    def predict_batch(self, counts, prices, features, brand, day):
        check_inputs(self, counts, prices, brand, day)
        K = self.dims.positions
        score = np.full(counts.shape[0], self.bias)
        acc = np.zeros(counts.shape[0])
        for (k, t), w in sorted(self.weights.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            present = counts[:, t, self.brand * K + k] > 0
            acc = acc + w * present
        score = score + acc + self.curvature * acc * acc
        return np.clip(sigmoid(score), PRED_EPS, 1.0 - PRED_EPS)


class AdditiveProbModel:
    """Probability-space additive effects: p = base + sum of per-tuple
    effects present after masking. Linear by construction, so the marginal
    value of a coalition is exactly the sum of its members' effects."""

    def __init__(self, dims, brand: int, effects: dict, base: float = 0.2):
        self.dims = dims
        self.brand = brand
        self.effects = dict(effects)
        self.base = base
        self.n_features = 1

    def predict_batch(self, counts, prices, features, brand, day):
        check_inputs(self, counts, prices, brand, day)
        K = self.dims.positions
        p = np.full(counts.shape[0], self.base)
        for (k, t), e in sorted(self.effects.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            p = p + e * (counts[:, t, self.brand * K + k] > 0)
        return np.clip(p, PRED_EPS, 1.0 - PRED_EPS)
