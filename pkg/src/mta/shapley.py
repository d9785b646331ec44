"""Per-order Shapley credit over ad-position-day exposure tuples.

Three computation strategies share one memoized coalition evaluator:

  - exact: one pass over the power set, accumulating each coalition's
    predicted probability with coefficient +(|N|-|S|)!(|S|-1)!/|N|! when the
    tuple is a member and -(|N|-|S|-1)!|S|!/|N|! when it is not
  - approximate: uniform random permutations; each tuple is credited the
    change in predicted probability when appended to its predecessors
  - mixed: exact below a cardinality cutoff, permutation sampling above it

Raw credits are rescaled by delta/SA afterwards so the allocation sums to
the order's incremental probability even under sampling noise; for the exact
method this factor is asserted to be 1 up to float error.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    Dataset,
    ExposureSet,
    ImpressionTensor,
    MtaError,
    Order,
    PriceSeries,
    TupleCredit,
    TupleKey,
    UserFeatures,
    exposure_set,
)
from .masking import mask
from .response.base import as_feature_matrix, as_price_array, build_counts, predict

EVAL_CHUNK = 1024
_LITTLE_ENDIAN = sys.byteorder == "little"


class CoalitionOverflow(MtaError):
    """The exact method would need more coalition evaluations than budgeted."""


class DegenerateAllocation(MtaError):
    """Raw credits sum to zero while the order's incremental probability does
    not; there is no way to distribute it proportionally."""


@dataclass(frozen=True)
class ShapleyConfig:
    """Strategy knobs: exact below the cutoff, Monte Carlo above it."""

    exact_cutoff: int = 12
    mc_permutations: int = 1000
    seed: int = 0
    max_exact_evals: int = 1 << 20

    def __post_init__(self) -> None:
        if self.exact_cutoff < 1:
            raise ValueError("exact_cutoff must be >= 1")
        if self.mc_permutations < 1:
            raise ValueError("mc_permutations must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if (1 << self.exact_cutoff) > self.max_exact_evals:
            raise ValueError("exact_cutoff exceeds the coalition evaluation budget")


@dataclass(frozen=True)
class OrderContext:
    """Everything the kernels need about one order: the user's exposure
    window, shared prices/features, the focal brand and attribution day, and
    the exposure tuples eligible for credit (those on or before the day)."""

    tensor: ImpressionTensor
    prices: PriceSeries
    features: UserFeatures
    brand: int
    day: int
    exposure: ExposureSet

    @classmethod
    def build(cls, tensor: ImpressionTensor, prices: PriceSeries, features: UserFeatures,
              brand: int, day: int) -> "OrderContext":
        return cls(tensor, prices, features, brand, day,
                   exposure_set(tensor, brand, max_day=day))

    @classmethod
    def for_order(cls, dataset: Dataset, order: Order) -> "OrderContext":
        tensor = dataset.user_tensor(order.user_id)
        return cls.build(tensor, dataset.prices, dataset.user_features(order.user_id),
                         order.brand_id, order.day)


@dataclass
class OrderAttribution:
    """One order's allocation: per-tuple credits, their per-position sums,
    and the incrementality bookkeeping used for normalization and reporting."""

    tuple_credits: TupleCredit
    position_credits: dict[int, float]
    delta: float
    method_used: str  # "exact" | "approximate"
    sa_raw: float
    sigma_full: float
    sigma_empty: float
    mc_stderr: dict[TupleKey, float] | None = None


def order_rng(global_seed: int, user_id: int, brand_id: int, day: int) -> np.random.Generator:
    """Per-order generator independent of scheduling order."""
    ss = np.random.SeedSequence([global_seed, user_id, brand_id, day])
    return np.random.default_rng(ss)


class CoalitionEvaluator:
    """Memoized predicted probability per coalition of one order's tuples.

    Coalitions are bitmasks over the canonical tuple ordering. Evaluation is
    batched: a model may supply a specialized ``coalition_evaluator(ctx)``
    hook; otherwise masked count arrays are materialized in chunks and fed
    through ``predict_batch``.
    """

    def __init__(self, model, ctx: OrderContext, chunk: int = EVAL_CHUNK):
        self.tuples = ctx.exposure.tuples
        self.n = len(self.tuples)
        self.chunk = chunk
        self._cache: dict[int, float] = {}
        self.evals = 0
        hook = getattr(model, "coalition_evaluator", None)
        if hook is not None:
            self._eval_members = hook(ctx)
        else:
            self._eval_members = self._generic_evaluator(model, ctx)

    def _generic_evaluator(self, model, ctx: OrderContext):
        dims = ctx.tensor.dims
        base0 = build_counts([mask(ctx.tensor, ctx.brand, frozenset())], dims)[0]
        trow = np.array([t for _, t in self.tuples], dtype=np.intp)
        tcol = np.array([ctx.brand * dims.positions + k for k, _ in self.tuples], dtype=np.intp)
        cval = np.array([ctx.tensor.count(ctx.brand, k, t) for k, t in self.tuples], dtype=np.float64)
        prices = as_price_array(ctx.prices)

        def evaluate(members: np.ndarray) -> np.ndarray:
            out = np.empty(len(members), dtype=np.float64)
            for lo in range(0, len(members), self.chunk):
                mem = members[lo : lo + self.chunk]
                arr = np.repeat(base0[None], len(mem), axis=0)
                if self.n:
                    arr[:, trow, tcol] = mem * cval
                feats = as_feature_matrix(ctx.features, len(mem))
                out[lo : lo + len(mem)] = model.predict_batch(arr, prices, feats, ctx.brand, ctx.day)
            return out

        return evaluate

    def _members_of(self, masks: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros((len(masks), 0))
        if _LITTLE_ENDIAN:
            raw = np.ascontiguousarray(masks, dtype=np.int64).view(np.uint8)
            raw = raw.reshape(-1, 8)[:, : (self.n + 7) // 8]
            bits = np.unpackbits(raw, axis=1, bitorder="little")[:, : self.n]
            return bits.astype(np.float64)
        return ((masks[:, None] >> np.arange(self.n)) & 1).astype(np.float64)

    def evaluate_masks(self, masks: np.ndarray, members: np.ndarray | None = None) -> np.ndarray:
        """Evaluate the given bitmasks directly (no dedup against the cache)
        and remember the full and empty coalitions for later lookups."""
        vals = self._eval_members(self._members_of(masks) if members is None else members)
        self.evals += len(masks)
        for special in (0, (1 << self.n) - 1):
            hit = np.flatnonzero(masks == special)
            if len(hit):
                self._cache[special] = float(vals[hit[0]])
        return vals

    def get_many(self, masks) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.int64)
        missing = sorted({int(m) for m in masks} - self._cache.keys())
        if missing:
            arr = np.asarray(missing, dtype=np.int64)
            vals = self._eval_members(self._members_of(arr))
            self.evals += len(missing)
            self._cache.update(zip(missing, (float(v) for v in vals)))
        return np.array([self._cache[int(m)] for m in masks], dtype=np.float64)

    def get(self, mask_int: int) -> float:
        return float(self.get_many([mask_int])[0])


def marginal_value(model, ctx: OrderContext, coalition) -> float:
    """w(S): incremental predicted probability of coalition S over the
    zero-exposure counterfactual. Exactly zero for the empty coalition."""
    coalition = frozenset(coalition)
    extra = coalition - set(ctx.exposure.tuples)
    if extra:
        raise ValueError(f"coalition tuples outside the exposure set: {sorted(extra)}")
    if not coalition:
        return 0.0
    p_s = predict(model, mask(ctx.tensor, ctx.brand, coalition), ctx.prices, ctx.features, ctx.brand, ctx.day)
    p_0 = predict(model, mask(ctx.tensor, ctx.brand, frozenset()), ctx.prices, ctx.features, ctx.brand, ctx.day)
    return p_s - p_0


def _exact_credits(ev: CoalitionEvaluator) -> np.ndarray:
    """One power-set pass; returns pre-normalization credits per tuple.

    credit_j = sum_{S: j in S} coef_in(|S|) sigma(S) - sum_{S: j not in S}
    coef_out(|S|) sigma(S), folded into a single membership-matrix product:
    M.T @ (a + b) - sum(b) with a = coef_in sigma and b = coef_out sigma.
    """
    n = ev.n
    masks = np.arange(1 << n, dtype=np.int64)
    members = ev._members_of(masks)
    probs = ev.evaluate_masks(masks, members=members)
    sizes = members.sum(axis=1).astype(np.intp)
    fact = [math.factorial(i) for i in range(n + 1)]
    coef_in = np.zeros(n + 1)
    coef_out = np.zeros(n + 1)
    for s in range(1, n + 1):
        coef_in[s] = float(Fraction(fact[n - s] * fact[s - 1], fact[n]))
    for s in range(0, n):
        coef_out[s] = float(Fraction(fact[n - s - 1] * fact[s], fact[n]))
    a = coef_in[sizes] * probs
    b = coef_out[sizes] * probs
    return members.T @ (a + b) - b.sum()


def _mc_credits(ev: CoalitionEvaluator, m: int, rng: np.random.Generator):
    """Permutation sampling; returns (credits, standard errors) per tuple.

    Each permutation's marginal contributions come from consecutive prefix
    coalitions, so only the distinct prefixes (deduplicated by bitmask) are
    evaluated; the per-tuple accumulation is a vectorized scatter-add.
    """
    n = ev.n
    perms = rng.permuted(np.broadcast_to(np.arange(n), (m, n)), axis=1)
    bits = np.int64(1) << np.arange(n, dtype=np.int64)
    prefix_masks = np.zeros((m, n + 1), dtype=np.int64)
    for step in range(n):
        prefix_masks[:, step + 1] = prefix_masks[:, step] | bits[perms[:, step]]
    uniq, inv = np.unique(prefix_masks.reshape(-1), return_inverse=True)
    vals = ev.evaluate_masks(uniq)
    probs = vals[inv].reshape(m, n + 1)
    diffs = probs[:, 1:] - probs[:, :-1]
    sums = np.zeros(n)
    sumsq = np.zeros(n)
    np.add.at(sums, perms.reshape(-1), diffs.reshape(-1))
    np.add.at(sumsq, perms.reshape(-1), (diffs * diffs).reshape(-1))
    credits = sums / m
    variance = np.maximum(sumsq / m - credits**2, 0.0)
    stderr = np.sqrt(variance / m)
    return credits, stderr


def shapley_exact(model, ctx: OrderContext, budget: int = 1 << 20) -> TupleCredit:
    """Exact tuple credits (pre-normalization) by power-set enumeration."""
    n = ctx.exposure.cardinality
    if (1 << n) > budget:
        raise CoalitionOverflow(f"|N|={n} needs 2^{n} evaluations, budget is {budget}")
    ev = CoalitionEvaluator(model, ctx)
    credits = _exact_credits(ev)
    return {kt: float(c) for kt, c in zip(ctx.exposure.tuples, credits)}


def shapley_mc(model, ctx: OrderContext, m: int, seed_or_rng=0, return_stderr: bool = False):
    """Monte Carlo tuple credits (pre-normalization) from m permutations.

    With ``return_stderr=True`` also returns each tuple's empirical standard
    error of the permutation-mean estimate.
    """
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    ev = CoalitionEvaluator(model, ctx)
    credits, stderr = _mc_credits(ev, m, rng)
    out = {kt: float(c) for kt, c in zip(ctx.exposure.tuples, credits)}
    if return_stderr:
        return out, {kt: float(s) for kt, s in zip(ctx.exposure.tuples, stderr)}
    return out


def attribute_order(
    model,
    ctx: OrderContext,
    config: ShapleyConfig,
    rng: np.random.Generator | None = None,
) -> OrderAttribution:
    """Full per-order allocation: strategy selection, delta/SA normalization,
    and per-position aggregation.

    Orders with an empty exposure set yield an empty attribution with delta
    recorded. A zero raw sum with nonzero delta cannot be distributed and
    raises :class:`DegenerateAllocation`.
    """
    n = ctx.exposure.cardinality
    if n == 0:
        return OrderAttribution({}, {}, 0.0, "exact", 0.0, 0.0, 0.0)

    ev = CoalitionEvaluator(model, ctx)
    full = (1 << n) - 1
    if n <= config.exact_cutoff:
        if (1 << n) > config.max_exact_evals:
            raise CoalitionOverflow(f"|N|={n} exceeds evaluation budget {config.max_exact_evals}")
        raw = _exact_credits(ev)
        stderr = None
        method = "exact"
    else:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        raw, stderr = _mc_credits(ev, config.mc_permutations, rng)
        method = "approximate"

    sigma_full = ev.get(full)
    sigma_empty = ev.get(0)
    delta = sigma_full - sigma_empty
    sa_raw = float(np.sum(raw))

    if sa_raw == 0.0:
        if delta == 0.0:
            final = np.zeros(n)
            scale = 1.0
        else:
            raise DegenerateAllocation(f"raw credit sum is 0 but delta={delta!r}")
    else:
        scale = delta / sa_raw
        if method == "exact":
            assert abs(scale - 1.0) <= 1e-6, f"exact branch drifted: delta/SA = {scale!r}"
        final = raw * scale

    tuple_credits = {kt: float(c) for kt, c in zip(ctx.exposure.tuples, final)}
    position_credits: dict[int, float] = {}
    for (k, _), c in zip(ctx.exposure.tuples, final):
        position_credits[k] = position_credits.get(k, 0.0) + float(c)

    return OrderAttribution(
        tuple_credits=tuple_credits,
        position_credits=position_credits,
        delta=float(delta),
        method_used=method,
        sa_raw=sa_raw,
        sigma_full=float(sigma_full),
        sigma_empty=float(sigma_empty),
        mc_stderr=None if stderr is None else
        {kt: float(s * abs(scale)) for kt, s in zip(ctx.exposure.tuples, stderr)},
    )
