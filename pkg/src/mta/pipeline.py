"""Order-level map/reduce attribution over one day's orders.

The map phase attributes each order independently (per-order RNG derived
from the global seed and the order identity, so scheduling never changes a
result); the reduce phase sums position credits per (brand, position) with
compensated accumulation. Reports are therefore bitwise identical across
worker counts. A single-machine fork pool stands in for a cluster map/reduce
with the same functional split.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AttributionReport, Dataset, Order, PositionCredit
from .shapley import (
    DegenerateAllocation,
    OrderContext,
    ShapleyConfig,
    attribute_order,
    order_rng,
)

log = logging.getLogger(__name__)

REPORT_HEADER = ["brand_id", "position_id", "sa", "psi", "order_count"]
ORDER_DETAIL_HEADER = [
    "order_index", "user_id", "brand_id", "day", "n_tuples", "method", "delta",
    "sa_raw", "sigma_full", "sigma_empty", "skipped",
]
TUPLE_DETAIL_HEADER = ["order_index", "brand_id", "position_id", "exposure_day", "credit"]


class KahanSum:
    """Compensated accumulator; summation error stays O(eps) regardless of
    the number of terms, which makes merge order immaterial to ~1e-12."""

    __slots__ = ("value", "_c")

    def __init__(self) -> None:
        self.value = 0.0
        self._c = 0.0

    def add(self, x: float) -> None:
        y = x - self._c
        t = self.value + y
        self._c = (t - self.value) - y
        self.value = t


@dataclass
class AttributionJob:
    dataset: Dataset
    model: object
    config: ShapleyConfig = field(default_factory=ShapleyConfig)
    day: int | None = None  # defaults to the dataset's last day
    workers: int = 1
    out_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class OrderOutcome:
    """One order's map output, kept flat for pickling and CSV emission."""

    index: int
    user_id: int
    brand_id: int
    day: int
    n_tuples: int
    method: str
    delta: float
    sa_raw: float
    sigma_full: float
    sigma_empty: float
    tuple_credits: dict[tuple[int, int], float]
    position_credits: dict[int, float]
    skipped: bool = False


@dataclass
class RunResult:
    report: AttributionReport
    outcomes: list[OrderOutcome]
    summary: dict


def _attribute_one(index: int, order: Order, dataset: Dataset, model, config: ShapleyConfig) -> OrderOutcome:
    ctx = OrderContext.for_order(dataset, order)
    rng = order_rng(config.seed, order.user_id, order.brand_id, order.day)
    try:
        att = attribute_order(model, ctx, config, rng=rng)
    except DegenerateAllocation:
        return OrderOutcome(
            index, order.user_id, order.brand_id, order.day, ctx.exposure.cardinality,
            "skipped", 0.0, 0.0, 0.0, 0.0, {}, {}, skipped=True,
        )
    return OrderOutcome(
        index, order.user_id, order.brand_id, order.day, ctx.exposure.cardinality,
        att.method_used, att.delta, att.sa_raw, att.sigma_full, att.sigma_empty,
        att.tuple_credits, att.position_credits,
    )


_FORK_STATE: tuple[Dataset, object, ShapleyConfig] | None = None


def _map_chunk(chunk: list[tuple[int, Order]]) -> list[OrderOutcome]:
    dataset, model, config = _FORK_STATE
    return [_attribute_one(i, o, dataset, model, config) for i, o in chunk]


def _run_map(orders: list[Order], dataset: Dataset, model, config: ShapleyConfig, workers: int) -> list[OrderOutcome]:
    indexed = list(enumerate(orders))
    if workers <= 1 or len(indexed) < 2 * workers:
        outcomes = [_attribute_one(i, o, dataset, model, config) for i, o in indexed]
    else:
        global _FORK_STATE
        _FORK_STATE = (dataset, model, config)
        try:
            splits = np.array_split(np.arange(len(indexed)), workers * 4)
            chunks = [[indexed[int(i)] for i in sp] for sp in splits if len(sp)]
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                parts = list(pool.map(_map_chunk, chunks))
        finally:
            _FORK_STATE = None
        outcomes = [r for part in parts for r in part]
    outcomes.sort(key=lambda r: r.index)
    return outcomes


def _reduce(outcomes: list[OrderOutcome], day: int) -> tuple[AttributionReport, dict]:
    """Compensated per-(brand, position) sums, then per-brand proportions."""
    sums: dict[tuple[int, int], KahanSum] = {}
    brand_orders: dict[int, int] = {}
    delta_total = KahanSum()
    skipped = 0
    for r in outcomes:
        if r.skipped:
            skipped += 1
            continue
        brand_orders[r.brand_id] = brand_orders.get(r.brand_id, 0) + 1
        delta_total.add(r.delta)
        for k, c in sorted(r.position_credits.items()):
            sums.setdefault((r.brand_id, k), KahanSum()).add(c)

    report = AttributionReport(day=day, skipped_orders=skipped)
    report.brand_orders = dict(sorted(brand_orders.items()))
    sa_total = KahanSum()
    for b in sorted({bk[0] for bk in sums}):
        keys = sorted(bk for bk in sums if bk[0] == b)
        brand_sum = KahanSum()
        for bk in keys:
            brand_sum.add(sums[bk].value)
            sa_total.add(sums[bk].value)
        defined = brand_sum.value != 0.0
        report.psi_defined[b] = defined
        for bk in keys:
            sa = sums[bk].value
            psi = sa / brand_sum.value if defined else 0.0
            report.rows[bk] = PositionCredit(sa=sa, psi=psi)

    summary = {
        "day": day,
        "orders": len(outcomes),
        "attributed_orders": len(outcomes) - skipped,
        "skipped_orders": skipped,
        "sa_total": sa_total.value,
        "delta_total": delta_total.value,
        "conservation_gap": sa_total.value - delta_total.value,
        "brands": {
            str(b): {
                "orders": report.brand_orders.get(b, 0),
                "sa_total": report.brand_total(b),
                "psi_defined": report.psi_defined.get(b, False),
            }
            for b in report.brands()
        },
    }
    return report, summary


def run_attribution(job: AttributionJob) -> RunResult:
    """Attribute every order on the job's day and aggregate per brand.

    Per-order degenerate allocations are logged and skipped with a counter;
    the job itself fails only on I/O or model errors.
    """
    day = job.dataset.dims.days - 1 if job.day is None else job.day
    orders = sorted(job.dataset.orders_on(day), key=lambda o: (o.user_id, o.brand_id))
    t0 = time.perf_counter()
    outcomes = _run_map(orders, job.dataset, job.model, job.config, job.workers)
    elapsed = time.perf_counter() - t0
    report, summary = _reduce(outcomes, day)
    if report.skipped_orders:
        log.warning("skipped %d degenerate orders", report.skipped_orders)
    summary["timing_seconds"] = elapsed
    summary["workers"] = job.workers
    summary["config"] = {
        "exact_cutoff": job.config.exact_cutoff,
        "mc_permutations": job.config.mc_permutations,
        "seed": job.config.seed,
    }
    result = RunResult(report=report, outcomes=outcomes, summary=summary)
    if job.out_dir is not None:
        write_outputs(job.out_dir, result, job.dataset)
    return result


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------


def write_outputs(out_dir, result: RunResult, dataset: Dataset | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with (out / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for (b, k), pc in sorted(result.report.rows.items()):
            w.writerow([b, k, repr(pc.sa), repr(pc.psi), result.report.brand_orders.get(b, 0)])

    (out / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True))

    with (out / "orders.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORDER_DETAIL_HEADER)
        for r in result.outcomes:
            w.writerow([
                r.index, r.user_id, r.brand_id, r.day, r.n_tuples, r.method, repr(r.delta),
                repr(r.sa_raw), repr(r.sigma_full), repr(r.sigma_empty), int(r.skipped),
            ])

    with (out / "tuple_credits.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TUPLE_DETAIL_HEADER)
        for r in result.outcomes:
            for (k, t), c in sorted(r.tuple_credits.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                w.writerow([r.index, r.brand_id, k, t, repr(c)])

    write_plot_data(out, result.outcomes, dataset)


def write_plot_data(out_dir, outcomes: list[OrderOutcome], dataset: Dataset | None = None) -> None:
    """Plot-ready CSVs: the incremental-share histogram, the eCDF of tuple
    credits, and (when click data exists) mean credit per last-clicked
    position."""
    out = Path(out_dir)
    live = [r for r in outcomes if not r.skipped]

    ratios = [r.delta / r.sigma_full for r in live if r.sigma_full > 0.0]
    with (out / "delta_ratio_hist.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        if ratios:
            counts, edges = np.histogram(np.asarray(ratios), bins=20)
            for i, c in enumerate(counts):
                w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])

    credits = np.sort(np.array([c for r in live for c in r.tuple_credits.values()]))
    with (out / "shapley_ecdf.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["credit", "cdf"])
        n = len(credits)
        for i, c in enumerate(credits):
            w.writerow([repr(float(c)), repr((i + 1) / n)])

    if dataset is not None and dataset.clicks is not None:
        _write_last_click(out, live, dataset)


def _last_clicked_position(dataset: Dataset, user_id: int, brand_id: int, day: int) -> int | None:
    """Latest clicked (day, position) for the order's brand at or before the
    attribution day; ties on day break to the higher position id."""
    clicks = dataset.clicks
    sl = clicks.user_slice(dataset.user_row(user_id))
    best: tuple[int, int] | None = None
    for b, k, t in zip(clicks.brand[sl], clicks.position[sl], clicks.day[sl]):
        if b == brand_id and t <= day:
            cand = (int(t), int(k))
            if best is None or cand > best:
                best = cand
    return None if best is None else best[1]


def _write_last_click(out: Path, live: list[OrderOutcome], dataset: Dataset) -> None:
    per_position: dict[int, list[tuple[float, float]]] = {}
    for r in live:
        k = _last_clicked_position(dataset, r.user_id, r.brand_id, r.day)
        if k is None:
            continue
        credit = r.position_credits.get(k, 0.0)
        share = credit / r.delta if r.delta != 0.0 else 0.0
        per_position.setdefault(k, []).append((credit, share))
    with (out / "last_click.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position_id", "mean_credit", "mean_share", "order_count"])
        for k in sorted(per_position):
            vals = per_position[k]
            w.writerow([
                k,
                repr(sum(v[0] for v in vals) / len(vals)),
                repr(sum(v[1] for v in vals) / len(vals)),
                len(vals),
            ])


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchResult:
    """One strategy's benchmark row.

    ``err`` is the RMSE of per-tuple raw credits against the exact strategy,
    the quantity that actually differs under sampling. ``err_total`` is the
    root mean squared difference of each order's total attributed value; the
    permutation estimator's totals telescope to the exact incremental
    probability, so this stays at float-noise level for every strategy and is
    reported as a sanity value, not a discriminator.
    """

    method: str
    orders_per_minute: float
    err: float
    err_total: float
    n_orders: int
    reps: int
    frac_above_cutoff: float


def bench(
    dataset: Dataset,
    model,
    methods: tuple[str, ...] = ("exact", "mc", "mixed"),
    day: int | None = None,
    n_orders: int = 6000,
    reps: int = 5,
    config: ShapleyConfig = ShapleyConfig(),
    workers: int = 1,
    max_tuples: int = 18,
) -> list[BenchResult]:
    """Throughput and approximation error per strategy on a fixed order set.

    err is the root mean squared difference in each order's raw attributed
    total against the exact strategy; timings average over ``reps``
    repetitions. Orders are capped at ``max_tuples`` exposure tuples so the
    exact baseline stays enumerable.
    """
    day = dataset.dims.days - 1 if day is None else day
    candidates = sorted(dataset.orders_on(day), key=lambda o: (o.user_id, o.brand_id))
    picked: list[Order] = []
    above = 0
    for o in candidates:
        n = OrderContext.for_order(dataset, o).exposure.cardinality
        if 1 <= n <= max_tuples:
            picked.append(o)
            above += n > config.exact_cutoff
            if len(picked) == n_orders:
                break
    if not picked:
        raise ValueError("no benchable orders on the requested day")
    frac_above = above / len(picked)

    budget = max(config.max_exact_evals, 1 << max_tuples)
    variants = {
        "exact": ShapleyConfig(max_tuples, config.mc_permutations, config.seed, budget),
        "mc": ShapleyConfig(1, config.mc_permutations, config.seed, budget),
        "mixed": ShapleyConfig(config.exact_cutoff, config.mc_permutations, config.seed, budget),
    }
    unknown = set(methods) - set(variants)
    if unknown:
        raise ValueError(f"unknown bench methods: {sorted(unknown)}")
    if "exact" not in methods:
        methods = ("exact",) + tuple(methods)

    sa_by_method: dict[str, np.ndarray] = {}
    credits_by_method: dict[str, np.ndarray] = {}
    minutes: dict[str, list[float]] = {m: [] for m in methods}
    for method in methods:
        cfg = variants[method]
        for _ in range(reps):
            t0 = time.perf_counter()
            outcomes = _run_map(picked, dataset, model, cfg, workers)
            minutes[method].append((time.perf_counter() - t0) / 60.0)
        sa_by_method[method] = np.array([r.sa_raw for r in outcomes])
        credits_by_method[method] = np.concatenate(
            [
                np.array([r.tuple_credits[kt] for kt in sorted(r.tuple_credits, key=lambda kt: (kt[1], kt[0]))])
                for r in outcomes
            ]
        )

    results = []
    for method in methods:
        tuple_diff = credits_by_method[method] - credits_by_method["exact"]
        total_diff = sa_by_method[method] - sa_by_method["exact"]
        mean_minutes = float(np.mean(minutes[method]))
        results.append(
            BenchResult(
                method=method,
                orders_per_minute=len(picked) / mean_minutes,
                err=float(np.sqrt(np.mean(tuple_diff**2))),
                err_total=float(np.sqrt(np.mean(total_diff**2))),
                n_orders=len(picked),
                reps=reps,
                frac_above_cutoff=frac_above,
            )
        )
    return results
