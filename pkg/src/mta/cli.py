"""Command-line entry point: synth | train | attribute | bench | report.

Exit codes: 0 success, 1 usage error, 2 data/model error. Logs go to
stderr; artifacts go to the --out target. Every subcommand is reproducible
under a fixed seed (timing fields in summaries excluded).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import datagen, ingest, pipeline
from .core import MtaError
from .pipeline import AttributionJob, OrderOutcome
from .response import (
    BiRecurrentModel,
    LogisticModel,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .shapley import ShapleyConfig

log = logging.getLogger("mta")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for data
    errors, so remap usage problems to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="mta", description="Incrementality-based multi-touch attribution engine")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", parents=[], help="generate a synthetic dataset with stored ground truth")
    sp.add_argument("--users", type=int, required=True)
    sp.add_argument("--brands", type=int, required=True)
    sp.add_argument("--positions", type=int, required=True)
    sp.add_argument("--days", type=int, required=True)
    sp.add_argument("--features", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--decay", type=float, default=0.6)
    sp.add_argument("--ad-effect", type=float, default=1.0)
    sp.add_argument("--negative-effect-fraction", type=float, default=0.0)
    sp.add_argument("--competitor-effect", type=float, default=-0.15)
    sp.add_argument("--price-effect", type=float, default=-0.5)
    sp.add_argument("--affinity-effect", type=float, default=0.8)
    sp.add_argument("--base-rate", type=float, default=0.02)
    sp.add_argument("--exposure-rate", type=float, default=6.0)
    sp.add_argument("--targeting-bias", type=float, default=0.0)
    sp.add_argument("--click-rate", type=float, default=0.1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_synth)

    tp = sub.add_parser("train", help="fit a response model on a dataset")
    tp.add_argument("--data", required=True)
    tp.add_argument("--model-kind", choices=["logistic", "birnn"], default="birnn")
    tp.add_argument("--steps", type=int, default=1000)
    tp.add_argument("--batch-size", type=int, default=256)
    tp.add_argument("--lr", type=float, default=1e-2)
    tp.add_argument("--hidden", type=int, default=32)
    tp.add_argument("--user-hidden", type=int, default=16)
    tp.add_argument("--keep-prob", type=float, default=0.75)
    tp.add_argument("--val-fraction", type=float, default=0.1)
    tp.add_argument("--patience", type=int, default=10)
    tp.add_argument("--eval-every", type=int, default=25)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--strict", action="store_true", help="treat ingest warnings as errors")
    tp.add_argument("--out", required=True, help="checkpoint path (.npz)")
    tp.set_defaults(func=_cmd_train)

    ap = sub.add_parser("attribute", help="run Shapley attribution for one day's orders")
    ap.add_argument("--data", required=True)
    ap.add_argument("--model", required=True, help="model checkpoint (.npz) or ground_truth.json")
    ap.add_argument("--day", type=int, default=None, help="attribution day (default: last)")
    ap.add_argument("--exact-cutoff", type=int, default=12)
    ap.add_argument("--mc-samples", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--strict", action="store_true")
    ap.add_argument("--out", required=True)
    ap.set_defaults(func=_cmd_attribute)

    bp = sub.add_parser("bench", help="compare exact/approximate/mixed strategies")
    bp.add_argument("--data", required=True)
    bp.add_argument("--model", required=True)
    bp.add_argument("--method", choices=["exact", "mc", "mixed", "all"], default="all")
    bp.add_argument("--day", type=int, default=None)
    bp.add_argument("--orders", type=int, default=6000)
    bp.add_argument("--reps", type=int, default=5)
    bp.add_argument("--exact-cutoff", type=int, default=12)
    bp.add_argument("--mc-samples", type=int, default=1000)
    bp.add_argument("--max-tuples", type=int, default=18)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--workers", type=int, default=1)
    bp.add_argument("--out", default=None)
    bp.set_defaults(func=_cmd_bench)

    rp = sub.add_parser("report", help="emit plot-ready CSVs from an attribution run")
    rp.add_argument("--attribution", required=True, help="directory written by `attribute`")
    rp.add_argument("--data", default=None, help="dataset dir (enables the last-click comparison)")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=_cmd_report)
    return p


def _cmd_synth(args) -> int:
    spec = datagen.SynthSpec(
        users=args.users,
        brands=args.brands,
        positions=args.positions,
        days=args.days,
        features=args.features,
        decay=args.decay,
        ad_effect=args.ad_effect,
        negative_effect_fraction=args.negative_effect_fraction,
        competitor_effect=args.competitor_effect,
        price_effect=args.price_effect,
        affinity_effect=args.affinity_effect,
        base_rate=args.base_rate,
        exposure_rate=args.exposure_rate,
        targeting_bias=args.targeting_bias,
        click_rate=args.click_rate,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    data = datagen.generate(spec)
    ingest.write(data.dataset, args.out)
    datagen.write_ground_truth(data.truth, Path(args.out) / "ground_truth.json")
    log.info(
        "generated %d users, %d impressions rows, %d orders in %.1fs -> %s",
        data.dataset.n_users, len(data.dataset.impressions), len(data.dataset.orders),
        time.perf_counter() - t0, args.out,
    )
    return 0


def _load_model(path: str):
    p = Path(path)
    if not p.exists():
        raise MtaError(f"model file not found: {p}")
    if p.suffix == ".json":
        return datagen.load_ground_truth(p)
    return load_checkpoint(p)


def _cmd_train(args) -> int:
    dataset = ingest.load(args.data, strict=args.strict)
    if args.model_kind == "logistic":
        model = LogisticModel(dataset.dims, dataset.n_features, seed=args.seed)
    else:
        model = BiRecurrentModel(
            dataset.dims, dataset.n_features,
            hidden=args.hidden, user_hidden=args.user_hidden, seed=args.seed,
        )
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_steps=args.steps,
        keep_prob=args.keep_prob,
        validation_fraction=args.val_fraction,
        patience=args.patience,
        eval_every=args.eval_every,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    model, tlog = train(model, dataset, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    log_doc = {
        "train_steps": tlog.train_steps,
        "train_loss": tlog.train_loss,
        "val_steps": tlog.val_steps,
        "val_loss": tlog.val_loss,
        "best_step": tlog.best_step,
        "best_val_loss": tlog.best_val_loss,
        "stopped_early": tlog.stopped_early,
    }
    out.with_suffix(out.suffix + ".log.json").write_text(json.dumps(log_doc, indent=1))
    log.info("trained %s in %.1fs; best val loss %s at step %s -> %s",
             args.model_kind, time.perf_counter() - t0, tlog.best_val_loss, tlog.best_step, out)
    return 0


def _cmd_attribute(args) -> int:
    dataset = ingest.load(args.data, strict=args.strict)
    model = _load_model(args.model)
    job = AttributionJob(
        dataset=dataset,
        model=model,
        config=ShapleyConfig(args.exact_cutoff, args.mc_samples, args.seed),
        day=args.day,
        workers=args.workers,
        out_dir=Path(args.out),
    )
    result = pipeline.run_attribution(job)
    log.info(
        "attributed %d orders (%d skipped) on day %d -> %s",
        result.summary["orders"], result.summary["skipped_orders"], result.summary["day"], args.out,
    )
    return 0


def _cmd_bench(args) -> int:
    dataset = ingest.load(args.data)
    model = _load_model(args.model)
    methods = ("exact", "mc", "mixed") if args.method == "all" else (args.method,)
    budget = max(1 << 20, 1 << args.max_tuples)
    results = pipeline.bench(
        dataset,
        model,
        methods=methods,
        day=args.day,
        n_orders=args.orders,
        reps=args.reps,
        config=ShapleyConfig(args.exact_cutoff, args.mc_samples, args.seed, budget),
        workers=args.workers,
        max_tuples=args.max_tuples,
    )
    rows = [
        {
            "method": r.method,
            "orders_per_minute": r.orders_per_minute,
            "err": r.err,
            "err_total": r.err_total,
            "n_orders": r.n_orders,
            "reps": r.reps,
            "frac_above_cutoff": r.frac_above_cutoff,
        }
        for r in results
    ]
    for r in rows:
        print(f"{r['method']:>6}: {r['orders_per_minute']:.1f} orders/min, err={r['err']:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(rows, indent=1))
        with (out / "bench.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    return 0


def _read_outcomes(att_dir: Path) -> list[OrderOutcome]:
    orders_path = att_dir / "orders.csv"
    tuples_path = att_dir / "tuple_credits.csv"
    if not orders_path.exists() or not tuples_path.exists():
        raise MtaError(f"not an attribution output directory: {att_dir}")
    credits: dict[int, dict[tuple[int, int], float]] = {}
    with tuples_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["order_index"])
            credits.setdefault(idx, {})[(int(row["position_id"]), int(row["exposure_day"]))] = float(
                row["credit"]
            )
    outcomes = []
    with orders_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["order_index"])
            tup = credits.get(idx, {})
            pos: dict[int, float] = {}
            for (k, _), c in sorted(tup.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                pos[k] = pos.get(k, 0.0) + c
            outcomes.append(
                OrderOutcome(
                    index=idx,
                    user_id=int(row["user_id"]),
                    brand_id=int(row["brand_id"]),
                    day=int(row["day"]),
                    n_tuples=int(row["n_tuples"]),
                    method=row["method"],
                    delta=float(row["delta"]),
                    sa_raw=float(row["sa_raw"]),
                    sigma_full=float(row["sigma_full"]),
                    sigma_empty=float(row["sigma_empty"]),
                    tuple_credits=tup,
                    position_credits=pos,
                    skipped=bool(int(row["skipped"])),
                )
            )
    return outcomes


def _cmd_report(args) -> int:
    outcomes = _read_outcomes(Path(args.attribution))
    dataset = ingest.load(args.data) if args.data else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_plot_data(out, outcomes, dataset)
    log.info("wrote plot data for %d orders -> %s", len(outcomes), out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MtaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
