"""End-to-end command-line behavior: exit codes, artifacts, reproducibility."""

import csv
import json
from pathlib import Path

import pytest

from mta.cli import main
from mta.ingest import load


def run(*argv):
    return main(list(argv))


SYNTH = [
    "synth", "--users", "400", "--brands", "2", "--positions", "4", "--days", "5",
    "--seed", "1", "--base-rate", "0.05", "--exposure-rate", "4.0",
]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    assert run(*SYNTH, "--out", str(data_dir)) == 0
    return root, data_dir


class TestSynth:
    def test_writes_loadable_dataset_and_truth(self, world):
        _, data_dir = world
        ds = load(data_dir)
        assert ds.n_users == 400 and len(ds.orders) > 0
        assert (data_dir / "ground_truth.json").exists()

    def test_reproducible_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(*SYNTH, "--out", str(a)) == 0
        assert run(*SYNTH, "--out", str(b)) == 0
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes()


class TestAttribute:
    def test_smoke_and_schema(self, world):
        root, data_dir = world
        out = root / "att"
        code = run(
            "attribute", "--data", str(data_dir), "--model", str(data_dir / "ground_truth.json"),
            "--exact-cutoff", "8", "--mc-samples", "50", "--seed", "3", "--workers", "1",
            "--out", str(out),
        )
        assert code == 0
        with (out / "report.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) == {"brand_id", "position_id", "sa", "psi", "order_count"}
        by_brand = {}
        for r in rows:
            by_brand.setdefault(r["brand_id"], 0.0)
            by_brand[r["brand_id"]] += float(r["psi"])
        for total in by_brand.values():
            assert abs(total - 1.0) <= 1e-9
        summary = json.loads((out / "summary.json").read_text())
        assert summary["orders"] > 0
        for name in ("orders.csv", "tuple_credits.csv", "delta_ratio_hist.csv", "shapley_ecdf.csv", "last_click.csv"):
            assert (out / name).exists(), name

    def test_reproducible_report(self, world, tmp_path):
        _, data_dir = world
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            assert run(
                "attribute", "--data", str(data_dir), "--model",
                str(data_dir / "ground_truth.json"), "--seed", "5", "--out", str(out),
            ) == 0
            outs.append(out)
        assert (outs[0] / "report.csv").read_bytes() == (outs[1] / "report.csv").read_bytes()

    def test_missing_model_exits_2(self, world, capsys):
        root, data_dir = world
        code = run(
            "attribute", "--data", str(data_dir), "--model", str(root / "missing.npz"),
            "--out", str(root / "x"),
        )
        assert code == 2
        assert "missing.npz" in capsys.readouterr().err


class TestTrainAndBench:
    def test_train_writes_checkpoint(self, world):
        root, data_dir = world
        ckpt = root / "model.npz"
        code = run(
            "train", "--data", str(data_dir), "--model-kind", "logistic",
            "--steps", "40", "--batch-size", "64", "--lr", "0.05", "--seed", "2",
            "--out", str(ckpt),
        )
        assert code == 0 and ckpt.exists()
        from mta.response import load_checkpoint

        model = load_checkpoint(ckpt)
        assert model.kind == "logistic"
        assert Path(str(ckpt) + ".log.json").exists()

    def test_train_reproducible_checkpoint_bytes(self, world, tmp_path):
        _, data_dir = world
        paths = []
        for sub in ("m1.npz", "m2.npz"):
            ckpt = tmp_path / sub
            assert run(
                "train", "--data", str(data_dir), "--model-kind", "logistic",
                "--steps", "30", "--batch-size", "64", "--seed", "6", "--out", str(ckpt),
            ) == 0
            paths.append(ckpt)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_bench_deterministic_err(self, world, tmp_path):
        _, data_dir = world
        errs = []
        for sub in ("b1", "b2"):
            out = tmp_path / sub
            code = run(
                "bench", "--data", str(data_dir), "--model", str(data_dir / "ground_truth.json"),
                "--method", "all", "--orders", "25", "--reps", "1", "--exact-cutoff", "4",
                "--mc-samples", "30", "--max-tuples", "9", "--seed", "4", "--out", str(out),
            )
            assert code == 0
            rows = json.loads((out / "bench.json").read_text())
            errs.append({r["method"]: r["err"] for r in rows})
        assert errs[0] == errs[1]
        assert errs[0]["exact"] == 0.0


class TestReport:
    def test_emits_plot_csvs(self, world, tmp_path):
        root, data_dir = world
        att = root / "att"
        out = tmp_path / "plots"
        code = run("report", "--attribution", str(att), "--data", str(data_dir), "--out", str(out))
        assert code == 0
        for name in ("delta_ratio_hist.csv", "shapley_ecdf.csv", "last_click.csv"):
            assert (out / name).exists()
        ecdf = (out / "shapley_ecdf.csv").read_text().strip().split("\n")
        assert ecdf[0] == "credit,cdf" and len(ecdf) > 1
        assert (out / "shapley_ecdf.csv").read_bytes() == (att / "shapley_ecdf.csv").read_bytes()

    def test_rejects_non_attribution_dir(self, tmp_path, capsys):
        assert run("report", "--attribution", str(tmp_path), "--out", str(tmp_path / "o")) == 2


class TestUsage:
    def test_help_exits_zero(self, capsys):
        assert run("--help") == 0
        assert "attribute" in capsys.readouterr().out

    def test_unknown_flag_exits_one(self, capsys):
        assert run("synth", "--frobnicate", "3") == 1

    def test_unknown_command_exits_one(self):
        assert run("transmogrify") == 1

    def test_missing_required_flag_exits_one(self):
        assert run("attribute", "--data", "x") == 1
