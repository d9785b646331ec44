"""File-format contracts: parsing, validation errors with locations,
canonical round-trips, and warning/strict behavior."""

import numpy as np
import pytest

from mta import ingest
from mta.core import MtaError
from mta.datagen import SynthSpec, generate
from mta.ingest import (
    DatasetManifest,
    DimMismatch,
    DuplicateKey,
    NegativeCount,
    ParseError,
    ValidationError,
    load,
    write,
)


def write_minimal(tmp_path, impressions=None, orders=None, prices=None, users=None,
                  dims=(2, 6, 3), features=1):
    (tmp_path / "impressions.csv").write_text(
        "user_id,brand_id,position_id,day,count\n" + (impressions or "")
    )
    (tmp_path / "orders.csv").write_text("user_id,brand_id,day\n" + (orders or ""))
    if prices is None:
        rows = [
            f"{b},{t},1.0" for b in range(dims[0]) for t in range(dims[2])
        ]
        prices = "\n".join(rows) + "\n"
    (tmp_path / "prices.csv").write_text("brand_id,day,price_index\n" + prices)
    header = ",".join(["user_id"] + [f"f{i}" for i in range(features)])
    (tmp_path / "users.csv").write_text(header + "\n" + (users or ""))
    manifest = {
        "format_version": 1,
        "dims": {"brands": dims[0], "positions": dims[1], "days": dims[2], "features": features},
        "files": {
            "impressions": "impressions.csv",
            "orders": "orders.csv",
            "prices": "prices.csv",
            "users": "users.csv",
        },
    }
    import json

    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path


class TestBasicParsing:
    def test_row_maps_to_tensor_cell(self, tmp_path):
        write_minimal(tmp_path, impressions="7,1,5,2,4\n", users="7,0.5\n")
        ds = load(tmp_path)
        assert ds.user_tensor(7).count(1, 5, 2) == 4
        assert ds.user_features(7).values[0] == 0.5

    def test_empty_orders_is_valid(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,2\n", users="1,0.0\n")
        ds = load(tmp_path)
        assert ds.orders == []
        from mta.datagen import ExposureDecayModel
        from mta.pipeline import AttributionJob, run_attribution

        result = run_attribution(
            AttributionJob(dataset=ds, model=ExposureDecayModel(ds.dims, 1, 0.5))
        )
        assert result.report.rows == {} and result.summary["orders"] == 0

    def test_duplicate_key_names_line(self, tmp_path):
        write_minimal(
            tmp_path,
            impressions="1,0,0,0,2\n2,0,1,1,3\n1,0,0,0,5\n",
            users="1,0.0\n",
        )
        with pytest.raises(DuplicateKey, match=r"impressions\.csv:4"):
            load(tmp_path)

    def test_zero_count_rows_are_dropped(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,0\n", users="1,0.0\n")
        assert len(load(tmp_path).impressions) == 0

    def test_shuffled_rows_identical_state(self, tmp_path, rng):
        data = generate(SynthSpec(users=60, brands=2, positions=4, days=3, seed=5))
        d1 = tmp_path / "sorted"
        write(data.dataset, d1)
        lines = (d1 / "impressions.csv").read_text().strip().split("\n")
        header, rows = lines[0], lines[1:]
        for trial in range(3):
            rng.shuffle(rows)
            (d1 / "impressions.csv").write_text("\n".join([header] + rows) + "\n")
            ds = load(d1)
            ref = data.dataset
            assert np.array_equal(ds.impressions.count, ref.impressions.count)
            assert np.array_equal(ds.impressions.user_row, ref.impressions.user_row)


class TestErrors:
    def test_parse_error_reports_line(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,2\nnope,0,0,1,2\n", users="1,0.0\n")
        with pytest.raises(ParseError) as exc:
            load(tmp_path)
        assert exc.value.line == 3 and "impressions.csv" in exc.value.path

    def test_bad_header(self, tmp_path):
        write_minimal(tmp_path, users="1,0.0\n")
        (tmp_path / "impressions.csv").write_text("user,brand,pos,day,count\n")
        with pytest.raises(ParseError, match="bad header"):
            load(tmp_path)

    def test_wrong_field_count(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0\n", users="1,0.0\n")
        with pytest.raises(ParseError, match="5 fields"):
            load(tmp_path)

    def test_negative_count(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,-3\n", users="1,0.0\n")
        with pytest.raises(NegativeCount):
            load(tmp_path)

    def test_count_overflow(self, tmp_path):
        write_minimal(tmp_path, impressions=f"1,0,0,0,{2**32}\n", users="1,0.0\n")
        with pytest.raises(ParseError, match="uint32"):
            load(tmp_path)

    def test_out_of_range_ids(self, tmp_path):
        write_minimal(tmp_path, impressions="1,9,0,0,2\n", users="1,0.0\n")
        with pytest.raises(DimMismatch):
            load(tmp_path)

    def test_order_day_out_of_range(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,1\n", orders="1,0,99\n", users="1,0.0\n")
        with pytest.raises(DimMismatch):
            load(tmp_path)

    def test_feature_width_mismatch(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,1\n", users="1,0.0,9.0\n")
        with pytest.raises(DimMismatch, match="features"):
            load(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MtaError, match="manifest"):
            load(tmp_path)

    def test_missing_file(self, tmp_path):
        write_minimal(tmp_path, impressions="1,0,0,0,1\n", users="1,0.0\n")
        (tmp_path / "orders.csv").unlink()
        with pytest.raises(MtaError, match="missing data file"):
            load(tmp_path)


class TestWarningsAndStrict:
    def test_missing_prices_default_to_brand_mean(self, tmp_path, caplog):
        prices = "0,0,2.0\n0,1,4.0\n"  # brand 1 fully missing; brand 0 missing day 2
        write_minimal(tmp_path, impressions="1,0,0,0,1\n", prices=prices, users="1,0.0\n")
        with caplog.at_level("WARNING"):
            ds = load(tmp_path)
        assert "missing price cells" in caplog.text
        assert ds.prices.values[0, 2] == pytest.approx(3.0)  # brand 0 mean
        assert np.all(ds.prices.values[1] == pytest.approx(3.0))  # overall mean

    def test_missing_user_rows_default_to_zero(self, tmp_path, caplog):
        write_minimal(tmp_path, impressions="5,0,0,0,1\n", users="")
        with caplog.at_level("WARNING"):
            ds = load(tmp_path)
        assert "missing from users.csv" in caplog.text
        assert np.all(ds.user_features(5).values == 0.0)

    def test_strict_upgrades_warnings(self, tmp_path):
        write_minimal(tmp_path, impressions="5,0,0,0,1\n", users="")
        with pytest.raises(ValidationError):
            load(tmp_path, strict=True)

    def test_overshooting_dims_warn(self, tmp_path, caplog):
        write_minimal(tmp_path, impressions="1,0,0,0,1\n", users="1,0.0\n", dims=(2, 6, 3))
        with caplog.at_level("WARNING"):
            load(tmp_path)
        assert "max observed position_id" in caplog.text


class TestRoundTrip:
    def test_write_load_write_is_stable(self, tmp_path):
        data = generate(SynthSpec(users=120, brands=2, positions=4, days=4, seed=9))
        d1, d2 = tmp_path / "one", tmp_path / "two"
        write(data.dataset, d1)
        ds = load(d1)
        write(ds, d2)
        for f in sorted(p.name for p in d1.iterdir()):
            assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f

    def test_eager_loading_matches_lazy(self, tmp_path):
        data = generate(SynthSpec(users=40, brands=2, positions=3, days=3, seed=4))
        d = tmp_path / "ds"
        write(data.dataset, d)
        lazy = load(d)
        eager = load(d, eager=True)
        for u in lazy.user_ids[:10]:
            assert lazy.user_tensor(int(u)) == eager.user_tensor(int(u))

    def test_manifest_read(self, tmp_path):
        data = generate(SynthSpec(users=30, brands=2, positions=3, days=3, seed=4))
        d = tmp_path / "ds"
        write(data.dataset, d)
        m = DatasetManifest.read(d)
        assert m.dims == data.dataset.dims
        assert m.n_features == data.dataset.n_features
