"""Dataset file formats: headered CSVs plus a JSON manifest.

  impressions.csv  user_id,brand_id,position_id,day,count
  orders.csv       user_id,brand_id,day
  prices.csv       brand_id,day,price_index
  users.csv        user_id,f0..f{R-1}
  clicks.csv       user_id,brand_id,position_id,day,clicks   (optional)

Days are 0-based in files, matching the in-memory convention. The manifest
declares dims; every id is validated against them. Missing price cells fall
back to the brand's mean and missing user rows to zero features, each with a
warning; ``strict=True`` upgrades those warnings to errors.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    MAX_COUNT,
    Dataset,
    Dims,
    ImpressionLog,
    MtaError,
    Order,
    PriceSeries,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

IMPRESSION_HEADER = ["user_id", "brand_id", "position_id", "day", "count"]
ORDER_HEADER = ["user_id", "brand_id", "day"]
PRICE_HEADER = ["brand_id", "day", "price_index"]
CLICK_HEADER = ["user_id", "brand_id", "position_id", "day", "clicks"]


class ParseError(MtaError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class DimMismatch(MtaError):
    pass


class DuplicateKey(MtaError):
    pass


class NegativeCount(MtaError):
    pass


class ValidationError(MtaError):
    """A warning upgraded to an error under --strict."""


@dataclass
class DatasetManifest:
    """Paths and declared dimensions for one dataset directory."""

    root: Path
    dims: Dims
    n_features: int
    files: dict[str, str]
    format_version: int = FORMAT_VERSION

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        manifest_path = path / "manifest.json" if path.is_dir() else path
        if not manifest_path.exists():
            raise MtaError(f"manifest not found: {manifest_path}")
        doc = json.loads(manifest_path.read_text())
        if doc.get("format_version") != FORMAT_VERSION:
            raise MtaError(f"unsupported dataset format version {doc.get('format_version')}")
        d = doc["dims"]
        return cls(
            root=manifest_path.parent,
            dims=Dims(d["brands"], d["positions"], d["days"]),
            n_features=d["features"],
            files=dict(doc["files"]),
        )

    def path(self, key: str) -> Path:
        return self.root / self.files[key]


def _open_rows(path: Path, header: list[str]):
    if not path.exists():
        raise MtaError(f"missing data file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file, expected header") from None
        if got != header:
            raise ParseError(path, 1, f"bad header {got!r}, expected {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, row


def _int_field(path: Path, lineno: int, row: list[str], idx: int, name: str) -> int:
    try:
        return int(row[idx])
    except (ValueError, IndexError):
        raise ParseError(path, lineno, f"bad {name} in row {row!r}") from None


def _check_range(path: Path, lineno: int, value: int, bound: int, name: str) -> None:
    if not (0 <= value < bound):
        raise DimMismatch(f"{path}:{lineno}: {name}={value} outside declared range [0, {bound})")


def _load_exposure_file(path: Path, header: list[str], dims: Dims, value_name: str):
    """Shared reader for impressions and clicks; returns column arrays and
    the line number of each row for duplicate reporting."""
    us, bs, ks, ts, cs, lines = [], [], [], [], [], []
    for lineno, row in _open_rows(path, header):
        if len(row) != 5:
            raise ParseError(path, lineno, f"expected 5 fields, got {len(row)}")
        u = _int_field(path, lineno, row, 0, "user_id")
        b = _int_field(path, lineno, row, 1, "brand_id")
        k = _int_field(path, lineno, row, 2, "position_id")
        t = _int_field(path, lineno, row, 3, "day")
        c = _int_field(path, lineno, row, 4, value_name)
        _check_range(path, lineno, b, dims.brands, "brand_id")
        _check_range(path, lineno, k, dims.positions, "position_id")
        _check_range(path, lineno, t, dims.days, "day")
        if u < 0:
            raise ParseError(path, lineno, f"user_id must be non-negative, got {u}")
        if c < 0:
            raise NegativeCount(f"{path}:{lineno}: {value_name}={c} is negative")
        if c > MAX_COUNT:
            raise ParseError(path, lineno, f"{value_name}={c} exceeds uint32")
        if c == 0:
            continue
        us.append(u)
        bs.append(b)
        ks.append(k)
        ts.append(t)
        cs.append(c)
        lines.append(lineno)
    cols = tuple(np.asarray(x, dtype=np.int64) for x in (us, bs, ks, ts, cs))
    _reject_duplicates(path, cols, np.asarray(lines, dtype=np.int64))
    return cols


def _reject_duplicates(path: Path, cols, lines: np.ndarray) -> None:
    us, bs, ks, ts, _ = cols
    if len(us) < 2:
        return
    order = np.lexsort((ts, ks, bs, us))
    key = np.stack([us[order], bs[order], ks[order], ts[order]])
    dup = np.all(key[:, 1:] == key[:, :-1], axis=0)
    if np.any(dup):
        i = int(np.flatnonzero(dup)[0]) + 1
        raise DuplicateKey(
            f"{path}:{lines[order][i]}: duplicate key user_id={key[0, i]}, "
            f"brand_id={key[1, i]}, position_id={key[2, i]}, day={key[3, i]}"
        )


def load(manifest, strict: bool = False, eager: bool = False) -> Dataset:
    """Load and validate one dataset directory into memory.

    ``manifest`` may be a :class:`DatasetManifest`, a directory, or a
    manifest path. With ``eager=True`` all per-user tensors are prebuilt
    (a memory/speed trade for attribution-heavy runs).
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    dims = manifest.dims
    R = manifest.n_features

    def warn(message: str) -> None:
        if strict:
            raise ValidationError(message)
        log.warning("%s", message)

    imp_cols = _load_exposure_file(manifest.path("impressions"), IMPRESSION_HEADER, dims, "count")

    orders: list[Order] = []
    opath = manifest.path("orders")
    for lineno, row in _open_rows(opath, ORDER_HEADER):
        if len(row) != 3:
            raise ParseError(opath, lineno, f"expected 3 fields, got {len(row)}")
        u = _int_field(opath, lineno, row, 0, "user_id")
        b = _int_field(opath, lineno, row, 1, "brand_id")
        t = _int_field(opath, lineno, row, 2, "day")
        _check_range(opath, lineno, b, dims.brands, "brand_id")
        _check_range(opath, lineno, t, dims.days, "day")
        orders.append(Order(u, b, t))

    ppath = manifest.path("prices")
    price_grid = np.full((dims.brands, dims.days), np.nan)
    for lineno, row in _open_rows(ppath, PRICE_HEADER):
        if len(row) != 3:
            raise ParseError(ppath, lineno, f"expected 3 fields, got {len(row)}")
        b = _int_field(ppath, lineno, row, 0, "brand_id")
        t = _int_field(ppath, lineno, row, 1, "day")
        _check_range(ppath, lineno, b, dims.brands, "brand_id")
        _check_range(ppath, lineno, t, dims.days, "day")
        try:
            v = float(row[2])
        except ValueError:
            raise ParseError(ppath, lineno, f"bad price_index in row {row!r}") from None
        if not np.isfinite(v) or v < 0:
            raise ParseError(ppath, lineno, f"price_index must be finite and non-negative, got {v}")
        if not np.isnan(price_grid[b, t]):
            raise DuplicateKey(f"{ppath}:{lineno}: duplicate price for brand_id={b}, day={t}")
        price_grid[b, t] = v
    missing = np.isnan(price_grid)
    if missing.any():
        warn(f"{int(missing.sum())} missing price cells; defaulting to brand means")
        overall = float(np.nanmean(price_grid)) if not missing.all() else 1.0
        for b in range(dims.brands):
            row_missing = missing[b]
            if row_missing.all():
                price_grid[b] = overall
            elif row_missing.any():
                price_grid[b, row_missing] = np.nanmean(price_grid[b])

    upath = manifest.path("users")
    feature_header = ["user_id"] + [f"f{i}" for i in range(R)]
    declared: dict[int, np.ndarray] = {}
    for lineno, row in _open_rows(upath, feature_header):
        if len(row) != R + 1:
            raise DimMismatch(f"{upath}:{lineno}: expected {R} features, got {len(row) - 1}")
        u = _int_field(upath, lineno, row, 0, "user_id")
        try:
            vals = np.array([float(v) for v in row[1:]], dtype=np.float64)
        except ValueError:
            raise ParseError(upath, lineno, f"bad feature value in row {row!r}") from None
        if not np.all(np.isfinite(vals)):
            raise ParseError(upath, lineno, "user features must be finite")
        if u in declared:
            raise DuplicateKey(f"{upath}:{lineno}: duplicate user_id={u}")
        declared[u] = vals

    clicks_cols = None
    if manifest.files.get("clicks"):
        clicks_cols = _load_exposure_file(manifest.path("clicks"), CLICK_HEADER, dims, "clicks")

    all_ids = set(declared)
    all_ids.update(int(u) for u in imp_cols[0])
    all_ids.update(o.user_id for o in orders)
    if clicks_cols is not None:
        all_ids.update(int(u) for u in clicks_cols[0])
    user_ids = np.array(sorted(all_ids), dtype=np.int64)

    undeclared = len(all_ids) - len(declared.keys() & all_ids)
    if undeclared:
        warn(f"{undeclared} users missing from {upath.name}; defaulting to zero features")

    features = np.zeros((len(user_ids), R))
    row_of = {int(u): i for i, u in enumerate(user_ids)}
    for u, vals in declared.items():
        features[row_of[u]] = vals

    def to_rows(cols) -> ImpressionLog:
        us, bs, ks, ts, cs = cols
        rows = np.array([row_of[int(u)] for u in us], dtype=np.int64)
        return ImpressionLog(len(user_ids), rows, bs, ks, ts, cs)

    _check_declared_extents(manifest, imp_cols, orders, dims, warn)

    dataset = Dataset(
        dims=dims,
        n_features=R,
        user_ids=user_ids,
        impressions=to_rows(imp_cols),
        prices=PriceSeries(price_grid),
        features=features,
        orders=orders,
        clicks=to_rows(clicks_cols) if clicks_cols is not None else None,
    )
    if eager:
        dataset.precompute_tensors()
    return dataset


def _check_declared_extents(manifest, imp_cols, orders, dims: Dims, warn) -> None:
    """Ids beyond the declared dims already raised; here we warn when the
    declared dims overshoot everything observed (likely a manifest typo)."""
    observed_b = [int(imp_cols[1].max())] if len(imp_cols[1]) else []
    observed_b += [o.brand_id for o in orders]
    observed_k = [int(imp_cols[2].max())] if len(imp_cols[2]) else []
    observed_t = [int(imp_cols[3].max())] if len(imp_cols[3]) else []
    observed_t += [o.day for o in orders]
    if observed_b and max(observed_b) + 1 < dims.brands:
        warn(f"declared brands={dims.brands} but max observed brand_id is {max(observed_b)}")
    if observed_k and max(observed_k) + 1 < dims.positions:
        warn(f"declared positions={dims.positions} but max observed position_id is {max(observed_k)}")
    if observed_t and max(observed_t) + 1 < dims.days:
        warn(f"declared days={dims.days} but max observed day is {max(observed_t)}")


def write(dataset: Dataset, out_dir) -> DatasetManifest:
    """Write the dataset back out in canonical order (sorted keys)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "impressions": "impressions.csv",
        "orders": "orders.csv",
        "prices": "prices.csv",
        "users": "users.csv",
    }

    def write_log(log_: ImpressionLog, path: Path, header: list[str]) -> None:
        ids = dataset.user_ids[log_.user_row]
        order = np.lexsort((log_.day, log_.position, log_.brand, ids))
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in order:
                w.writerow([ids[i], log_.brand[i], log_.position[i], log_.day[i], log_.count[i]])

    write_log(dataset.impressions, out / files["impressions"], IMPRESSION_HEADER)

    with (out / files["orders"]).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORDER_HEADER)
        for o in sorted(dataset.orders, key=lambda o: (o.user_id, o.brand_id, o.day)):
            w.writerow([o.user_id, o.brand_id, o.day])

    with (out / files["prices"]).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_HEADER)
        for b in range(dataset.dims.brands):
            for t in range(dataset.dims.days):
                w.writerow([b, t, repr(float(dataset.prices.values[b, t]))])

    with (out / files["users"]).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id"] + [f"f{i}" for i in range(dataset.n_features)])
        for i, u in enumerate(dataset.user_ids):
            w.writerow([int(u)] + [repr(float(v)) for v in dataset.features[i]])

    if dataset.clicks is not None:
        files["clicks"] = "clicks.csv"
        write_log(dataset.clicks, out / files["clicks"], CLICK_HEADER)

    manifest_doc = {
        "format_version": FORMAT_VERSION,
        "dims": {
            "brands": dataset.dims.brands,
            "positions": dataset.dims.positions,
            "days": dataset.dims.days,
            "features": dataset.n_features,
        },
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest_doc, indent=1, sort_keys=True))
    return DatasetManifest(root=out, dims=dataset.dims, n_features=dataset.n_features, files=files)
