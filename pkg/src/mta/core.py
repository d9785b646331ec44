"""Shared domain types: sparse per-user impression tensors, price series,
exposure sets, orders, and the in-memory dataset all other modules consume.

Conventions (fixed across the package):
  - days are 0-based; the attribution day is the last index ``T - 1``
  - the dense impression layout is day-major, then brand, then position,
    i.e. flat index ``(t * B + b) * K + k``
  - impression counts are unsigned 32-bit; anything larger is an
    ingestion error
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

MAX_COUNT = 2**32 - 1

TupleKey = tuple[int, int]  # (position_id, day)
TupleCredit = dict[TupleKey, float]


class MtaError(Exception):
    """Base class for all package errors."""


@dataclass(frozen=True)
class Dims:
    """Dataset dimensions: B brands, K ad-positions, T days."""

    brands: int
    positions: int
    days: int

    def __post_init__(self) -> None:
        if self.brands < 1 or self.positions < 1 or self.days < 1:
            raise ValueError(f"all dims must be >= 1, got {self}")

    @property
    def cells(self) -> int:
        return self.brands * self.positions * self.days

    def flat_index(self, brand: int, position: int, day: int) -> int:
        """Dense index under day-major, brand, position stacking."""
        return (day * self.brands + brand) * self.positions + position

    def check(self, brand: int, position: int, day: int) -> None:
        if not (0 <= brand < self.brands):
            raise ValueError(f"brand {brand} out of range [0, {self.brands})")
        if not (0 <= position < self.positions):
            raise ValueError(f"position {position} out of range [0, {self.positions})")
        if not (0 <= day < self.days):
            raise ValueError(f"day {day} out of range [0, {self.days})")


class ImpressionTensor:
    """One user's impression counts, stored sparse as (brand, position, day) -> count.

    Immutable after construction. Absent entries are zero; stored counts are
    strictly positive. Iteration order is canonical (ascending day, brand,
    position) so every float accumulation built from it is reproducible.
    """

    __slots__ = ("dims", "_entries", "_sorted")

    def __init__(self, dims: Dims, entries: Mapping[tuple[int, int, int], int]):
        clean: dict[tuple[int, int, int], int] = {}
        for (b, k, t), c in entries.items():
            dims.check(b, k, t)
            c = int(c)
            if c < 0:
                raise ValueError(f"negative count {c} at (brand={b}, position={k}, day={t})")
            if c > MAX_COUNT:
                raise ValueError(f"count {c} at (brand={b}, position={k}, day={t}) exceeds uint32")
            if c == 0:
                continue
            clean[(b, k, t)] = c
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "_entries", clean)
        object.__setattr__(
            self,
            "_sorted",
            tuple(sorted(clean.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1]))),
        )

    def __setattr__(self, name: str, value) -> None:
        raise AttributeError("ImpressionTensor is immutable")

    def count(self, brand: int, position: int, day: int) -> int:
        return self._entries.get((brand, position, day), 0)

    def items(self) -> Iterator[tuple[tuple[int, int, int], int]]:
        """Yield ((brand, position, day), count) in canonical order."""
        return iter(self._sorted)

    @property
    def nnz(self) -> int:
        return len(self._entries)

    def to_dense_vector(self) -> np.ndarray:
        """Flatten to the (B*K*T,) stacked vector, day-major then brand then position."""
        out = np.zeros(self.dims.cells, dtype=np.int64)
        for (b, k, t), c in self._sorted:
            out[self.dims.flat_index(b, k, t)] = c
        return out

    @classmethod
    def from_dense_vector(cls, dims: Dims, vec: np.ndarray) -> "ImpressionTensor":
        vec = np.asarray(vec)
        if vec.shape != (dims.cells,):
            raise ValueError(f"expected shape ({dims.cells},), got {vec.shape}")
        entries: dict[tuple[int, int, int], int] = {}
        for flat in np.flatnonzero(vec):
            flat = int(flat)
            k = flat % dims.positions
            b = (flat // dims.positions) % dims.brands
            t = flat // (dims.positions * dims.brands)
            entries[(b, k, t)] = int(vec[flat])
        return cls(dims, entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImpressionTensor):
            return NotImplemented
        return self.dims == other.dims and self._entries == other._entries

    def __repr__(self) -> str:
        return f"ImpressionTensor(dims={self.dims}, nnz={self.nnz})"


@dataclass(frozen=True)
class PriceSeries:
    """Per-brand daily price index, shape (B, T). Unitless, finite, non-negative."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"prices must be (B, T), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("prices must be finite")
        if np.any(v < 0):
            raise ValueError("prices must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def brands(self) -> int:
        return self.values.shape[0]

    @property
    def days(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class UserFeatures:
    """Baseline user characteristics, a fixed-length real vector."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"user features must be 1-d, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("user features must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Order:
    """A purchase event: user bought brand on a day. Attribution consumes
    label-1 orders on the attribution day."""

    user_id: int
    brand_id: int
    day: int
    label: int = 1

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class ExposureSet:
    """The distinct (position, day) tuples at which one order's brand showed ads.

    ``tuples`` is canonically ordered: ascending day, then position.
    """

    tuples: tuple[TupleKey, ...]

    @property
    def cardinality(self) -> int:
        return len(self.tuples)

    @property
    def positions(self) -> tuple[int, ...]:
        """The distinct ad-positions touched, ascending."""
        return tuple(sorted({k for k, _ in self.tuples}))

    def __contains__(self, item: TupleKey) -> bool:
        return item in set(self.tuples)

    def __iter__(self) -> Iterator[TupleKey]:
        return iter(self.tuples)

    def __len__(self) -> int:
        return len(self.tuples)


def exposure_set(tensor, brand: int, max_day: int | None = None) -> ExposureSet:
    """Collect the (position, day) tuples with positive count for ``brand``.

    Accepts anything with ``.dims`` and ``.items()`` (a plain tensor or a
    masked view). Ordering is deterministic regardless of the underlying
    map's iteration order. ``max_day`` optionally restricts to days <= it.
    """
    tensor.dims.check(brand, 0, 0)
    found = set()
    for (b, k, t), c in tensor.items():
        if b == brand and c > 0 and (max_day is None or t <= max_day):
            found.add((k, t))
    return ExposureSet(tuple(sorted(found, key=lambda kt: (kt[1], kt[0]))))


@dataclass(frozen=True)
class PositionCredit:
    """One (brand, position) row of a report: summed credit and its share."""

    sa: float
    psi: float


@dataclass
class AttributionReport:
    """Brand-level attribution for one day: per-position credit sums SA_k and
    proportions, plus order bookkeeping.

    For brands with zero total credit the proportions are undefined; we emit
    zeros and flag the brand instead of NaN.
    """

    day: int
    rows: dict[tuple[int, int], PositionCredit] = field(default_factory=dict)
    brand_orders: dict[int, int] = field(default_factory=dict)
    psi_defined: dict[int, bool] = field(default_factory=dict)
    skipped_orders: int = 0

    def brands(self) -> list[int]:
        return sorted({b for b, _ in self.rows})

    def brand_total(self, brand: int) -> float:
        return sum(pc.sa for (b, _), pc in self.rows.items() if b == brand)

    def validate(self, tol: float = 1e-9) -> None:
        """Check the proportion rows of every credited brand sum to one."""
        for b in self.brands():
            if not self.psi_defined.get(b, False):
                continue
            total = sum(pc.psi for (bb, _), pc in self.rows.items() if bb == b)
            if abs(total - 1.0) > tol:
                raise AssertionError(f"brand {b}: sum of proportions {total!r} != 1")


class ImpressionLog:
    """Column-oriented impression storage for a whole dataset.

    Rows are sorted by (user_row, day, brand, position) and unique per key;
    per-user slices build :class:`ImpressionTensor` views on demand.
    """

    __slots__ = ("user_row", "brand", "position", "day", "count", "_offsets", "n_users")

    def __init__(
        self,
        n_users: int,
        user_row: np.ndarray,
        brand: np.ndarray,
        position: np.ndarray,
        day: np.ndarray,
        count: np.ndarray,
    ):
        order = np.lexsort((position, brand, day, user_row))
        self.n_users = n_users
        self.user_row = np.ascontiguousarray(user_row[order], dtype=np.int64)
        self.brand = np.ascontiguousarray(brand[order], dtype=np.int64)
        self.position = np.ascontiguousarray(position[order], dtype=np.int64)
        self.day = np.ascontiguousarray(day[order], dtype=np.int64)
        self.count = np.ascontiguousarray(count[order], dtype=np.int64)
        if len(self.user_row):
            keys = np.stack([self.user_row, self.day, self.brand, self.position])
            dup = np.all(keys[:, 1:] == keys[:, :-1], axis=0)
            if np.any(dup):
                i = int(np.flatnonzero(dup)[0]) + 1
                raise ValueError(
                    "duplicate impression key "
                    f"(user_row={self.user_row[i]}, brand={self.brand[i]}, "
                    f"position={self.position[i]}, day={self.day[i]})"
                )
        self._offsets = np.searchsorted(self.user_row, np.arange(n_users + 1))

    def __len__(self) -> int:
        return len(self.user_row)

    def user_slice(self, row: int) -> slice:
        return slice(int(self._offsets[row]), int(self._offsets[row + 1]))

    def user_tensor(self, row: int, dims: Dims) -> ImpressionTensor:
        sl = self.user_slice(row)
        entries = {
            (int(b), int(k), int(t)): int(c)
            for b, k, t, c in zip(self.brand[sl], self.position[sl], self.day[sl], self.count[sl])
        }
        return ImpressionTensor(dims, entries)


@dataclass
class Dataset:
    """A fully loaded attribution window: impressions, prices, user features,
    and observed orders. Immutable by convention; shared read-only across
    parallel workers."""

    dims: Dims
    n_features: int
    user_ids: np.ndarray
    impressions: ImpressionLog
    prices: PriceSeries
    features: np.ndarray
    orders: list[Order]
    clicks: ImpressionLog | None = None

    def __post_init__(self) -> None:
        self._row_of = {int(u): i for i, u in enumerate(self.user_ids)}
        self._tensors: dict[int, ImpressionTensor] | None = None

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    def user_row(self, user_id: int) -> int:
        try:
            return self._row_of[int(user_id)]
        except KeyError:
            raise KeyError(f"unknown user_id {user_id}") from None

    def precompute_tensors(self) -> None:
        """Eagerly build every per-user tensor (memory for speed)."""
        self._tensors = {
            int(u): self.impressions.user_tensor(i, self.dims) for i, u in enumerate(self.user_ids)
        }

    def user_tensor(self, user_id: int) -> ImpressionTensor:
        if self._tensors is not None:
            return self._tensors[int(user_id)]
        return self.impressions.user_tensor(self.user_row(user_id), self.dims)

    def user_features(self, user_id: int) -> UserFeatures:
        return UserFeatures(self.features[self.user_row(user_id)])

    def label_grid(self) -> np.ndarray:
        """Dense (N, B, T) 0/1 purchase labels assembled from the orders."""
        y = np.zeros((self.n_users, self.dims.brands, self.dims.days), dtype=np.int8)
        for o in self.orders:
            if o.label:
                y[self.user_row(o.user_id), o.brand_id, o.day] = 1
        return y

    def subset(self, rows: np.ndarray) -> "Dataset":
        """A new dataset restricted to the given user rows (train/held-out
        splits); user ids are preserved."""
        rows = np.asarray(rows, dtype=np.int64)
        keep_ids = set(int(u) for u in self.user_ids[rows])
        remap = np.full(self.n_users, -1, dtype=np.int64)
        remap[rows] = np.arange(len(rows))

        def cut(log: ImpressionLog | None) -> ImpressionLog | None:
            if log is None:
                return None
            m = remap[log.user_row] >= 0
            return ImpressionLog(
                len(rows), remap[log.user_row[m]], log.brand[m],
                log.position[m], log.day[m], log.count[m],
            )

        return Dataset(
            dims=self.dims,
            n_features=self.n_features,
            user_ids=self.user_ids[rows],
            impressions=cut(self.impressions),
            prices=self.prices,
            features=self.features[rows],
            orders=[o for o in self.orders if o.user_id in keep_ids],
            clicks=cut(self.clicks),
        )

    def orders_on(self, day: int) -> list[Order]:
        return [o for o in self.orders if o.day == day and o.label == 1]
