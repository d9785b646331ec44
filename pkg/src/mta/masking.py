"""Counterfactual masking: zero a brand's impressions outside a kept coalition.

The masked view is lazy. Shapley evaluation calls the response model up to
2^|N| times per order, so copying the base tensor per coalition would dominate
runtime; a view costs one set lookup per read instead.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .core import Dims, ImpressionTensor, MtaError, TupleKey, exposure_set


class KeptNotSubset(MtaError):
    """The kept coalition names a tuple the base tensor never exposed."""


class MaskedView:
    """Read-only counterfactual over a base tensor: the focal brand's counts
    are zero outside ``kept``; every other brand passes through untouched.
    """

    __slots__ = ("base", "brand", "kept")

    def __init__(self, base: ImpressionTensor, brand: int, kept: frozenset[TupleKey]):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "brand", brand)
        object.__setattr__(self, "kept", kept)

    def __setattr__(self, name: str, value) -> None:
        raise AttributeError("MaskedView is immutable")

    @property
    def dims(self) -> Dims:
        return self.base.dims

    def count(self, brand: int, position: int, day: int) -> int:
        if brand == self.brand and (position, day) not in self.kept:
            return 0
        return self.base.count(brand, position, day)

    def items(self) -> Iterator[tuple[tuple[int, int, int], int]]:
        """Surviving ((brand, position, day), count) entries, canonical order."""
        for (b, k, t), c in self.base.items():
            if b == self.brand and (k, t) not in self.kept:
                continue
            yield (b, k, t), c

    def to_dense_vector(self) -> np.ndarray:
        out = np.zeros(self.dims.cells, dtype=np.int64)
        for (b, k, t), c in self.items():
            out[self.dims.flat_index(b, k, t)] = c
        return out

    def materialize(self) -> ImpressionTensor:
        """Eagerly copy into a plain tensor (tests and debugging)."""
        return ImpressionTensor(self.dims, dict(self.items()))

    def __repr__(self) -> str:
        return f"MaskedView(brand={self.brand}, kept={sorted(self.kept)})"


def mask(base, brand: int, kept) -> MaskedView:
    """Build the counterfactual view keeping only coalition ``kept`` of the
    focal brand's exposures.

    ``kept`` must be a subset of the brand's exposure tuples (supersets are
    rejected to catch caller bugs). Accepts a plain tensor or an existing
    view; re-masking a view with the same brand intersects the kept sets, so
    masking twice with identical arguments changes nothing.
    """
    kept = frozenset(kept)
    exposed = set(exposure_set(base, brand).tuples)
    extra = kept - exposed
    if extra:
        raise KeptNotSubset(
            f"kept tuples not exposed for brand {brand}: {sorted(extra, key=lambda kt: (kt[1], kt[0]))}"
        )
    if isinstance(base, MaskedView):
        if base.brand == brand:
            return MaskedView(base.base, brand, kept & base.kept)
        # Different focal brand: materialize so a single view level remains.
        return MaskedView(base.materialize(), brand, kept)
    return MaskedView(base, brand, kept)
