"""Incrementality-based multi-touch attribution.

Trains user-level ad-response models and allocates each order's incremental
purchase probability across ad-position-day exposures with Shapley values
(exact, Monte Carlo, or mixed), aggregated per brand by a deterministic
map/reduce pipeline.
"""

from .core import (
    AttributionReport,
    Dataset,
    Dims,
    ExposureSet,
    ImpressionTensor,
    MtaError,
    Order,
    PositionCredit,
    PriceSeries,
    UserFeatures,
    exposure_set,
)
from .masking import KeptNotSubset, MaskedView, mask
from .shapley import (
    CoalitionOverflow,
    DegenerateAllocation,
    OrderAttribution,
    OrderContext,
    ShapleyConfig,
    attribute_order,
    marginal_value,
    shapley_exact,
    shapley_mc,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionReport",
    "CoalitionOverflow",
    "Dataset",
    "DegenerateAllocation",
    "Dims",
    "ExposureSet",
    "ImpressionTensor",
    "KeptNotSubset",
    "MaskedView",
    "MtaError",
    "Order",
    "OrderAttribution",
    "OrderContext",
    "PositionCredit",
    "PriceSeries",
    "ShapleyConfig",
    "UserFeatures",
    "attribute_order",
    "exposure_set",
    "mask",
    "marginal_value",
    "shapley_exact",
    "shapley_mc",
    "__version__",
]
