"""Analytic gradients versus central finite differences for both model
classes (the acceptance suite repeats this over >=100 coordinates)."""

import numpy as np

from mta.core import Dims
from mta.response import Batch, BiRecurrentModel, LogisticModel

from helpers import finite_difference_max_rel_err

DIMS = Dims(2, 3, 4)


def make_batch(rng, n=4, n_features=3):
    counts = rng.integers(0, 4, size=(n, DIMS.days, DIMS.brands * DIMS.positions)).astype(float)
    return Batch(
        counts=counts,
        prices=rng.uniform(0.5, 1.5, size=(DIMS.brands, DIMS.days)),
        features=rng.normal(size=(n, n_features)),
        labels=rng.integers(0, 2, size=(n, DIMS.brands, DIMS.days)).astype(float),
    )


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    model = LogisticModel(DIMS, n_features=3, seed=2)
    batch = make_batch(rng)
    err = finite_difference_max_rel_err(model, batch, n_coords=60, seed=3)
    assert err <= 1e-4, err


def test_birnn_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    model = BiRecurrentModel(DIMS, n_features=3, hidden=5, user_hidden=3, seed=2)
    batch = make_batch(rng)
    err = finite_difference_max_rel_err(model, batch, n_coords=60, seed=4)
    assert err <= 1e-4, err
