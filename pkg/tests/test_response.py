"""Response model contracts: prediction codomain and purity, masked-view
equivalence, the log-likelihood, initialization, and checkpointing."""

import math

import numpy as np
import pytest

from mta.core import Dims, ImpressionTensor, PriceSeries, UserFeatures, exposure_set
from mta.datagen import ExposureDecayModel
from mta.masking import mask
from mta.response import (
    Batch,
    BiRecurrentModel,
    LogisticModel,
    ShapeMismatch,
    bernoulli_ll,
    build_counts,
    init_parameters,
    load_checkpoint,
    log_likelihood,
    orthogonal_blocks,
    predict,
    save_checkpoint,
    truncated_normal,
)

from conftest import random_tensor

DIMS = Dims(2, 3, 4)


def _models(seed=0):
    logistic = LogisticModel(DIMS, n_features=3, seed=seed)
    birnn = BiRecurrentModel(DIMS, n_features=3, hidden=5, user_hidden=3, seed=seed)
    decay = ExposureDecayModel(DIMS, n_features=3, decay=0.7)
    rng = np.random.default_rng(seed)
    decay.params["beta"][:] = rng.uniform(0.1, 0.6, size=decay.params["beta"].shape)
    decay.params["gamma"][:] = -0.1
    decay.params["price_w"][:] = -0.3
    decay.params["theta"][:] = rng.normal(0, 0.2, size=decay.params["theta"].shape)
    decay.params["intercept"][:] = -1.0
    return [logistic, birnn, decay]


def _inputs(rng):
    tensor = random_tensor(rng, DIMS, density=0.4)
    prices = PriceSeries(rng.uniform(0.5, 1.5, size=(DIMS.brands, DIMS.days)))
    feats = UserFeatures(rng.normal(size=3))
    return tensor, prices, feats


class TestPredict:
    def test_output_strictly_inside_unit_interval(self, rng):
        for model in _models():
            for _ in range(10):
                tensor, prices, feats = _inputs(rng)
                p = predict(model, tensor, prices, feats, 0, DIMS.days - 1)
                assert 0.0 < p < 1.0

    def test_zero_weight_logistic_is_half(self, rng):
        model = LogisticModel(DIMS, n_features=3, seed=0)
        model.params["weights"][:] = 0.0
        model.params["intercept"][:] = 0.0
        for _ in range(10):
            tensor, prices, feats = _inputs(rng)
            for b in range(DIMS.brands):
                assert predict(model, tensor, prices, feats, b, 2) == 0.5

    def test_masked_view_equals_materialized(self, rng):
        for model in _models():
            for _ in range(10):
                tensor, prices, feats = _inputs(rng)
                exposed = exposure_set(tensor, 0).tuples
                keep = frozenset(kt for kt in exposed if rng.random() < 0.5)
                view = mask(tensor, 0, keep)
                p_view = predict(model, view, prices, feats, 0, DIMS.days - 1)
                p_dense = predict(model, view.materialize(), prices, feats, 0, DIMS.days - 1)
                assert p_view == p_dense  # bitwise

    def test_prediction_purity(self, rng):
        tensor, prices, feats = _inputs(rng)
        for model in _models():
            first = predict(model, tensor, prices, feats, 1, 3)
            params_before = {k: v.copy() for k, v in model.params.items()}
            assert all(
                predict(model, tensor, prices, feats, 1, 3) == first for _ in range(1000)
            )
            for k, v in model.params.items():
                assert np.array_equal(v, params_before[k])

    def test_monotone_in_own_impressions(self, rng):
        """Models with positive own-ad weights never lose probability when an
        own impression count increases."""
        logistic = LogisticModel(DIMS, n_features=3, seed=1)
        logistic.params["weights"][:] = 0.0
        K, nb = DIMS.positions, logistic.n_buckets
        logistic.params["weights"][:, : K * nb] = 0.4
        decay = _models()[2]
        for model in (logistic, decay):
            for _ in range(10):
                tensor, prices, feats = _inputs(rng)
                base_p = predict(model, tensor, prices, feats, 0, 3)
                entries = dict(tensor.items())
                k, t = int(rng.integers(DIMS.positions)), int(rng.integers(DIMS.days))
                entries[(0, k, t)] = entries.get((0, k, t), 0) + 3
                bumped = ImpressionTensor(DIMS, entries)
                assert predict(model, bumped, prices, feats, 0, 3) >= base_p

    def test_shape_mismatch(self, rng):
        tensor, prices, feats = _inputs(rng)
        model = LogisticModel(Dims(3, 3, 4), n_features=3)
        with pytest.raises(ShapeMismatch):
            predict(model, tensor, prices, feats, 0, 2)
        model2 = LogisticModel(DIMS, n_features=5)
        with pytest.raises(ShapeMismatch):
            predict(model2, tensor, prices, feats, 0, 2)
        with pytest.raises(ShapeMismatch):
            predict(LogisticModel(DIMS, 3), tensor, prices, feats, 0, 99)


class TestLogLikelihood:
    def test_half_probability_closed_form(self, rng):
        model = LogisticModel(DIMS, n_features=3, seed=0)
        model.params["weights"][:] = 0.0
        model.params["intercept"][:] = 0.0
        n = 7
        counts = np.zeros((n, DIMS.days, DIMS.brands * DIMS.positions))
        batch = Batch(
            counts=counts,
            prices=np.ones((DIMS.brands, DIMS.days)),
            features=rng.normal(size=(n, 3)),
            labels=rng.integers(0, 2, size=(n, DIMS.brands, DIMS.days)),
        )
        ll = log_likelihood(model, batch)
        assert math.isclose(ll, -n * DIMS.brands * math.log(2), rel_tol=1e-12)

    def test_perfect_confidence_clamp(self):
        ll = bernoulli_ll(np.array([1.0 - 1e-12]), np.array([1.0]))
        assert ll == math.log(1.0 - 1e-12)
        assert abs(ll + 1e-12) < 1e-13

    def test_finite_under_saturated_predictions(self):
        assert np.isfinite(bernoulli_ll(np.array([0.0, 1.0]), np.array([1.0, 0.0])))


class TestInit:
    def test_orthogonal_blocks(self):
        rng = np.random.default_rng(0)
        w = orthogonal_blocks(rng, 8, 32)
        for j in range(4):
            block = w[:, j * 8 : (j + 1) * 8]
            assert np.max(np.abs(block.T @ block - np.eye(8))) <= 1e-10

    def test_truncated_normal_within_two_sigma(self):
        rng = np.random.default_rng(0)
        draws = truncated_normal(rng, (2000,), std=0.1)
        assert np.all(np.abs(draws) <= 0.2)
        assert draws.std() > 0.05

    def test_same_seed_identical(self):
        spec = [("a", (4, 16), "orthogonal"), ("b", (7, 3), "normal"), ("c", (5,), "zeros")]
        p1 = init_parameters(spec, seed=9)
        p2 = init_parameters(spec, seed=9)
        for k in p1:
            assert np.array_equal(p1[k], p2[k])
        p3 = init_parameters(spec, seed=10)
        assert not np.array_equal(p1["b"], p3["b"])

    def test_birnn_recurrent_matrices_orthogonal(self):
        model = BiRecurrentModel(DIMS, n_features=3, hidden=6, seed=3)
        for name in ("fw_wh", "bw_wh"):
            w = model.params[name]
            for j in range(4):
                block = w[:, j * 6 : (j + 1) * 6]
                assert np.max(np.abs(block.T @ block - np.eye(6))) <= 1e-10


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["logistic", "birnn", "decay"])
    def test_round_trip_bit_exact(self, kind, tmp_path, rng):
        model = {m.kind: m for m in _models(seed=5)}[kind]
        path = tmp_path / f"{kind}.npz"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.kind == model.kind
        assert loaded.dims == model.dims
        for k, v in model.params.items():
            assert np.array_equal(loaded.params[k], v)
        tensor, prices, feats = _inputs(rng)
        assert predict(loaded, tensor, prices, feats, 0, 3) == predict(
            model, tensor, prices, feats, 0, 3
        )

    def test_missing_file(self, tmp_path):
        from mta.response import CheckpointError

        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "nope.npz")

    def test_file_bytes_deterministic(self, tmp_path):
        model = BiRecurrentModel(DIMS, n_features=3, hidden=4, seed=8)
        save_checkpoint(model, tmp_path / "a.npz")
        save_checkpoint(model, tmp_path / "b.npz")
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


class TestBuildCounts:
    def test_matches_dense_layout(self, worked_example):
        arr = build_counts([worked_example], worked_example.dims)[0]
        # (T, B*K) rows must match the flat day-major stacking
        assert np.array_equal(arr.reshape(-1), worked_example.to_dense_vector().astype(float))
