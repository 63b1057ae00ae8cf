import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chaoskpa import ShapeError
from chaoskpa.chaos_core import keystream, logistic
from chaoskpa.metrics import UndefinedCorrelation, batch_correlation, pearson, pearson_rows

import oracles

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


def test_self_correlation():
    x = np.random.default_rng(0).random((1, 5, 5))
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("a,b,expected", [(2.5, 3.0, 1.0), (-0.5, 1.0, -1.0)])
def test_affine(a, b, expected):
    p = np.random.default_rng(1).random((4, 4))
    assert pearson(a * p + b, p) == pytest.approx(expected, abs=1e-12)


def test_hand_value():
    o = np.array([[1, 2], [3, 4]], float)
    p = np.array([[1, 2], [3, 5]], float)
    ref = oracles.pearson_hand([1, 2, 3, 4], [1, 2, 3, 5])
    assert pearson(o, p) == pytest.approx(ref, abs=1e-12)
    assert pearson(o, p) == pytest.approx(0.98270, abs=1e-5)


def test_constant_is_undefined():
    with pytest.raises(UndefinedCorrelation):
        pearson(np.arange(4.0), np.full(4, 3.0))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        pearson(np.zeros(4), np.zeros(5))


def test_channels_are_flattened():
    rng = np.random.default_rng(3)
    o, p = rng.random((3, 4, 4)), rng.random((3, 4, 4))
    assert pearson(o, p) == pytest.approx(np.corrcoef(o.ravel(), p.ravel())[0, 1], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 16, elements=finite), arrays(np.float64, 16, elements=finite))
def test_symmetry_and_bound(o, p):
    try:
        r = pearson(o, p)
    except UndefinedCorrelation:
        return
    assert abs(r - pearson(p, o)) <= 1e-12
    assert abs(r) <= 1 + 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(0, 1, width=64)),
       arrays(np.float64, 16, elements=st.floats(0, 1, width=64)),
       st.floats(0.1, 100), st.floats(-50, 50))
def test_affine_invariance(o, p, a, b):
    if np.ptp(o) < 1e-3 or np.ptp(p) < 1e-3:
        return
    assert pearson(a * o + b, a * p + b) == pytest.approx(pearson(o, p), abs=1e-9)


class TestBatch:
    def test_identical(self):
        x = np.random.default_rng(0).random((6, 1, 8, 8))
        rep = batch_correlation(x, x)
        assert rep.mean == pytest.approx(1.0) and rep.skipped == 0

    def test_skip_constant(self):
        rng = np.random.default_rng(0)
        t = rng.random((10, 1, 4, 4))
        o = rng.random((10, 1, 4, 4))
        t[3] = 0.5
        rep = batch_correlation(o, t)
        assert rep.included.size == 9 and rep.skipped == 1
        assert np.all(np.abs(rep.included) <= 1)

    def test_all_constant(self):
        rep = batch_correlation(np.ones((3, 4)), np.ones((3, 4)))
        assert rep.empty and rep.skipped == 3 and np.isnan(rep.mean)

    def test_rows_match_scalar(self):
        rng = np.random.default_rng(5)
        o, p = rng.random((5, 3, 4, 4)), rng.random((5, 3, 4, 4))
        rows = pearson_rows(o, p)
        assert rows == pytest.approx([pearson(a, b) for a, b in zip(o, p)], abs=1e-12)

    def test_noise_baseline(self, mnist_images):
        ims = mnist_images[:1000]
        noise = keystream(logistic(3.99, 0.37), ims[0].size * len(ims)).as_array().reshape(ims.shape)
        rep = batch_correlation(noise, ims)
        assert abs(rep.mean) < 0.1

    def test_csv(self):
        rep = batch_correlation(np.array([[1.0, 2, 3], [1, 1, 1]]), np.array([[1.0, 2, 4], [0, 1, 2]]))
        lines = rep.to_csv().splitlines()
        assert lines[0] == "index,coefficient,skipped"
        assert lines[2] == "1,,1"
        assert lines[1].startswith("0,0.98")
