import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npforge import autodiff as ad
from npforge.convdeepset import DENSITY_FLOOR, Discretization, LengthscaleSet, embed, make_discretization, smooth


def _ls(v):
    return ad.Value(np.array([v]))


def test_single_point_grid():
    d = make_discretization([0.0], 64, 1.0)
    assert (d.start, d.spacing, d.count) == (-1.0, 1 / 64, 129)
    assert d.stop == pytest.approx(1.0, abs=1e-12)


def test_integer_grid():
    d = make_discretization([-2.0, 2.0], 1, 1.0)
    np.testing.assert_allclose(d.points, np.arange(-3.0, 4.0))


def test_grid_brackets_inputs_with_margin():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        xs = rng.uniform(-5, 5, rng.integers(1, 20))
        d = make_discretization(xs, 64, 1.0)
        assert d.start <= xs.min() - 1.0 + 1e-12
        assert d.stop >= xs.max() + 1.0 - d.spacing


def test_bad_discretizations():
    with pytest.raises(ValueError):
        make_discretization([], 64)
    with pytest.raises(ValueError):
        Discretization(0.0, 0.0, 10)


def test_empty_context_gives_zero_channels():
    d = make_discretization([0.0], 8)
    rep = embed(np.zeros((1, 0)), np.zeros((1, 0)), np.zeros((1, 0)), d, _ls(0.1), _ls(0.1))
    np.testing.assert_array_equal(rep.channels.data, 0.0)


def test_point_on_node():
    d = make_discretization([0.0], 8)
    j = 8  # the node at x = 0
    rep = embed(np.array([[0.0]]), np.array([[2.0]]), np.ones((1, 1)), d, _ls(0.2), _ls(0.2))
    assert rep.density[0, j] == 1.0
    assert rep.data[0, j] == pytest.approx(2.0, abs=1e-15)


def test_duplicate_point_doubles_density_only():
    d = make_discretization([0.0], 16)
    one = embed(np.array([[0.1]]), np.array([[1.5]]), np.ones((1, 1)), d, _ls(0.1), _ls(0.1))
    two = embed(np.array([[0.1, 0.1]]), np.array([[1.5, 1.5]]), np.ones((1, 2)), d, _ls(0.1), _ls(0.1))
    np.testing.assert_allclose(two.density, 2 * one.density, rtol=1e-15)
    keep = one.density > DENSITY_FLOOR
    np.testing.assert_allclose(two.data[keep], one.data[keep], rtol=1e-12)


def test_identical_y_gives_constant_data_channel():
    d = make_discretization([-1.0, 1.0], 16)
    xc = np.array([[-0.5, 0.0, 0.7]])
    rep = embed(xc, np.full((1, 3), -0.8), np.ones((1, 3)), d, _ls(0.2), _ls(0.2))
    keep = rep.density > 1e-6
    np.testing.assert_allclose(rep.data[keep], -0.8, rtol=1e-9)


def test_padding_is_ignored():
    d = make_discretization([0.0], 16)
    a = embed(np.array([[0.2]]), np.array([[1.0]]), np.ones((1, 1)), d, _ls(0.1), _ls(0.1))
    b = embed(np.array([[0.2, 9.0]]), np.array([[1.0, 5.0]]), np.array([[1.0, 0.0]]), d, _ls(0.1), _ls(0.1))
    np.testing.assert_array_equal(a.channels.data, b.channels.data)


def test_smooth_zero_values():
    d = make_discretization([0.0], 8)
    out = smooth(np.zeros((1, d.count, 1)), d, np.array([[0.1, 0.3]]), _ls(0.2))
    np.testing.assert_array_equal(out.data, 0.0)


def test_smooth_nearest_node_ratio():
    d = make_discretization([0.0], 8)
    scale = d.spacing / math.sqrt(2)
    vals = np.zeros((1, d.count, 1))
    j = 8
    vals[0, j] = 1.0
    at_node = smooth(vals, d, np.array([[d.points[j]]]), _ls(scale)).data[0, 0, 0]
    vals2 = np.zeros_like(vals)
    vals2[0, j + 1] = 1.0
    next_node = smooth(vals2, d, np.array([[d.points[j]]]), _ls(scale)).data[0, 0, 0]
    assert at_node / next_node >= math.e * (1 - 1e-12)


def test_smooth_constant_matches_double_loop():
    d = make_discretization([0.0], 8)
    xt = np.array([[-0.33, 0.0, 0.41]])
    ls = 0.17
    out = smooth(np.full((1, d.count, 1), 2.5), d, xt, _ls(ls)).data[0, :, 0]
    ref = [2.5 * sum(math.exp(-((x - t) ** 2) / (2 * ls * ls)) for t in d.points) for x in xt[0]]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_smooth_shape_check():
    d = make_discretization([0.0], 8)
    with pytest.raises(ad.ShapeError):
        smooth(np.zeros((1, d.count + 1, 1)), d, np.zeros((1, 2)), _ls(0.1))


def test_lengthscales_initialise_to_two_spacings():
    ls = LengthscaleSet.initial(1 / 64)
    for v in ls.values().values():
        assert v == pytest.approx(2 / 64, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_embed_is_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    xc, yc = rng.uniform(-1, 1, (1, n)), rng.normal(size=(1, n))
    perm = rng.permutation(n)
    d = make_discretization(xc, 32)
    a = embed(xc, yc, np.ones((1, n)), d, _ls(0.1), _ls(0.15))
    b = embed(xc[:, perm], yc[:, perm], np.ones((1, n)), d, _ls(0.1), _ls(0.15))
    np.testing.assert_array_equal(a.channels.data, b.channels.data)


@pytest.mark.parametrize("m", [1, 3, 7])
def test_embed_grid_shift_equivariance(m):
    rng = np.random.default_rng(m)
    xc, yc = rng.uniform(-1, 1, (1, 5)), rng.normal(size=(1, 5))
    d = make_discretization(xc, 64)
    a = embed(xc, yc, np.ones((1, 5)), d, _ls(0.05), _ls(0.05)).channels.data
    b = embed(xc + m * d.spacing, yc, np.ones((1, 5)), d.shifted(m), _ls(0.05), _ls(0.05)).channels.data
    np.testing.assert_allclose(a, b, atol=1e-12)
