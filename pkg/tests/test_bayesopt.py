import math

import numpy as np
import pytest

from npforge.bayesopt import (
    Field,
    RegretCurve,
    average_regret,
    make_field,
    make_predictor,
    run_episode,
    run_experiment,
    running_mean,
    thompson_acquire,
    ucb_acquire,
    write_regret_csv,
)
from npforge.models import build_model

EMPTY = np.empty(0)
CNN = {"cnn": {"layers": 2, "channels": 8, "kernel_width": 5}, "density": 16}


class FixedPredictor:
    """Known marginals and a zero-variance sampler."""

    coherent = True

    def __init__(self, mu, sd):
        self.mu, self.sd = np.asarray(mu, float), np.asarray(sd, float)

    def sample(self, xc, yc, grid, rng):
        return self.mu + self.sd * rng.standard_normal(self.mu.size)

    def moments(self, xc, yc, grid, rng=None):
        return self.mu, self.sd


def test_zero_variance_ts_picks_mean_argmax():
    p = FixedPredictor([0.1, 0.9, 0.9, -1.0], np.zeros(4))
    for s in range(5):
        assert thompson_acquire(p, EMPTY, EMPTY, np.arange(4.0), np.random.default_rng(s)) == 1


def test_ts_empty_context_is_uniform_on_a_wide_grid():
    # points two kernel ranges apart are nearly independent, so each index wins ~1/8 of the time
    p = make_predictor("gp", "matern52")
    grid = np.linspace(-7, 7, 8)
    n = 10_000
    c = np.bincount([thompson_acquire(p, EMPTY, EMPTY, grid, np.random.default_rng([7, s])) for s in range(n)], minlength=8)
    assert np.all(np.abs(c - n / 8) <= 3 * math.sqrt(n * (1 / 8) * (7 / 8)))


def test_ts_empty_context_is_mirror_symmetric():
    p = make_predictor("gp", "matern52")
    grid = np.linspace(-2, 2, 64)
    c = np.bincount([thompson_acquire(p, EMPTY, EMPTY, grid, np.random.default_rng([8, s])) for s in range(4000)], minlength=64)
    z = (c - c[::-1]) / np.sqrt(np.maximum(c + c[::-1], 1))
    assert np.all(np.abs(z) <= 3)


def test_ucb_limits():
    p = FixedPredictor([0.0, 2.0, 1.0, 1.5], [3.0, 0.1, 0.5, 0.2])
    grid = np.arange(4.0)
    assert ucb_acquire(p, EMPTY, EMPTY, grid, beta=0.0) == 1
    assert ucb_acquire(p, EMPTY, EMPTY, grid, beta=1e6) == 0
    tie = FixedPredictor([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    assert ucb_acquire(tie, EMPTY, EMPTY, np.arange(3.0)) == 0


def test_ucb_hand_enumerated_five_points():
    # EQ prior k(r) = exp(-8 r^2), one noiseless observation y0 at x0
    p = make_predictor("gp", "eq")
    grid = np.array([-1.0, -0.5, 0.0, 0.25, 0.5])
    x0, y0 = 0.0, 0.8
    k = np.exp(-8 * (grid - x0) ** 2)
    score = k * y0 + 2 * np.sqrt(np.maximum(1 - k ** 2, 0))
    assert ucb_acquire(p, np.array([x0]), np.array([y0]), grid, 2.0) == int(np.argmax(score)) == 1  # -0.5 and 0.5 tie; lowest index wins
    mu, sd = p.moments(np.array([x0]), np.array([y0]), grid)
    np.testing.assert_allclose(mu, k * y0, atol=1e-9)
    np.testing.assert_allclose(sd, np.sqrt(1 - k ** 2), atol=1e-5)


def test_ts_rejects_factorised_predictor():
    p = make_predictor("convcnp", checkpoint=build_model("convcnp", CNN))
    grid = np.linspace(-2, 2, 16)
    with pytest.raises(ValueError, match="coherent"):
        thompson_acquire(p, EMPTY, EMPTY, grid, np.random.default_rng(0))
    assert 0 <= ucb_acquire(p, np.array([0.3]), np.array([1.0]), grid) < 16


def test_convnp_predictor_acquires():
    p = make_predictor("convnp", checkpoint=build_model("convnp", dict(CNN, latent_channels=2)))
    p.draws = 8
    grid = np.linspace(-2, 2, 16)
    a = thompson_acquire(p, np.array([0.3]), np.array([1.0]), grid, np.random.default_rng(4))
    b = thompson_acquire(p, np.array([0.3]), np.array([1.0]), grid, np.random.default_rng(4))
    assert a == b and 0 <= a < 16
    mu, sd = p.moments(np.array([0.3]), np.array([1.0]), grid, np.random.default_rng(0))
    assert mu.shape == sd.shape == (16,) and np.all(sd > 0)


def test_make_predictor_errors():
    with pytest.raises(ValueError):
        make_predictor("gp", "sawtooth")
    with pytest.raises(ValueError):
        make_predictor("random-forest")


def test_field_validation():
    with pytest.raises(ValueError):
        Field([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Field([0.0, 1.0], [1.0, np.inf])
    f = make_field("matern52", np.random.default_rng(0))
    assert f.grid.size == 64 and f.grid[0] == -2.0 and f.grid[-1] == 2.0


@pytest.mark.parametrize("method", ["TS", "UCB", "random"])
def test_episode_regret_properties(method):
    field = make_field("matern52", np.random.default_rng(1))
    p = make_predictor("gp", "matern52")
    c = run_episode(p, field, method, 15, np.random.default_rng(2))
    assert np.all(c.r >= 0) and np.all(np.diff(c.r) <= 0)
    np.testing.assert_allclose(c.rbar, [np.mean(c.r[: t + 1]) for t in range(15)], rtol=0, atol=1e-12)
    assert c.r[-1] == field.y.max() - field.y[c.queries].max()
    again = run_episode(p, field, method, 15, np.random.default_rng(2))
    np.testing.assert_array_equal(c.queries, again.queries)


def test_hitting_the_maximum_first_zeroes_regret():
    y = np.array([0.0, 3.0, 1.0, 2.0])
    field = Field(np.arange(4.0), y)
    p = FixedPredictor(y, np.zeros(4))
    c = run_episode(p, field, "TS", 6, np.random.default_rng(0))
    np.testing.assert_array_equal(c.r, 0.0)
    assert list(c.queries) == [1] * 6  # no dedup of repeated queries


def test_random_queries_are_uniform():
    field = Field(np.arange(5.0), np.arange(5.0))
    q = np.concatenate([run_episode(None, field, "random", 20, np.random.default_rng(s)).queries for s in range(500)])
    c = np.bincount(q, minlength=5)
    assert np.all(np.abs(c - 2000) <= 3 * math.sqrt(10_000 * 0.2 * 0.8))


def test_episode_argument_errors():
    field = Field(np.arange(3.0), np.zeros(3))
    with pytest.raises(ValueError):
        run_episode(None, field, "random", 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_episode(None, field, "EI", 3, np.random.default_rng(0))


def _curve(r):
    r = np.asarray(r, float)
    return RegretCurve(r, running_mean(r))


def test_average_regret_cases():
    a, b, c = _curve([3, 2, 0]), _curve([1, 1, 1]), _curve([4, 0, 0])
    mean, se = average_regret([a])
    np.testing.assert_array_equal(mean, a.rbar)
    np.testing.assert_array_equal(se, 0.0)
    mean, se = average_regret([a, a])
    np.testing.assert_allclose(mean, a.rbar, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(se, 0.0)
    m1, s1 = average_regret([a, b, c])
    m2, s2 = average_regret([c, a, b])
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_allclose(s1, s2, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        average_regret([a, _curve([1, 0])])
    with pytest.raises(ValueError):
        average_regret([])


def test_experiment_and_csv(tmp_path):
    p = make_predictor("gp", "matern52")
    res = run_experiment(p, "matern52", n_fields=3, iters=4, seed=5)
    again = run_experiment(p, "matern52", n_fields=3, iters=4, seed=5)
    for m in res:
        assert len(res[m]) == 3
        for x, y in zip(res[m], again[m]):
            np.testing.assert_array_equal(x.r, y.r)
    write_regret_csv(tmp_path / "r.csv", res)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "method,episode,t,r_t,rbar_t" and len(lines) == 1 + 3 * 3 * 4
