import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nematiq.noise import (
    StoppingTime,
    apply_semigroup,
    hitting_time,
    sample_path,
    stochastic_convolution,
    stopped_convolution,
)


def test_same_seed_same_path():
    a, b = sample_path(42, 1e-3, 200, 3), sample_path(42, 1e-3, 200, 3)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, sample_path(43, 1e-3, 200, 3).increments)


def test_channels_are_independent_streams():
    # adding channels never changes earlier ones
    a, b = sample_path(5, 1e-3, 100, 2), sample_path(5, 1e-3, 100, 4)
    assert np.array_equal(a.increments, b.increments[:2])


def test_variance_of_w1():
    w1 = np.array([sample_path(s, 0.01, 100, 1).values()[0, -1] for s in range(10_000)])
    assert 0.97 <= w1.var() <= 1.03


def test_coarsen_sums_increments():
    p = sample_path(3, 1e-3, 64, 2)
    c = p.coarsen(4)
    assert c.dt == pytest.approx(4e-3)
    assert np.allclose(c.values(), p.values()[:, ::4], atol=1e-14)
    with pytest.raises(ValueError):
        p.coarsen(3)


def test_bad_inputs():
    with pytest.raises(ValueError):
        sample_path(-1, 1e-3, 10, 1)
    with pytest.raises(ValueError):
        sample_path(0, 0.0, 10, 1)
    with pytest.raises(ValueError):
        StoppingTime(0.1, 1, "weird")
    with pytest.raises(ValueError):
        sample_path(0, 0.1, 10, 1).index_of(0.05)


def test_convolution_identity_and_zero():
    p = sample_path(1, 0.01, 50, 2)
    c = np.array([2.0, -1.0])
    xi = np.broadcast_to(c[None, :, None], (50, 2, 1)) * np.ones((50, 2, 1))
    # xi(t_m) maps channel c to a scalar field of length 1
    out = stochastic_convolution(xi, p, 0.5)
    assert out[0] == pytest.approx(float(c @ p.values()[:, -1]), abs=1e-14)
    assert np.all(stochastic_convolution(np.zeros((50, 2, 3)), p, 0.3) == 0.0)


def test_stopped_equals_full_when_tau_late():
    p = sample_path(8, 0.01, 40, 1)
    xi = np.random.default_rng(0).standard_normal((40, 1, 4))
    decay = np.array([0.0, 1.0, 2.0, 5.0])
    late = StoppingTime(0.4, 40)
    for t in (0.1, 0.25, 0.4):
        assert np.array_equal(stopped_convolution(xi, p, late, t, decay), stochastic_convolution(xi, p, t, decay))
    inf = StoppingTime.infinite(41)
    assert np.array_equal(stopped_convolution(xi, p, inf, 0.4, decay), stochastic_convolution(xi, p, 0.4, decay))


def test_heat_convolution_variance():
    # one mode with decay lam: Var = sum_m e^{-2 lam (t - t_m)} dt
    lam, dt, steps = 2.0, 0.01, 100
    vals = np.array(
        [stochastic_convolution(np.ones((steps, 1, 1)), sample_path(s, dt, steps, 1), 1.0, np.array([lam]))[0] for s in range(4000)]
    )
    exact = sum(math.exp(-2 * lam * (1.0 - m * dt)) * dt for m in range(steps))
    assert vals.var() == pytest.approx(exact, rel=0.07)


def test_hitting_time():
    p = sample_path(2, 0.01, 500, 1)
    tau = hitting_time(p, 0, 0.3)
    w = np.abs(p.values()[0])
    if tau.finite:
        assert w[tau.grid_index] >= 0.3 and np.all(w[: tau.grid_index] < 0.3)
    assert not hitting_time(p, 0, 1e9).finite


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), level=st.floats(0.05, 1.0), t_idx=st.integers(0, 60))
def test_stopped_convolution_identities(seed, level, t_idx):
    p = sample_path(seed, 0.01, 60, 2)
    xi = np.random.default_rng(seed).standard_normal((60, 2, 5))
    decay = np.array([0.0, 0.5, 1.0, 4.0, 9.0])
    tau = hitting_time(p, 0, level)
    t = t_idx * 0.01
    j = min(t_idx, tau.grid_index)
    s = j * 0.01
    lhs = apply_semigroup(stochastic_convolution(xi, p, s, decay), t - s, decay)
    assert np.abs(lhs - stopped_convolution(xi, p, tau, t, decay)).max() <= 1e-12
    assert np.abs(stochastic_convolution(xi, p, s, decay) - stopped_convolution(xi, p, tau, s, decay)).max() <= 1e-12
