import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpc.errors import ConfigError, NumericalError
from dpc.softsolve import Temperature, expectation, kld_loss, l1_loss, soft_density, windowed_expectation

finite = st.floats(-5, 5, allow_nan=False)


def test_constant_map_uniform():
    d = soft_density(np.zeros((4, 5)), 10.0)
    np.testing.assert_allclose(d.probs, 1 / 20)


def test_sharp_limit():
    c = np.zeros(7)
    c[2] = 0.01
    assert soft_density(c, 1e3 / 0.01 * 10).probs[2] > 0.999


def test_three_bin_softmax_values():
    d = soft_density(np.array([1.0, 2.0, 3.0]), 1.0, (np.array([-1.0, 0.0, 1.0]),))
    np.testing.assert_allclose(d.probs, [0.0900, 0.2447, 0.6652], atol=1e-4)
    assert expectation(d, window=None) == pytest.approx(0.5752, abs=1e-3)


def test_expectation_examples():
    ax = (np.arange(-4, 4, dtype=float),)
    c = np.full(8, -50.0)
    c[6] = 0
    assert expectation(soft_density(c, 1.0, ax)) == pytest.approx(2.0, abs=1e-12)
    c = np.full(8, -50.0)
    c[[3, 5]] = 0
    assert expectation(soft_density(c, 1.0, ax)) == pytest.approx(0.0, abs=1e-12)


def test_circular_window_unwraps():
    # mass split across the wrap point of a 2*pi periodic axis
    n = 16
    ax = (2 * np.pi * np.arange(n) / n,)
    c = np.full(n, -50.0)
    c[0] = c[n - 1] = 0.0
    c[0] += 1e-9
    est = expectation(soft_density(c, 1.0, ax, (2 * np.pi,)))
    assert est == pytest.approx(-np.pi / n, abs=1e-6)


def test_soft_density_errors():
    with pytest.raises(NumericalError):
        soft_density(np.array([0.0, np.nan]), 1.0)
    with pytest.raises(ConfigError):
        soft_density(np.zeros(3), 0.0)
    with pytest.raises(ConfigError):
        Temperature.of(-1.0)
    assert Temperature.of(10.0).value == pytest.approx(10.0)


def test_l1_examples():
    assert l1_loss([1.0, 2.0], [1.0, 2.0]) == 0
    assert l1_loss([0.1], [2 * math.pi - 0.1], (2 * math.pi,)) == pytest.approx(0.2)


def test_kld_self_is_zero():
    ax = (np.arange(-4, 4, dtype=float),)
    logq = -0.5 * (ax[0] - 1.0) ** 2
    d = soft_density(logq, 1.0, ax)
    assert kld_loss(d, [1.0], 1.0) == pytest.approx(0.0, abs=1e-6)


def test_kld_uniform_vs_narrow_target():
    ax = (np.arange(4, dtype=float),)
    d = soft_density(np.zeros(4), 1.0, ax)
    w = np.exp(-0.5 * ((ax[0] - 1.0) / 0.5) ** 2)
    q = w / w.sum()
    hand = sum(0.25 * math.log(0.25 / qi) for qi in q)
    assert kld_loss(d, [1.0], 0.5) == pytest.approx(hand, abs=1e-4)
    with pytest.raises(ConfigError):
        kld_loss(d, [1.0], 0.0)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 12, elements=finite), st.floats(0.01, 100), st.floats(-10, 10))
def test_shift_invariance_and_argmax(c, xi, shift):
    d1 = soft_density(c, xi)
    d2 = soft_density(c + shift, xi)
    np.testing.assert_allclose(d1.probs, d2.probs, atol=1e-9)
    assert abs(d1.probs.sum() - 1) < 1e-6 and np.all(d1.probs >= 0)
    assert c[np.argmax(d1.probs)] == c.max()


@settings(max_examples=40, deadline=None)
@given(arrays(float, 10, elements=finite), st.floats(0.1, 5))
def test_kld_nonnegative(c, sigma):
    d = soft_density(c, 3.0, (np.arange(10, dtype=float),))
    assert kld_loss(d, [4.0], sigma) >= 0


def test_sharper_temperature_moves_towards_argmax(rng):
    ax = (np.arange(-8, 8, dtype=float),)
    for _ in range(20):
        c = rng.normal(size=16)
        am = ax[0][np.argmax(c)]
        errs = [abs(windowed_expectation(c, xi, ax, (None,), None)[0][0] - am) for xi in (1, 10, 100)]
        assert errs[0] >= errs[1] - 1e-12 and errs[1] >= errs[2] - 1e-12
