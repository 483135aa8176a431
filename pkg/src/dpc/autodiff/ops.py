"""Differentiable operations used by the registration pipelines.

Each op takes :class:`~dpc.autodiff.tape.Var` inputs (raw arrays are wrapped
as constants) and returns a Var.  Adjoints of the linear maps come from the
array-level helpers in the numeric modules so the forward and backward
passes share one definition of every transform.
"""

from __future__ import annotations

import numpy as np
from numpy.fft import fftn, ifftn
from scipy import ndimage, signal

from .. import softsolve, spectral, spherical
from .tape import Var, record, var


def _v(x):
    return x if isinstance(x, Var) else var(x)


def _real_if(x, like):
    return np.real(x) if not np.iscomplexobj(like) else x


# ---------------------------------------------------------------- elementwise / algebra

def add(*xs):
    xs = [_v(x) for x in xs]
    out = sum(x.value for x in xs)
    return record(out, xs, lambda g: tuple(g for _ in xs))


def scale(x, c):
    x = _v(x)
    return record(c * x.value, [x], lambda g: (np.conj(c) * g,))


def weighted_sum(terms, weights):
    terms = [_v(t) for t in terms]
    out = sum(w * t.value for w, t in zip(weights, terms))
    return record(out, terms, lambda g: tuple(w * g for w in weights))


def exp(x):
    x = _v(x)
    y = np.exp(x.value)
    return record(y, [x], lambda g: (g * y,))


def index(x, i):
    x = _v(x)
    shape = np.shape(x.value)

    def vjp(g):
        out = np.zeros(shape, dtype=np.result_type(g, float))
        out[i] += g
        return (out,)

    return record(np.asarray(x.value)[i], [x], vjp)


def mul_const(x, c):
    """Elementwise product with a constant array (masks, weights)."""
    x = _v(x)
    return record(x.value * c, [x], lambda g: (_real_if(g * np.conj(c), x.value),))


def absolute(z):
    z = _v(z)
    a = np.abs(z.value)

    def vjp(g):
        safe = np.where(a > 0, a, 1.0)
        return (_real_if(np.where(a > 0, g * z.value / safe, 0.0), z.value),)

    return record(a, [z], vjp)


def normalize(x):
    """``x / ||x||`` for real or complex arrays."""
    x = _v(x)
    n = float(np.linalg.norm(x.value))
    if n == 0:
        from ..errors import DegenerateInput
        raise DegenerateInput("cannot normalise a zero array")
    y = x.value / n

    def vjp(g):
        c = np.real(np.vdot(y, g))
        return ((g - c * y) / n,)

    return record(y, [x], vjp)


def leaky_relu(x, slope):
    x = _v(x)
    m = np.where(x.value > 0, 1.0, slope)
    return record(x.value * m, [x], lambda g: (g * m,))


def sum_axis(x, axis):
    x = _v(x)
    shape = np.shape(x.value)
    return record(x.value.sum(axis=axis), [x],
                  lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def fold_half(x, axis=1):
    """Average the two halves of ``axis`` (period folding of a point-symmetric map)."""
    x = _v(x)
    n = x.value.shape[axis]
    a, b = np.split(x.value, 2, axis=axis)

    def vjp(g):
        return (np.concatenate([g / 2, g / 2], axis=axis),)

    assert n % 2 == 0
    return record((a + b) / 2, [x], vjp)


# ---------------------------------------------------------------- linear operators

def sparse_apply(M, x, shape):
    """``(M @ x.ravel()).reshape(shape)`` for a real sparse matrix ``M``."""
    x = _v(x)
    in_shape = np.shape(x.value)
    y = (M @ np.asarray(x.value).ravel()).reshape(shape)
    return record(y, [x], lambda g: ((M.T @ np.asarray(g).ravel()).reshape(in_shape),))


def dft(x):
    x = _v(x)
    return record(spectral.dft_array(x.value), [x],
                  lambda g: (_real_if(spectral.dft_adjoint(g), x.value),))


def magnitude(x):
    return absolute(dft(x))


def correlate(g1, g2, eps=spectral.DEFAULT_EPS):
    """Phase-correlation map; see :func:`dpc.spectral.correlate` for the shift convention."""
    g1, g2 = _v(g1), _v(g2)
    G1, G2 = fftn(g1.value), fftn(g2.value)
    C, floor = spectral.cross_power_array(G1, G2, eps)
    out = spectral.corr_from_cross_array(C)

    def vjp(g):
        gC = spectral.corr_from_cross_adjoint(g)
        gG1, gG2 = spectral.cross_power_adjoint(G1, G2, floor, gC)
        n = gC.size
        return (np.real(n * ifftn(gG1)), np.real(n * ifftn(gG2)))

    return record(out, [g1, g2], vjp)


def sph_ft(s):
    s = _v(s)
    return record(spherical.sph_ft_array(s.value), [s], lambda g: (spherical.sph_ft_adjoint(g),))


def so3_correlate(SA, SB):
    """Real SO(3) correlation volume from two coefficient arrays."""
    SA, SB = _v(SA), _v(SB)
    F = spherical.so3_product(SA.value, SB.value)
    f = spherical.inv_so3_array(F)

    def vjp(g):
        gF = spherical.inv_so3_adjoint(g)
        return spherical.so3_product_adjoint(SA.value, SB.value, gF)

    return record(f, [SA, SB], vjp)


def conv(x, k, bias=0.0):
    """Same-size zero-padded convolution with an odd kernel plus scalar bias."""
    x, k, bias = _v(x), _v(k), _v(bias)
    xv = np.asarray(x.value, float)
    kf = np.flip(np.asarray(k.value, float))
    y = ndimage.correlate(xv, kf, mode="constant", cval=0.0) + bias.value

    def vjp(g):
        gx = ndimage.convolve(g, kf, mode="constant", cval=0.0)
        pad = [(s // 2, s // 2) for s in kf.shape]
        gk = np.flip(signal.correlate(np.pad(xv, pad), g, mode="valid"))
        return gx, gk, np.sum(g)

    return record(y, [x, k, bias], vjp)


# ---------------------------------------------------------------- solver heads

def soft_expectation(corr, xi, axes, periods, window=softsolve.DEFAULT_WINDOW, center=None):
    """Windowed soft-argmax of ``softmax(xi * corr)``; returns a vector Var.

    The window centre used is stored on the output as ``.name`` so a caller
    can pin it when re-evaluating (see :mod:`dpc.autodiff.gradcheck`).
    """
    corr, xi = _v(corr), _v(xi)
    est, cache = softsolve.windowed_expectation(corr.value, float(xi.value), axes, periods, window, center)
    shape = np.shape(corr.value)

    def vjp(g):
        gc, gxi = softsolve.windowed_expectation_vjp(cache, float(xi.value), np.atleast_1d(g), shape)
        return gc, gxi

    out = record(est, [corr, xi], vjp)
    out.name = cache[-1]
    return out


def kld(corr, xi, axes, periods, truth, sigma=1.0):
    """``KLD(softmax(xi corr) || gaussian target)`` as a scalar Var."""
    corr, xi = _v(corr), _v(xi)
    logq = softsolve.gaussian_log_target(np.shape(corr.value), axes, periods, np.atleast_1d(truth), sigma)
    val, gc, gxi = softsolve.kld_from_logits(corr.value, float(xi.value), logq)
    return record(np.float64(val), [corr, xi], lambda g: (g * gc, g * gxi))


def l1(est, truth, periods=None):
    est = _v(est)
    e = np.atleast_1d(np.asarray(est.value, float))
    d = e - np.atleast_1d(np.asarray(truth, float))
    if periods is not None:
        for i, per in enumerate(periods):
            if per is not None:
                d[i] = (d[i] + per / 2) % per - per / 2
    sgn = np.sign(d).reshape(np.shape(est.value))
    return record(np.float64(np.abs(d).sum()), [est], lambda g: (g * sgn,))
