"""Soft argmax over correlation maps: densities, expectations and losses.

A map's axes are described by evenly spaced bin values plus an optional
period (``None`` for a non-circular axis).  The expectation is taken over a
window of ``+-W`` bins centred on the argmax, with circular values unwrapped
relative to the argmax; ``window=None`` gives the plain global expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NumericalError

DEFAULT_WINDOW = 4


@dataclass
class Temperature:
    """Solver temperature, stored as its logarithm so updates keep it positive."""

    log_value: float = math.log(10.0)
    learnable: bool = True

    @classmethod
    def of(cls, value, learnable=True):
        if not value > 0:
            raise ConfigError(f"temperature must be positive, got {value}")
        return cls(math.log(value), learnable)

    @property
    def value(self):
        return math.exp(self.log_value)


@dataclass(frozen=True, eq=False)
class Density:
    probs: np.ndarray
    axes: tuple
    periods: tuple
    logits: np.ndarray = None

    def __post_init__(self):
        if len(self.axes) != self.probs.ndim:
            raise ValueError("one axis description per map dimension is required")

    def argmax(self):
        idx = np.unravel_index(np.argmax(self.probs), self.probs.shape)
        return tuple(float(ax[i]) for ax, i in zip(self.axes, idx))


# ---------------------------------------------------------------- array level

def check_finite(corr):
    if not np.all(np.isfinite(corr)):
        raise NumericalError("correlation map contains NaN or Inf")


def softmax(corr, xi):
    z = xi * np.asarray(corr, float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(corr, xi):
    z = xi * np.asarray(corr, float)
    return z - logsumexp(z)


def window_index(shape, axes, periods, center, window):
    """Per-axis index arrays and (unwrapped) bin values of the expectation window."""
    idx, vals = [], []
    for n, ax, per, c in zip(shape, axes, periods, center):
        ax = np.asarray(ax, float)
        if window is None:
            i = np.arange(n)
            v = ax
        elif per is not None:
            w = min(window, (n - 1) // 2)
            off = np.arange(-w, w + 1)
            i = (c + off) % n
            step = ax[1] - ax[0] if n > 1 else 0.0
            v = ax[c] + off * step
        else:
            i = np.arange(max(0, c - window), min(n, c + window + 1))
            v = ax[i]
        idx.append(i)
        vals.append(v)
    return idx, vals


def windowed_expectation(corr, xi, axes, periods, window=DEFAULT_WINDOW, center=None):
    """Expectation of the bin values under ``softmax(xi * corr)`` restricted to a window.

    The window sits on the argmax unless ``center`` (an index tuple) pins it.
    Returns ``(estimate, cache)``; ``cache`` feeds :func:`windowed_expectation_vjp`.
    """
    corr = np.asarray(corr, float)
    if center is None:
        center = np.unravel_index(np.argmax(corr), corr.shape)
    idx, vals = window_index(corr.shape, axes, periods, center, window)
    block = corr[np.ix_(*idx)]
    p = softmax(block, xi)
    grids = np.meshgrid(*vals, indexing="ij")
    est = np.array([np.sum(p * g) for g in grids])
    cache = (idx, grids, block, p, est, tuple(int(c) for c in center))
    return est, cache


def windowed_expectation_vjp(cache, xi, g_est, shape):
    """Gradients w.r.t. the full map and the temperature; the window is held fixed."""
    idx, grids, block, p, est, _ = cache
    g_block = np.zeros_like(block)
    cbar = np.sum(p * block)
    g_xi = 0.0
    for gd, v, e in zip(g_est, grids, est):
        g_block += gd * xi * p * (v - e)
        g_xi += gd * np.sum(p * v * (block - cbar))
    g_corr = np.zeros(shape)
    np.add.at(g_corr, np.ix_(*idx), g_block)
    return g_corr, g_xi


def gaussian_log_target(shape, axes, periods, truth, sigma):
    """Log of a discretised Gaussian (std ``sigma`` bins) centred at ``truth``."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    logq = np.zeros(shape)
    for d, (n, ax, per, t) in enumerate(zip(shape, axes, periods, truth)):
        ax = np.asarray(ax, float)
        step = ax[1] - ax[0] if n > 1 else 1.0
        dist = (ax - t) / step
        if per is not None:
            nper = per / step
            dist = (dist + nper / 2) % nper - nper / 2
        sh = [1] * len(shape)
        sh[d] = n
        logq = logq + (-0.5 * (dist / sigma) ** 2).reshape(sh)
    return logq - logsumexp(logq)


def kld_from_logits(corr, xi, logq):
    """``KLD(softmax(xi corr) || q)`` and its gradients w.r.t. ``corr`` and ``xi``."""
    logp = log_softmax(corr, xi)
    p = np.exp(logp)
    r = logp - logq
    kld = float(np.sum(p * r))
    g_z = p * (r - kld)  # d kld / d (xi * corr)
    return kld, g_z * xi, float(np.sum(g_z * corr))


# ---------------------------------------------------------------- typed API

def soft_density(corr, xi, axes=None, periods=None):
    """Softmax density over a correlation map.

    ``corr`` may be a raw array or any map object exposing ``data`` and
    ``axes``/``bin_values``.
    """
    data = getattr(corr, "data", corr)
    data = np.asarray(data, float)
    check_finite(data)
    xi = xi.value if isinstance(xi, Temperature) else float(xi)
    if not xi > 0:
        raise ConfigError(f"temperature must be positive, got {xi}")
    if axes is None:
        axes = getattr(corr, "axes", None) or getattr(corr, "bin_values", None)
        if axes is None:
            axes = tuple(np.arange(n, dtype=float) for n in data.shape)
    if periods is None:
        periods = (None,) * data.ndim
    return Density(softmax(data, xi), tuple(axes), tuple(periods), xi * data)


def expectation(d, window=DEFAULT_WINDOW):
    """Estimate under a density; see the module docstring for the window rule."""
    center = np.unravel_index(np.argmax(d.probs), d.probs.shape)
    idx, vals = window_index(d.probs.shape, d.axes, d.periods, center, window)
    p = d.probs[np.ix_(*idx)]
    p = p / p.sum()
    grids = np.meshgrid(*vals, indexing="ij")
    est = tuple(float(np.sum(p * g)) for g in grids)
    return est[0] if len(est) == 1 else est


def l1_loss(est, truth, periods=None):
    est = np.atleast_1d(np.asarray(est, float))
    truth = np.atleast_1d(np.asarray(truth, float))
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    diff = est - truth
    if periods is not None:
        for i, per in enumerate(periods):
            if per is not None:
                diff[i] = (diff[i] + per / 2) % per - per / 2
    return float(np.sum(np.abs(diff)))


def kld_loss(d, truth, sigma=1.0):
    """``KLD(d || gaussian target at truth)`` with the target renormalised over bins."""
    truth = np.atleast_1d(np.asarray(truth, float))
    logq = gaussian_log_target(d.probs.shape, d.axes, d.periods, truth, sigma)
    if d.logits is not None:
        logp = d.logits - logsumexp(d.logits)
    else:
        with np.errstate(divide="ignore"):
            logp = np.log(d.probs)
    p = np.exp(logp)
    terms = np.where(p > 0, p * (logp - logq), 0.0)
    return max(0.0, float(np.sum(terms)))
