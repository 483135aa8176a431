"""Log-polar resampling of centered 2D spectra and radial profiles.

Rows of a log-polar grid are log-radius samples ``l_i`` spaced evenly over
``[log r_min, log(B - 1)]``; columns are angles ``phi_b = pi b / B``.  A point
at radius ``exp(l)`` and angle ``phi`` reads the centered image at
``(B + exp(l) cos phi, B + exp(l) sin phi)`` (axis 0, axis 1).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .grid import Grid, Grid2, Grid3, interp_matrix


@dataclass(frozen=True, eq=False)
class LogPolarGrid:
    data: np.ndarray
    r_axis: np.ndarray
    a_axis: np.ndarray

    @property
    def bin_width(self):
        return float(self.r_axis[1] - self.r_axis[0])


@dataclass(frozen=True, eq=False)
class RadialProfile:
    data: np.ndarray
    r_axis: np.ndarray

    @property
    def bin_width(self):
        return float(self.r_axis[1] - self.r_axis[0])


def logpolar_axes(B, r_min=1.0):
    if r_min < 1:
        raise ValueError(f"r_min must be >= 1, got {r_min}")
    if B - 1 <= r_min:
        raise ValueError(f"bandwidth {B} too small for r_min {r_min}")
    r = np.linspace(np.log(r_min), np.log(B - 1), 2 * B)
    a = np.pi * np.arange(2 * B) / B
    return r, a


@functools.lru_cache(maxsize=8)
def logpolar_matrix(B, r_min=1.0):
    """Sparse ``(4B^2, 4B^2)`` bilinear sampling operator; output is row-major (l, phi)."""
    r, a = logpolar_axes(B, r_min)
    rad = np.exp(r)[:, None]
    pts = np.stack([rad * np.cos(a)[None, :], rad * np.sin(a)[None, :]], axis=-1).reshape(-1, 2)
    return interp_matrix(pts + B, (2 * B, 2 * B))


def accumulate_axis(mag, axis=0):
    """Sum a 3D grid along one axis."""
    arr = mag.data if isinstance(mag, Grid) else np.asarray(mag)
    out = arr.sum(axis=axis)
    if isinstance(mag, Grid3):
        return Grid2(mag.bandwidth, out, mag.extent)
    return out


def accumulate_adjoint(g2, axis=0, n=None):
    n = g2.shape[0] if n is None else n
    return np.repeat(np.expand_dims(g2, axis), n, axis=axis)


def to_logpolar(g, r_min=1.0):
    arr = g.data if isinstance(g, Grid) else np.asarray(g)
    B = arr.shape[0] // 2
    r, a = logpolar_axes(B, r_min)
    data = (logpolar_matrix(B, float(r_min)) @ arr.ravel()).reshape(2 * B, 2 * B)
    return LogPolarGrid(data, r, a)


def radial_profile(lp):
    """Sum of a log-polar grid over its angle axis."""
    return RadialProfile(lp.data.sum(axis=1), lp.r_axis)
