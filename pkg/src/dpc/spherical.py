"""Spherical representation and SO(3) correlation.

Sampling is the equiangular Driscoll-Healy grid of bandwidth ``B``:
``theta_a = pi (2a + 1) / 4B`` and ``phi_b = pi b / B`` for ``a, b < 2B``.
Spherical harmonics are the orthonormal Condon-Shortley ones,

    Y^l_m(theta, phi) = sqrt((2l + 1) / 4 pi) d^l_{m0}(theta) exp(i m phi),

so that ``sph_ft`` returns ``S^l_m = int s conj(Y^l_m)`` exactly for
band-limited input (a constant ``c`` maps to ``S^0_0 = c sqrt(4 pi)``).
Coefficients are stored densely as ``(B, 2B - 1)`` with order ``m`` at
column ``m + B - 1``; unused slots are zero.

Correlation volumes live on the ZYZ Euler grid ``alpha_i = pi i / B``,
``beta_j = theta_j`` and ``gamma_k = pi k / B``, with
``R = Rz(alpha) Ry(beta) Rz(gamma)``.
"""

from __future__ import annotations

import functools
import logging
import math
import os
from dataclasses import dataclass
from math import lgamma
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numpy.fft import fft, fft2, ifft, ifft2

from .errors import ShapeError
from .grid import Grid, euler_to_matrix, interp_matrix

log = logging.getLogger(__name__)

# full Wigner tables above this bandwidth are generated per beta instead of cached
_TABLE_CACHE_MAX_B = 32


@dataclass(frozen=True, eq=False)
class SphereGrid:
    bandwidth: int
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        B = int(self.bandwidth)
        if d.shape != (2 * B, 2 * B):
            raise ShapeError(f"sphere grid must be (2B, 2B) for B={B}, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ShapeError("sphere grid contains non-finite values")
        object.__setattr__(self, "data", d)


@dataclass(frozen=True, eq=False)
class SphCoeffs:
    bandwidth: int
    data: np.ndarray

    def __post_init__(self):
        B = int(self.bandwidth)
        if self.data.shape != (B, 2 * B - 1):
            raise ShapeError(f"coefficients must be (B, 2B-1) for B={B}, got {self.data.shape}")

    def get(self, l, m):
        return self.data[l, m + self.bandwidth - 1]


@dataclass(frozen=True, eq=False)
class So3Map:
    bandwidth: int
    data: np.ndarray

    @property
    def axes(self):
        return euler_axes(self.bandwidth)

    def peak(self):
        """Euler triple of the maximum."""
        idx = np.unravel_index(np.argmax(self.data), self.data.shape)
        return tuple(float(ax[i]) for ax, i in zip(self.axes, idx))


# ---------------------------------------------------------------- sampling grids

def dh_thetas(B):
    return np.pi * (2 * np.arange(2 * B) + 1) / (4 * B)


def dh_phis(B):
    return np.pi * np.arange(2 * B) / B


def euler_axes(B):
    return dh_phis(B), dh_thetas(B), dh_phis(B)


@functools.lru_cache(maxsize=None)
def dh_weights(B):
    """Quadrature weights with ``sum_a w_a f(theta_a) = int f sin`` (exact below degree 2B)."""
    a = np.arange(2 * B)
    k = np.arange(B)
    th = dh_thetas(B)
    inner = np.sin(np.outer(2 * a + 1, 2 * k + 1) * np.pi / (4 * B)) / (2 * k + 1)
    w = (2.0 / B) * np.sin(th) * inner.sum(axis=1)
    w.flags.writeable = False
    return w


# ---------------------------------------------------------------- Wigner d

def _seed(j, mp, m, beta):
    """``d^j_{mp,m}(beta)`` for ``j = max(|mp|, |m|)`` (single-term Wigner sum)."""
    if j == mp or j == -m:
        s = 0
    elif j == -mp:
        s = j + m
    else:  # j == m
        s = j - mp
    lg = 0.5 * (lgamma(j + mp + 1) + lgamma(j - mp + 1) + lgamma(j + m + 1) + lgamma(j - m + 1))
    lg -= lgamma(j + m - s + 1) + lgamma(s + 1) + lgamma(mp - m + s + 1) + lgamma(j - mp - s + 1)
    sign = -1.0 if (mp - m + s) % 2 else 1.0
    return sign * math.exp(lg) * np.cos(beta / 2) ** (2 * j + m - mp - 2 * s) * np.sin(beta / 2) ** (mp - m + 2 * s)


def wigner_d(L, betas):
    """Wigner small-d table ``d[l, mp + L - 1, m + L - 1, j] = d^l_{mp m}(betas[j])``.

    Entries with ``max(|mp|, |m|) = l`` are seeded in closed form; the rest
    follow the three-term recurrence in ``l``.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    o = L - 1
    d = np.zeros((L, 2 * L - 1, 2 * L - 1, len(betas)))
    ms = np.arange(-o, o + 1)
    MP, M = np.meshgrid(ms, ms, indexing="ij")
    cosb = np.cos(betas)
    for J in range(L):
        for mp in range(-J, J + 1):
            for m in (-J, J) if abs(mp) < J else range(-J, J + 1):
                d[J, mp + o, m + o] = _seed(J, mp, m, betas)
        if J == 0:
            continue
        j = J - 1
        inner = (np.abs(MP) <= j) & (np.abs(M) <= j)
        den = np.sqrt(np.where(inner, ((j + 1) ** 2 - MP ** 2) * ((j + 1) ** 2 - M ** 2), 1.0))
        c1 = np.where(inner, (j + 1) * (2 * j + 1) / den, 0.0)
        t = MP * M / (j * (j + 1)) if j > 0 else np.zeros_like(den)
        val = c1[..., None] * (cosb[None, None, :] - t[..., None]) * d[j]
        if j > 0:
            c2 = np.where(inner, (j + 1) * np.sqrt(np.abs((j * j - MP ** 2) * (j * j - M ** 2))) / (j * den), 0.0)
            val -= c2[..., None] * d[j - 1]
        d[J][inner] = val[inner]
    return d


def _disk_cache_path(name):
    root = os.environ.get("DPC_TABLE_CACHE")
    return Path(root) / name if root else None


@functools.lru_cache(maxsize=4)
def wigner_table(B):
    """Cached ``wigner_d(B, beta grid)``; persisted under ``$DPC_TABLE_CACHE`` if set."""
    path = _disk_cache_path(f"wigner_d_B{B}.npy")
    if path is not None and path.exists():
        d = np.load(path)
    else:
        d = wigner_d(B, dh_thetas(B))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, d)
    d.flags.writeable = False
    return d


def _wigner_chunks(B, chunk=8):
    """Yield ``(beta slice, table)`` pairs covering the beta grid."""
    if B <= _TABLE_CACHE_MAX_B:
        yield slice(0, 2 * B), wigner_table(B)
        return
    th = dh_thetas(B)
    for s in range(0, 2 * B, chunk):
        sl = slice(s, min(2 * B, s + chunk))
        yield sl, wigner_d(B, th[sl])


@functools.lru_cache(maxsize=8)
def harmonic_table(B):
    """``Yt[l, m + B - 1, a] = sqrt((2l+1)/4pi) d^l_{m0}(theta_a)``."""
    if B <= _TABLE_CACHE_MAX_B:
        d0 = wigner_table(B)[:, :, B - 1, :]
    else:
        d0 = np.concatenate([t[:, :, B - 1, :] for _, t in _wigner_chunks(B)], axis=-1)
    norm = np.sqrt((2 * np.arange(B) + 1) / (4 * np.pi))
    Yt = norm[:, None, None] * d0
    Yt.flags.writeable = False
    return Yt


def _order_index(B):
    """Column of order ``m`` in a length-2B FFT axis, for ``m = -(B-1)..B-1``."""
    return np.arange(-(B - 1), B) % (2 * B)


# ---------------------------------------------------------------- spherical FT

def sph_ft_array(s):
    s = np.asarray(s, dtype=float)
    B = s.shape[0] // 2
    Fm = fft(s, axis=1)[:, _order_index(B)]  # (a, m)
    wY = harmonic_table(B) * dh_weights(B)[None, None, :]
    return (np.pi / B) * np.einsum("lma,am->lm", wY, Fm)


def sph_ft_adjoint(gS):
    """Real gradient on the sphere samples given ``dL/dS``."""
    B = gS.shape[0]
    wY = harmonic_table(B) * dh_weights(B)[None, None, :]
    gF = np.zeros((2 * B, 2 * B), dtype=complex)
    gF[:, _order_index(B)] = (np.pi / B) * np.einsum("lma,lm->am", wY, gS)
    return np.real(2 * B * ifft(gF, axis=1))


def inv_sph_ft_array(S):
    B = S.shape[0]
    X = np.zeros((2 * B, 2 * B), dtype=complex)
    X[:, _order_index(B)] = np.einsum("lma,lm->am", harmonic_table(B), S)
    return np.real(2 * B * ifft(X, axis=1))


def sph_ft(s):
    """Spherical harmonic coefficients of a DH-sampled function."""
    return SphCoeffs(s.bandwidth, sph_ft_array(s.data))


def inv_sph_ft(S):
    return SphereGrid(S.bandwidth, inv_sph_ft_array(S.data))


# ---------------------------------------------------------------- SO(3) correlation

def so3_product(SA, SB):
    """``F[l, n, m] = SA^l_m conj(SB^l_n)``."""
    return np.conj(SB)[:, :, None] * SA[:, None, :]


def so3_product_adjoint(SA, SB, gF):
    gA = np.einsum("lnm,ln->lm", gF, SB)
    gB = np.einsum("lnm,lm->ln", np.conj(gF), SA)
    return gA, gB


def inv_so3_array(F):
    """Real volume ``f[i, j, k] = Re sum F[l,n,m] D^l_{nm}(alpha_i, beta_j, gamma_k)``.

    With ``D^l_{nm} = exp(-i n alpha) d^l_{nm}(beta) exp(-i m gamma)``.
    """
    B = F.shape[0]
    idx = _order_index(B)
    X = np.zeros((2 * B, 2 * B, 2 * B), dtype=complex)
    for sl, d in _wigner_chunks(B):
        T = np.einsum("lnmj,lnm->jnm", d, F)
        X[sl][:, idx[:, None], idx[None, :]] = T
    return np.real(fft2(X, axes=(1, 2))).transpose(1, 0, 2)


def inv_so3_adjoint(gf):
    B = gf.shape[0] // 2
    idx = _order_index(B)
    gX = (2 * B) ** 2 * ifft2(np.asarray(gf).transpose(1, 0, 2), axes=(1, 2))
    gT = gX[:, idx[:, None], idx[None, :]]
    gF = np.zeros((B, 2 * B - 1, 2 * B - 1), dtype=complex)
    for sl, d in _wigner_chunks(B):
        gF += np.einsum("lnmj,jnm->lnm", d, gT[sl])
    return gF


def so3_correlate(S1, S2):
    """Correlation ``f(R) = int s1(x) s2(R x) dx`` on the Euler grid.

    The maximum sits at the rotation ``R`` with ``s2(R x) = s1(x)``.
    """
    if S1.bandwidth != S2.bandwidth:
        raise ShapeError(f"bandwidth mismatch: {S1.bandwidth} vs {S2.bandwidth}")
    return So3Map(S1.bandwidth, inv_so3_array(so3_product(S1.data, S2.data)))


def euler_grid_matrix(B, i, j, k):
    a, b, g = euler_axes(B)
    return euler_to_matrix(a[i], b[j], g[k])


# ---------------------------------------------------------------- radial aggregation

def dh_directions(B):
    th, ph = np.meshgrid(dh_thetas(B), dh_phis(B), indexing="ij")
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1).reshape(-1, 3)


@functools.lru_cache(maxsize=8)
def radial_matrix(B, n_radial=None):
    """Sparse ``(4B^2, (2B)^3)`` operator summing trilinear samples along each ray.

    Samples sit at ``n_radial`` evenly spaced radii in ``[1, B - 1]``; the
    zero-frequency cell is never read.
    """
    n = B if n_radial is None else int(n_radial)
    if n < 2:
        raise ValueError("n_radial must be at least 2")
    u = dh_directions(B)
    radii = np.linspace(1.0, B - 1.0, n)
    pts = (radii[:, None, None] * u[None, :, :]).reshape(-1, 3) + B
    M = interp_matrix(pts, (2 * B,) * 3)
    rows = np.tile(np.arange(len(u)), n)
    agg = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(len(u), len(rows)))
    return (agg @ M).tocsr()


def radial_project(mag, n_radial=None):
    """Scale-invariant sphere function from a centered 3D magnitude spectrum."""
    arr = mag.data if isinstance(mag, Grid) else np.asarray(mag)
    B = arr.shape[0] // 2
    s = (radial_matrix(B, n_radial) @ arr.ravel()).reshape(2 * B, 2 * B)
    n = np.linalg.norm(s)
    return SphereGrid(B, s / n if n > 0 else s)
