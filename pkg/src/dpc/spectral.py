"""Discrete Fourier transforms, magnitude spectra and phase correlation.

The forward transform carries the ``1/(2B)^d`` factor,

    G(j) = (2B)^-d * sum_k g(k) exp(-2 pi i j.k / 2B),

with both ``k`` and ``j`` stored at offset ``B`` (centered layout).  Each
linear map has an ``*_adjoint`` companion used by the reverse-mode code; the
adjoint is taken with respect to the real inner product ``Re(<a, b>)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.fft import fftn, fftshift, ifftn, ifftshift

from .errors import ShapeError
from .grid import Grid

DEFAULT_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Spectrum:
    bandwidth: int
    data: np.ndarray
    centered: bool = True


@dataclass(frozen=True, eq=False)
class CorrMap:
    """Correlation scores indexed by signed shift; ``data[i]`` is shift ``i - B``."""

    data: np.ndarray
    bin_values: tuple

    def peak(self):
        """Signed shift of the maximum, one entry per axis."""
        idx = np.unravel_index(np.argmax(self.data), self.data.shape)
        return tuple(float(ax[i]) for ax, i in zip(self.bin_values, idx))


def _arr(g):
    return g.data if isinstance(g, (Grid, Spectrum)) else np.asarray(g)


# ---------------------------------------------------------------- array level

def dft_array(x):
    x = np.asarray(x)
    return fftshift(fftn(ifftshift(x))) / x.size


def dft_adjoint(y):
    """``A^H y`` for :func:`dft_array`; take ``.real`` for a real-input grid."""
    y = np.asarray(y)
    return fftshift(ifftn(ifftshift(y)))


def idft_array(Y):
    Y = np.asarray(Y)
    return fftshift(ifftn(ifftshift(Y))) * Y.size


def cross_power_array(G1, G2, eps=DEFAULT_EPS):
    """``G1 conj(G2) / (|G2|^2 + eps * mean|G2|^2)`` elementwise."""
    if G1.shape != G2.shape:
        raise ShapeError(f"spectrum shapes differ: {G1.shape} vs {G2.shape}")
    p2 = np.abs(G2) ** 2
    floor = eps * max(float(p2.mean()), 1e-300)
    return G1 * np.conj(G2) / (p2 + floor), floor


def cross_power_adjoint(G1, G2, floor, gC):
    """Gradients of a real loss w.r.t. ``G1`` and ``G2`` given ``dL/dC``.

    Includes the dependence of the floor on ``G2``; bins where ``|G2|^2`` is
    comparable to the floor are common for smooth grids.
    """
    den = np.abs(G2) ** 2 + floor
    g1 = gC * G2 / den
    g2 = -np.conj(G1) * G2 ** 2 / den ** 2 * gC + G1 * floor / den ** 2 * np.conj(gC)
    energy = float(np.sum(np.abs(G2) ** 2))
    if energy > 0:
        C = G1 * np.conj(G2) / den
        g_floor = -np.sum(np.real(np.conj(gC) * C / den))
        g2 = g2 + g_floor * 2.0 * floor / energy * G2
    return g1, g2


def corr_from_cross_array(C):
    """Real correlation map indexed by signed shift, peak-normalised.

    A forward transform is used so that entry ``s`` collects the phase ramp
    of a shift by ``+s``; a perfect match peaks at 1.
    """
    return fftshift(np.real(fftn(C))) / C.size


def corr_from_cross_adjoint(gcorr):
    return ifftn(ifftshift(gcorr))


def correlate_array(g1, g2, eps=DEFAULT_EPS):
    g1 = np.asarray(g1, float)
    g2 = np.asarray(g2, float)
    if g1.shape != g2.shape:
        raise ShapeError(f"grid shapes differ: {g1.shape} vs {g2.shape}")
    C, _ = cross_power_array(fftn(g1), fftn(g2), eps)
    return corr_from_cross_array(C)


def shift_axes(shape):
    return tuple(np.arange(-(n // 2), n - n // 2, dtype=float) for n in shape)


# ---------------------------------------------------------------- typed API

def dft(g):
    """Centered DFT of a grid."""
    a = _arr(g)
    return Spectrum(a.shape[0] // 2, dft_array(a), True)


def idft(S):
    """Inverse of :func:`dft`; returns the (complex) array."""
    return idft_array(_arr(S))


def magnitude_spectrum(g):
    """Centered ``|DFT(g)|``; same container type as the input."""
    mag = np.abs(dft_array(_arr(g)))
    return g.replace(mag) if isinstance(g, Grid) else mag


def cross_power(G1, G2, eps=DEFAULT_EPS):
    a, b = _arr(G1), _arr(G2)
    if isinstance(G1, Spectrum) and isinstance(G2, Spectrum) and G1.centered != G2.centered:
        raise ShapeError("cannot mix centered and uncentered spectra")
    C, _ = cross_power_array(a, b, eps)
    centered = G1.centered if isinstance(G1, Spectrum) else True
    return Spectrum(a.shape[0] // 2, C, centered)


def correlate(g1, g2, eps=DEFAULT_EPS):
    """Phase correlation map of two grids.

    The peak sits at the shift ``s`` for which ``g2(k) = g1(k - s)``.
    """
    a, b = _arr(g1), _arr(g2)
    if a.shape != b.shape:
        raise ShapeError(f"grid shapes differ: {a.shape} vs {b.shape}")
    C, _ = cross_power_array(fftn(a), fftn(b), eps)
    imag = np.abs(np.imag(fftn(C))).max() / C.size
    if imag > 1e-4 * max(1.0, np.abs(C).max()):
        raise ShapeError(f"correlation has imaginary residue {imag:.3g}; inputs not real?")
    return CorrMap(corr_from_cross_array(C), shift_axes(a.shape))
