"""End-to-end registration: 7DoF between volumes and 4DoF between images.

Pose convention: ``register3(g1, g2)`` returns ``p`` with
``g2 ~ apply_pose3(g1, p)``, i.e. ``g2(k) = g1(mu R k - t)``.

Stage order follows the classical decoupling.  Rotation comes from the
SO(3) correlation of scale-invariant spherical signatures of the magnitude
spectra, scale from a log-radius profile of the rotation-compensated
spectrum, and translation from plain phase correlation once rotation and
scale are undone.  Every stage is built from :mod:`dpc.autodiff.ops`, so the
same code runs inference and records a tape for training.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import softsolve
from .autodiff import ops
from .autodiff.filters import extract
from .autodiff.tape import Var, var
from .errors import ConfigError, DPCError, ShapeError, StageError
from .grid import Grid, Grid2, Grid3, PointCloud, Pose4, Pose7, euler_to_matrix, pose_matrix, voxelize
from .logpolar import logpolar_axes, logpolar_matrix
from .spectral import DEFAULT_EPS, shift_axes
from .spherical import euler_axes, radial_matrix

log = logging.getLogger(__name__)
TWO_PI = 2.0 * math.pi


@dataclass
class SolverConfig:
    """Numerical settings shared by both pipelines.

    ``window=None`` switches the soft expectation to a global one; the
    ``argmax`` flag makes compensation use the raw peak instead.
    """

    eps: float = DEFAULT_EPS
    xi_r: float = 10.0
    xi_mu: float = 10.0
    xi_t: float = 10.0
    window: int | None = softsolve.DEFAULT_WINDOW
    n_radial: int | None = None
    axis: int = 0
    r_min: float = 1.0
    argmax: bool = False
    ramp: float = 1.0
    scale_mode: str = "slice"
    centers: dict | None = None
    bandwidth: int = 32
    extent: float = 2.0

    def __post_init__(self):
        for name in ("xi_r", "xi_mu", "xi_t", "extent"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.window is not None and self.window < 0:
            raise ConfigError(f"window must be >= 0, got {self.window}")
        if self.scale_mode not in ("slice", "profile"):
            raise ConfigError(f"scale_mode must be 'slice' or 'profile', got {self.scale_mode!r}")
        if self.axis not in (0, 1, 2):
            raise ConfigError(f"axis must be 0, 1 or 2, got {self.axis}")


@dataclass
class Registration3Result:
    pose: Pose7
    densities: dict
    peaks: dict
    timings: dict = field(default_factory=dict)

    def record(self):
        t, e = self.pose.t, self.pose.euler
        vals = [*t, *e, self.pose.mu, self.peaks["rotation"], self.peaks["scale"], self.peaks["translation"]]
        return " ".join(f"{v:.6g}" for v in vals)


@dataclass
class Registration2Result:
    pose: Pose4
    rot_scale: softsolve.Density
    translation: softsolve.Density
    peaks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def record(self):
        return " ".join(f"{v:.6g}" for v in (*self.pose.t, self.pose.theta, self.pose.mu))


# ---------------------------------------------------------------- helpers

def _xi(stack, name, cfg):
    if stack is not None:
        return stack.xi(name)
    return var(np.float64({"r": cfg.xi_r, "mu": cfg.xi_mu, "t": cfg.xi_t}[name]))


def _density(corr, xi, axes, periods):
    return softsolve.soft_density(corr.value, float(xi.value), axes, periods)


def _estimate(corr, xi, axes, periods, cfg, stage=None):
    """Soft (or hard) estimate as a Var plus the density.

    ``cfg.centers`` may pin the expectation window of a stage; this exists for
    gradient checking, where the window must not move between evaluations.
    """
    softsolve.check_finite(corr.value)
    d = _density(corr, xi, axes, periods)
    center = (cfg.centers or {}).get(stage)
    est = ops.soft_expectation(corr, xi, axes, periods, cfg.window, center)
    if cfg.argmax:
        est = var(np.asarray(d.argmax()))
    return est, d


def _data(g):
    return g.data if isinstance(g, Grid) else g


def _bandwidth(x):
    v = x.value if isinstance(x, Var) else _data(x)
    return np.shape(v)[0] // 2


def _staged(name):
    def deco(fn):
        def wrapper(*a, **k):
            try:
                return fn(*a, **k)
            except StageError:
                raise
            except DPCError as e:
                raise StageError(name, e) from e
        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        return wrapper
    return deco


def rotation_axes(B):
    return euler_axes(B), (TWO_PI, None, TWO_PI)


def scale_axes(B, r_min=1.0):
    dl = float(np.diff(logpolar_axes(B, r_min)[0][:2])[0])
    return (shift_axes((2 * B,))[0] * dl,), (2 * B * dl,)


def translation_axes(shape):
    return shift_axes(shape), tuple(float(n) for n in shape)


def rot_scale_axes2(B, r_min=1.0):
    dl = float(np.diff(logpolar_axes(B, r_min)[0][:2])[0])
    dphi = math.pi / B
    ax = (shift_axes((2 * B,))[0] * dl, shift_axes((B,))[0] * dphi)
    return ax, (2 * B * dl, math.pi)


# ---------------------------------------------------------------- 3D stage maps

def sphere_signature(a, n_radial=None):
    """Unit-norm SH coefficients (degree 0 removed) of the radial signature of ``a``."""
    B = _bandwidth(a)
    mag = ops.magnitude(a)
    s = ops.normalize(ops.sparse_apply(radial_matrix(B, n_radial), mag, (2 * B, 2 * B)))
    S = ops.sph_ft(s)
    mask = np.ones(S.value.shape)
    mask[0] = 0.0
    return ops.normalize(ops.mul_const(S, mask))


def rotation_map3(a1, a2, n_radial=None):
    """So3 correlation volume peaking at the rotation of ``a2`` relative to ``a1``."""
    return ops.so3_correlate(sphere_signature(a2, n_radial), sphere_signature(a1, n_radial))


def scale_map3(a1, a2, R, axis=0, r_min=1.0, eps=DEFAULT_EPS, mode="slice"):
    """Correlation over log-scale shifts after undoing rotation ``R``.

    ``mode="profile"`` correlates the angle-summed log-radius profiles.
    ``mode="slice"`` phase-correlates the full log-polar images and keeps
    the zero-angle column, which retains the angular structure that the
    profile sums away.
    """
    B = _bandwidth(a1)
    n = 2 * B
    comp = pose_matrix(B, Pose7.from_matrix(np.asarray(R).T), "trilinear")
    m1 = ops.magnitude(a1)
    m2 = ops.sparse_apply(comp, ops.magnitude(a2), (n, n, n))
    L = logpolar_matrix(B, float(r_min))
    lps = [ops.sparse_apply(L, ops.sum_axis(m, axis), (n, n)) for m in (m1, m2)]
    if mode == "profile":
        return ops.correlate(ops.sum_axis(lps[0], 1), ops.sum_axis(lps[1], 1), eps)
    return ops.index(ops.correlate(lps[0], lps[1], eps), (slice(None), B))


def compensate(g, pose, interp="trilinear"):
    """Differentiable ``apply_pose`` with a constant pose."""
    x = _data(g)
    B = _bandwidth(x)
    shape = np.shape(x.value if isinstance(x, Var) else x)
    return ops.sparse_apply(pose_matrix(B, pose, interp), x, shape)


# ---------------------------------------------------------------- 3D estimators

def _grid_array(g):
    if isinstance(g, Var):
        return g
    return var(np.asarray(_data(g), float))


@_staged("rotation")
def estimate_rotation3(g1, g2, xi_r=10.0, cfg=None):
    """Euler triple and rotation density for ``g2`` relative to ``g1``."""
    cfg = cfg or SolverConfig()
    a1, a2 = _grid_array(g1), _grid_array(g2)
    if a1.shape != a2.shape:
        raise ShapeError(f"grid shapes differ: {a1.shape} vs {a2.shape}")
    f = rotation_map3(a1, a2, cfg.n_radial)
    axes, periods = rotation_axes(_bandwidth(a1))
    est, d = _estimate(f, _as_xi(xi_r), axes, periods, cfg)
    return _euler(est.value), d


@_staged("scale")
def estimate_scale3(g1, g2, r_hat, xi_mu=10.0, cfg=None):
    """Isotropic scale of ``g2`` relative to ``g1`` given a rotation estimate."""
    cfg = cfg or SolverConfig()
    a1, a2 = _grid_array(g1), _grid_array(g2)
    R = _rotation(r_hat)
    c = scale_map3(a1, a2, R, cfg.axis, cfg.r_min, cfg.eps, cfg.scale_mode)
    axes, periods = scale_axes(_bandwidth(a1), cfg.r_min)
    est, d = _estimate(c, _as_xi(xi_mu), axes, periods, cfg)
    return float(np.exp(est.value[0])), d


@_staged("translation")
def estimate_translation3(g1, g2_compensated, xi_t=10.0, cfg=None):
    """Shift ``t`` (cells) with ``g2c(k) = g1(k - t)``."""
    cfg = cfg or SolverConfig()
    a1, a2 = _grid_array(g1), _grid_array(g2_compensated)
    c = ops.correlate(a1, a2, cfg.eps)
    axes, periods = translation_axes(a1.shape)
    est, d = _estimate(c, _as_xi(xi_t), axes, periods, cfg)
    return tuple(float(x) for x in est.value), d


def _as_xi(xi):
    if isinstance(xi, Var):
        return xi
    xi = xi.value if isinstance(xi, softsolve.Temperature) else float(xi)
    if not xi > 0:
        raise ConfigError(f"temperature must be positive, got {xi}")
    return var(np.float64(xi))


def _rotation(r):
    r = np.asarray(r, float)
    return r if r.shape == (3, 3) else euler_to_matrix(*r)


def _euler(v):
    a, b, g = (float(x) for x in v)
    return (a % TWO_PI, min(max(b, 0.0), math.pi), g % TWO_PI)


def _as_grid3(v, cfg):
    if isinstance(v, PointCloud):
        return voxelize(v, cfg.bandwidth, cfg.extent)
    if isinstance(v, Grid3):
        return v
    if isinstance(v, Grid):
        raise ShapeError(f"expected a 3D grid, got {type(v).__name__}")
    arr = np.asarray(v, float)
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3D array, got {arr.ndim}D")
    return Grid3(arr.shape[0] // 2, arr, cfg.extent)


def forward3(v1, v2, stack=None, cfg=None, truth=None):
    """Full 7DoF forward pass returning every intermediate as a Var.

    With ``truth`` (a :class:`Pose7`), scale and translation consume the
    ground-truth compensation instead of the estimates.
    """
    cfg = cfg or SolverConfig()
    B = _bandwidth(v1)
    out, timings = {}, {}

    t0 = time.perf_counter()
    try:
        a1 = extract(v1, stack, "rot_scale", 1)
        a2 = extract(v2, stack, "rot_scale", 2)
        f = rotation_map3(a1, a2, cfg.n_radial)
        axes, periods = rotation_axes(B)
        xi = _xi(stack, "r", cfg)
        est_r, d_r = _estimate(f, xi, axes, periods, cfg, "rotation")
    except DPCError as e:
        raise StageError("rotation", e) from e
    out["rotation"] = dict(map=f, xi=xi, est=est_r, density=d_r, axes=axes, periods=periods)
    euler = _euler(est_r.value)
    R = truth.R if truth is not None else euler_to_matrix(*euler)
    timings["rotation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        c = scale_map3(a1, a2, R, cfg.axis, cfg.r_min, cfg.eps, cfg.scale_mode)
        axes, periods = scale_axes(B, cfg.r_min)
        xi = _xi(stack, "mu", cfg)
        est_mu, d_mu = _estimate(c, xi, axes, periods, cfg, "scale")
    except DPCError as e:
        raise StageError("scale", e) from e
    out["scale"] = dict(map=c, xi=xi, est=est_mu, density=d_mu, axes=axes, periods=periods)
    mu = float(np.exp(est_mu.value[0]))
    mu_c = truth.mu if truth is not None else mu
    timings["scale"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        comp = Pose7.from_matrix(R.T, mu=1.0 / mu_c)
        t1 = extract(v1, stack, "translation", 1)
        t2 = extract(compensate(v2, comp), stack, "translation", 2)
        ct = ops.correlate(t1, t2, cfg.eps)
        axes, periods = translation_axes(ct.shape)
        xi = _xi(stack, "t", cfg)
        est_t, d_t = _estimate(ct, xi, axes, periods, cfg, "translation")
    except DPCError as e:
        raise StageError("translation", e) from e
    out["translation"] = dict(map=ct, xi=xi, est=est_t, density=d_t, axes=axes, periods=periods)
    timings["translation"] = time.perf_counter() - t0

    pose = Pose7(tuple(float(x) for x in est_t.value), euler, mu)
    return pose, out, timings


def register3(v1, v2, extractors=None, config=None):
    """7DoF registration of two volumes (or point clouds, voxelised with ``config``).

    Returns a :class:`Registration3Result` whose pose maps ``v1`` onto ``v2``
    in the sense of :func:`dpc.grid.apply_pose3`; translation is in cells.
    """
    cfg = config or SolverConfig()
    g1, g2 = _as_grid3(v1, cfg), _as_grid3(v2, cfg)
    if g1.data.shape != g2.data.shape:
        raise ShapeError(f"grid shapes differ: {g1.data.shape} vs {g2.data.shape}")
    pose, out, timings = forward3(g1.data, g2.data, extractors, cfg)
    peaks = {k: float(v["map"].value.max()) for k, v in out.items()}
    dens = {k: v["density"] for k, v in out.items()}
    return Registration3Result(pose, dens, peaks, timings)


# ---------------------------------------------------------------- 2D

def radial_ramp(B, ndim, power):
    """``|j|^power`` on a centered grid; a pure radial weight commutes with rotation and scaling."""
    ax = np.arange(-B, B, dtype=float)
    r2 = sum(np.meshgrid(*([ax ** 2] * ndim), indexing="ij"))
    return r2 ** (power / 2)


def weighted_magnitude(a, ramp=0.0):
    m = ops.magnitude(a)
    if ramp:
        m = ops.mul_const(m, radial_ramp(_bandwidth(a), np.ndim(m.value), ramp))
    return m


def rot_scale_map2(a1, a2, r_min=1.0, eps=DEFAULT_EPS, ramp=0.0):
    """Joint (log-scale, angle) phase correlation of log-polar magnitude spectra.

    The angle axis is folded to period pi, which the point symmetry of real
    spectra makes exact.  ``ramp`` applies a ``|j|^ramp`` high-pass weight
    to the spectra first.
    """
    B = _bandwidth(a1)
    n = 2 * B
    if B % 2:
        raise ShapeError(f"2D registration needs an even bandwidth, got {B}")
    L = logpolar_matrix(B, float(r_min))
    lps = [ops.fold_half(ops.sparse_apply(L, weighted_magnitude(a, ramp), (n, n)), axis=1) for a in (a1, a2)]
    return ops.correlate(lps[0], lps[1], eps)


def _as_grid2(v):
    if isinstance(v, Grid2):
        return v
    if isinstance(v, Grid):
        raise ShapeError(f"expected a 2D grid, got {type(v).__name__}")
    arr = np.asarray(v, float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"expected a square 2D image, got shape {arr.shape}")
    return Grid2(arr.shape[0] // 2, arr)


def forward2(img1, img2, stack=None, cfg=None, truth=None):
    """4DoF forward pass; see :func:`forward3` for ``truth``."""
    cfg = cfg or SolverConfig()
    B = _bandwidth(img1)
    out, timings = {}, {}

    t0 = time.perf_counter()
    try:
        a1 = extract(img1, stack, "rot_scale", 1)
        a2 = extract(img2, stack, "rot_scale", 2)
        c = rot_scale_map2(a1, a2, cfg.r_min, cfg.eps, cfg.ramp)
        axes, periods = rot_scale_axes2(B, cfg.r_min)
        xi = _xi(stack, "r", cfg)
        est, d = _estimate(c, xi, axes, periods, cfg, "rot_scale")
    except DPCError as e:
        raise StageError("rotation_scale", e) from e
    out["rot_scale"] = dict(map=c, xi=xi, est=est, density=d, axes=axes, periods=periods)
    mu = float(np.exp(est.value[0]))
    theta = (-float(est.value[1])) % math.pi
    timings["rot_scale"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        t1 = extract(img1, stack, "translation", 1)
        xi = _xi(stack, "t", cfg)
        if truth is not None:
            hyps = [truth.theta]
            mu_c = truth.mu
        else:
            hyps = [theta, theta + math.pi]
            mu_c = mu
        best = None
        for th in hyps:
            comp = Pose4((0.0, 0.0), -th, 1.0 / mu_c)
            t2 = extract(compensate(img2, comp), stack, "translation", 2)
            ct = ops.correlate(t1, t2, cfg.eps)
            peak = float(ct.value.max())
            if best is None or peak > best[0]:
                best = (peak, th, ct)
        _, theta, ct = best
        axes, periods = translation_axes(ct.shape)
        est_t, d_t = _estimate(ct, xi, axes, periods, cfg, "translation")
    except DPCError as e:
        raise StageError("translation", e) from e
    out["translation"] = dict(map=ct, xi=xi, est=est_t, density=d_t, axes=axes, periods=periods)
    timings["translation"] = time.perf_counter() - t0

    pose = Pose4(tuple(float(x) for x in est_t.value), theta, mu)
    return pose, out, timings


def register2(img1, img2, extractors=None, config=None):
    """4DoF registration of two square images; ``img2 ~ apply_pose2(img1, pose)``."""
    cfg = config or SolverConfig()
    g1, g2 = _as_grid2(img1), _as_grid2(img2)
    if g1.data.shape != g2.data.shape:
        raise ShapeError(f"image shapes differ: {g1.data.shape} vs {g2.data.shape}")
    pose, out, timings = forward2(g1.data, g2.data, extractors, cfg)
    peaks = {k: float(v["map"].value.max()) for k, v in out.items()}
    return Registration2Result(pose, out["rot_scale"]["density"], out["translation"]["density"], peaks, timings)
