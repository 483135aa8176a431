"""Grid containers, voxelization and pose resampling.

Index convention: a grid of bandwidth ``B`` has side ``2B`` and storage index
``i`` holds the cell with signed coordinate ``k = i - B``.  Axis 0 is x, axis 1
is y and (for 3D) axis 2 is z.

Pose convention (used everywhere in the package): a pose ``p`` acts on grids by
pull-back,

    apply_pose(g, p)(k) = g(mu * R @ k - t),

and a registration of ``(g1, g2)`` returns the pose with
``g2 ~= apply_pose(g1, p)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateInput, EmptyInput, ShapeError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------- rotations

def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(b):
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_to_matrix(alpha, beta, gamma):
    """ZYZ Euler angles to a rotation matrix, ``Rz(alpha) Ry(beta) Rz(gamma)``."""
    return rot_z(alpha) @ rot_y(beta) @ rot_z(gamma)


def matrix_to_euler(R):
    """Inverse of :func:`euler_to_matrix` with alpha, gamma in [0, 2pi)."""
    R = np.asarray(R, dtype=float)
    beta = math.acos(min(1.0, max(-1.0, R[2, 2])))
    if math.sin(beta) < 1e-9:
        # gimbal lock: only alpha + gamma (or alpha - gamma) is defined
        if R[2, 2] > 0:
            alpha = math.atan2(R[1, 0], R[0, 0])
        else:
            alpha = math.atan2(-R[1, 0], -R[0, 0])
        gamma = 0.0
    else:
        alpha = math.atan2(R[1, 2], R[0, 2])
        gamma = math.atan2(R[2, 1], -R[2, 0])
    return alpha % TWO_PI, beta, gamma % TWO_PI


def rot2(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def geodesic_distance(R1, R2):
    """Angle of ``R1.T @ R2`` in radians."""
    c = (np.trace(np.asarray(R1).T @ np.asarray(R2)) - 1.0) / 2.0
    return abs(math.acos(min(1.0, max(-1.0, c))))


def wrap_angle(a, period=TWO_PI):
    """Map an angle difference into [-period/2, period/2)."""
    return (a + period / 2.0) % period - period / 2.0


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class Pose7:
    t: tuple = (0.0, 0.0, 0.0)
    euler: tuple = (0.0, 0.0, 0.0)
    mu: float = 1.0
    unit: str = "cells"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"scale must be positive, got {self.mu}")
        a, b, g = (float(x) for x in self.euler)
        if not 0.0 <= b <= math.pi + 1e-12:
            raise ValueError(f"beta out of [0, pi]: {b}")
        object.__setattr__(self, "euler", (a % TWO_PI, min(b, math.pi), g % TWO_PI))
        object.__setattr__(self, "t", tuple(float(x) for x in self.t))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def R(self):
        return euler_to_matrix(*self.euler)

    @classmethod
    def from_matrix(cls, R, mu=1.0, t=(0.0, 0.0, 0.0), unit="cells"):
        return cls(t=tuple(t), euler=matrix_to_euler(R), mu=mu, unit=unit)

    def inverse(self):
        R = self.R
        t = -R.T @ np.asarray(self.t) / self.mu
        return Pose7.from_matrix(R.T, 1.0 / self.mu, t, self.unit)

    def to_unit(self, unit, voxel_size):
        """Convert the translation between ``"cells"`` and ``"m"``."""
        if unit == self.unit:
            return self
        f = voxel_size if unit == "m" else 1.0 / voxel_size
        return Pose7(tuple(np.asarray(self.t) * f), self.euler, self.mu, unit)


@dataclass(frozen=True)
class Pose4:
    t: tuple = (0.0, 0.0)
    theta: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"scale must be positive, got {self.mu}")
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)
        object.__setattr__(self, "t", tuple(float(x) for x in self.t))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def R(self):
        return rot2(self.theta)

    def inverse(self):
        t = -self.R.T @ np.asarray(self.t) / self.mu
        return Pose4(tuple(t), -self.theta, 1.0 / self.mu)


@dataclass(frozen=True, eq=False)
class Grid:
    """Dense real grid of side ``2B`` in ``ndim`` dimensions.

    ``extent`` is the physical side length covered by the grid (meters for
    3D voxel grids, meters-per-pixel times side for images; 0 if unknown).
    """

    bandwidth: int
    data: np.ndarray
    extent: float = 0.0
    ndim: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        B = int(self.bandwidth)
        if B < 1:
            raise ShapeError(f"bandwidth must be positive, got {B}")
        if self.ndim and data.ndim != self.ndim:
            raise ShapeError(f"expected a {self.ndim}D array, got shape {data.shape}")
        if data.shape != (2 * B,) * data.ndim:
            raise ShapeError(f"grid shape {data.shape} is not (2B,)*d for B={B}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("grid contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "bandwidth", B)

    @property
    def side(self):
        return 2 * self.bandwidth

    @property
    def voxel_size(self):
        return self.extent / self.side if self.extent else 1.0

    def replace(self, data):
        return type(self)(self.bandwidth, data, self.extent)


@dataclass(frozen=True, eq=False)
class Grid3(Grid):
    ndim: int = field(default=3, init=False, repr=False)


@dataclass(frozen=True, eq=False)
class Grid2(Grid):
    ndim: int = field(default=2, init=False, repr=False)


def make_grid(data, extent=0.0):
    data = np.asarray(data, dtype=float)
    B = data.shape[0] // 2
    cls = {2: Grid2, 3: Grid3}.get(data.ndim)
    if cls is None:
        raise ShapeError(f"only 2D and 3D grids are supported, got {data.ndim}D")
    return cls(B, data, extent)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------- voxelize

def voxelize(cloud, B, extent, return_dropped=False):
    """Binary occupancy grid of a point cloud.

    Cell ``k`` covers ``[(k - 1/2) v, (k + 1/2) v)`` per axis with
    ``v = extent / (2B)``, so a point at the origin lands in storage index
    ``B``.  Points outside the extent cube are dropped.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if len(pts) == 0:
        raise EmptyInput("cannot voxelize an empty point cloud")
    if not extent > 0:
        raise ValueError(f"extent must be positive, got {extent}")
    v = extent / (2 * B)
    idx = np.floor(pts / v + B + 0.5).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < 2 * B), axis=1)
    inside &= np.all(np.abs(pts) <= extent / 2, axis=1)
    dropped = int(len(pts) - inside.sum())
    if not inside.any():
        raise DegenerateInput(f"all {len(pts)} points fall outside the extent cube")
    if dropped:
        log.info("voxelize dropped %d of %d points outside extent %.3g", dropped, len(pts), extent)
    data = np.zeros((2 * B,) * 3)
    i = idx[inside]
    data[i[:, 0], i[:, 1], i[:, 2]] = 1.0
    grid = Grid3(B, data, extent)
    return (grid, dropped) if return_dropped else grid


def normalize(g):
    """Scale a grid (or raw array) to unit L2 norm."""
    arr = g.data if isinstance(g, Grid) else np.asarray(g)
    n = np.sqrt(np.sum(np.abs(arr) ** 2))
    if n == 0:
        raise DegenerateInput("cannot normalize an all-zero grid")
    return g.replace(arr / n) if isinstance(g, Grid) else arr / n


# ---------------------------------------------------------------- sampling

def interp_matrix(coords, shape, order="linear"):
    """Sparse matrix sampling an array of ``shape`` at fractional ``coords``.

    ``coords`` has shape ``(M, d)`` in storage-index units.  Row ``m`` of the
    result holds the multilinear (or nearest) interpolation weights of sample
    ``m``; stencil cells outside the array read as zero.
    """
    coords = np.asarray(coords, dtype=float)
    M, d = coords.shape
    shape = tuple(shape)
    if order == "nearest":
        idx = np.floor(coords + 0.5).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
        flat = np.ravel_multi_index(tuple(idx[ok].T), shape)
        rows = np.nonzero(ok)[0]
        return sp.csr_matrix((np.ones(len(rows)), (rows, flat)), shape=(M, int(np.prod(shape))))
    if order not in ("linear", "trilinear", "bilinear"):
        raise ValueError(f"unknown interpolation {order!r}")
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    rows_all, cols_all, vals_all = [], [], []
    upper = np.array(shape)
    for corner in range(1 << d):
        off = np.array([(corner >> a) & 1 for a in range(d)])
        idx = base + off
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
        ok = np.all((idx >= 0) & (idx < upper), axis=1) & (w != 0)
        rows_all.append(np.nonzero(ok)[0])
        cols_all.append(np.ravel_multi_index(tuple(idx[ok].T), shape))
        vals_all.append(w[ok])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    return sp.csr_matrix((vals, (rows, cols)), shape=(M, int(np.prod(shape))))


def cell_coords(B, ndim):
    """Signed coordinates ``k`` of every cell, shape ``((2B)^ndim, ndim)``."""
    ax = np.arange(-B, B, dtype=float)
    mesh = np.meshgrid(*([ax] * ndim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def pose_matrix(B, pose, interp="trilinear"):
    """Sparse resampling operator of :func:`apply_pose3` / :func:`apply_pose2`."""
    if isinstance(pose, Pose7):
        ndim = 3
    elif isinstance(pose, Pose4):
        ndim = 2
    else:
        raise TypeError(f"unsupported pose type {type(pose).__name__}")
    k = cell_coords(B, ndim)
    src = pose.mu * k @ pose.R.T - np.asarray(pose.t)
    order = "nearest" if interp == "nearest" else "linear"
    return interp_matrix(src + B, (2 * B,) * ndim, order)


def _apply(g, pose, interp, cls):
    if not isinstance(g, cls):
        raise ShapeError(f"expected {cls.__name__}, got {type(g).__name__}")
    M = pose_matrix(g.bandwidth, pose, interp)
    return g.replace((M @ g.data.ravel()).reshape(g.data.shape))


def apply_pose3(g, p, interp="trilinear"):
    """Resample ``g`` so that ``out(k) = g(mu R k - t)`` with zero fill."""
    return _apply(g, p, interp, Grid3)


def apply_pose2(g, p, interp="bilinear"):
    """2D analogue of :func:`apply_pose3`."""
    return _apply(g, p, interp, Grid2)


def pose_points(points, pose, voxel_size=1.0):
    """Move points so that voxelizing them matches :func:`apply_pose3`.

    Inverse of the pull-back map: ``y -> R^T (y + t) / mu`` with ``t``
    converted to the points' units.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
    t = np.asarray(pose.t) * (voxel_size if pose.unit == "cells" else 1.0)
    out = (pts + t) @ pose.R / pose.mu
    return PointCloud(out) if isinstance(points, PointCloud) else out
