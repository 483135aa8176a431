"""Synthetic registration pairs with known ground truth.

2D pairs are images of random filled primitives; 3D pairs are point clouds
sampled from the surfaces of random box/sphere/cylinder compositions.  Every
generator is a pure function of its :class:`PairSpec` (which carries the seed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .grid import Grid2, PointCloud, Pose4, Pose7, apply_pose2, matrix_to_euler, pose_points

SHAPES_2D = ("rectangle", "disc", "triangle")
SHAPES_3D = ("box", "sphere", "cylinder")


@dataclass(frozen=True)
class PairSpec:
    """Pose ranges and corruption settings for one synthetic pair.

    ``t_max`` bounds each translation component in pixels (2D) or the
    translation norm in metres (3D).  ``rot_max`` bounds the 2D angle; 3D
    rotations are always uniform over SO(3) when ``rot_max > 0``.
    """

    dims: int = 2
    side: int = 256
    t_max: float = 50.0
    rot_max: float = math.pi
    mu_range: tuple = (0.8, 1.2)
    blur_sigma: float = 0.0
    outlier_rate: float = 0.0
    crop: float = 0.0
    extent: float = 2.0
    object_radius: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ConfigError(f"dims must be 2 or 3, got {self.dims}")
        lo, hi = self.mu_range
        if not 0 < lo <= hi:
            raise ConfigError(f"mu_range must satisfy 0 < lo <= hi, got {self.mu_range}")
        if not 0 <= self.outlier_rate <= 0.5:
            raise ConfigError(f"outlier_rate must lie in [0, 0.5], got {self.outlier_rate}")
        if not 0 <= self.crop < 1:
            raise ConfigError(f"crop must lie in [0, 1), got {self.crop}")
        if self.t_max < 0 or self.rot_max < 0 or self.blur_sigma < 0:
            raise ConfigError("t_max, rot_max and blur_sigma must be non-negative")
        if self.dims == 2 and self.side % 4:
            raise ConfigError(f"image side must be a multiple of 4, got {self.side}")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    @classmethod
    def identity(cls, **kw):
        return cls(t_max=0.0, rot_max=0.0, mu_range=(1.0, 1.0), **kw)


# ---------------------------------------------------------------- sampling

def random_rotation(rng):
    """Uniform rotation matrix from a normalised Gaussian quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def sample_pose4(spec, rng):
    t = rng.uniform(-spec.t_max, spec.t_max, 2) if spec.t_max > 0 else np.zeros(2)
    theta = rng.uniform(0, spec.rot_max) if spec.rot_max > 0 else 0.0
    mu = rng.uniform(*spec.mu_range)
    return Pose4(tuple(t), theta, mu)


def sample_pose7(spec, rng, unit="m"):
    R = random_rotation(rng) if spec.rot_max > 0 else np.eye(3)
    if spec.t_max > 0:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        t = d * spec.t_max * rng.uniform() ** (1 / 3)
    else:
        t = np.zeros(3)
    mu = rng.uniform(*spec.mu_range)
    return Pose7(tuple(t), matrix_to_euler(R), mu, unit)


# ---------------------------------------------------------------- 2D

def _primitive_mask(kind, yy, xx, rng, radius):
    c = rng.uniform(-0.6, 0.6, 2) * radius
    size = rng.uniform(0.15, 0.45) * radius
    if kind == "disc":
        return (yy - c[0]) ** 2 + (xx - c[1]) ** 2 <= size ** 2
    if kind == "rectangle":
        a = rng.uniform(0, np.pi)
        u = (yy - c[0]) * np.cos(a) + (xx - c[1]) * np.sin(a)
        v = -(yy - c[0]) * np.sin(a) + (xx - c[1]) * np.cos(a)
        h, w = size, size * rng.uniform(0.3, 1.0)
        return (np.abs(u) <= h) & (np.abs(v) <= w)
    # triangle: three half-plane tests
    ang = rng.uniform(0, 2 * np.pi) + np.sort(rng.uniform(0, 2 * np.pi, 3))
    P = c + size * np.stack([np.sin(ang), np.cos(ang)], axis=1)
    inside = np.ones(yy.shape, bool)
    sgn = np.sign((P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[1, 1] - P[0, 1]) * (P[2, 0] - P[0, 0]))
    for i in range(3):
        a, b = P[i], P[(i + 1) % 3]
        cross = (b[0] - a[0]) * (xx - a[1]) - (b[1] - a[1]) * (yy - a[0])
        inside &= sgn * cross >= 0
    return inside


def render_primitives(side, rng, radius=50.0, n_range=(3, 8)):
    """Image of 3 to 8 random filled primitives near the centre; returns (image, kinds)."""
    ax = np.arange(side) - side // 2
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    img = np.zeros((side, side))
    kinds = []
    for _ in range(rng.integers(n_range[0], n_range[1] + 1)):
        kind = SHAPES_2D[rng.integers(len(SHAPES_2D))]
        img[_primitive_mask(kind, yy, xx, rng, radius)] = rng.uniform(0.3, 1.0)
        kinds.append(kind)
    return img, kinds


def gen2d(spec):
    """Source image, target image and the pose with ``target ~ apply_pose2(source, pose)``."""
    if spec.dims != 2:
        raise ConfigError("gen2d needs dims=2")
    rng = np.random.default_rng(spec.seed)
    img, _ = render_primitives(spec.side, rng, spec.object_radius)
    pose = sample_pose4(spec, rng)
    B = spec.side // 2
    src = Grid2(B, img)
    tgt = apply_pose2(src, pose) if pose != Pose4() else src
    if spec.blur_sigma > 0:
        tgt = tgt.replace(ndimage.gaussian_filter(tgt.data, spec.blur_sigma))
    return src, tgt, pose


# ---------------------------------------------------------------- 3D

def _surface_points(kind, n, rng, scale):
    if kind == "sphere":
        d = rng.normal(size=(n, 3))
        return scale * d / np.linalg.norm(d, axis=1, keepdims=True)
    if kind == "box":
        half = scale * rng.uniform(0.4, 1.0, 3)
        p = rng.uniform(-1, 1, (n, 3)) * half
        area = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
        face = rng.choice(3, n, p=area / area.sum())
        p[np.arange(n), face] = half[face] * rng.choice([-1.0, 1.0], n)
        return p
    r, h = scale * rng.uniform(0.3, 0.8), scale * rng.uniform(0.5, 1.2)
    a = rng.uniform(0, 2 * np.pi, n)
    side = rng.uniform(0, 1, n) < h / (h + r)
    rad = np.where(side, r, r * np.sqrt(rng.uniform(0, 1, n)))
    z = np.where(side, rng.uniform(-h, h, n), h * rng.choice([-1.0, 1.0], n))
    return np.stack([rad * np.cos(a), rad * np.sin(a), z], axis=1)


def random_shape(rng, radius, n_points=None):
    """Surface samples of 2 to 4 randomly placed and oriented parts."""
    n_points = int(rng.integers(2000, 6001)) if n_points is None else n_points
    parts = int(rng.integers(2, 5))
    counts = rng.multinomial(n_points, np.full(parts, 1 / parts))
    pts = []
    for c in counts:
        kind = SHAPES_3D[rng.integers(len(SHAPES_3D))]
        scale = radius * rng.uniform(0.25, 0.5)
        p = _surface_points(kind, c, rng, scale) @ random_rotation(rng).T
        pts.append(p + rng.uniform(-0.5, 0.5, 3) * radius)
    return np.concatenate(pts)


def crop_region(points, fraction, rng):
    """Drop the ``fraction`` of points nearest to a random point of the cloud."""
    if fraction <= 0:
        return points
    c = points[rng.integers(len(points))]
    d = np.linalg.norm(points - c, axis=1)
    keep = np.argsort(d)[int(round(fraction * len(points))):]
    return points[np.sort(keep)]


def gen3d(spec):
    """Source cloud, target cloud and pose (translation in metres).

    Voxelising the target approximates ``apply_pose3`` of the voxelised
    source under the returned pose.
    """
    if spec.dims != 3:
        raise ConfigError("gen3d needs dims=3")
    rng = np.random.default_rng(spec.seed)
    half = spec.extent / 2
    src = random_shape(rng, spec.object_radius if spec.object_radius < half else 0.45 * half)
    pose = sample_pose7(spec, rng)
    tgt = pose_points(src, pose)
    tgt = crop_region(tgt, spec.crop, rng)
    n_out = int(round(spec.outlier_rate * len(tgt)))
    if n_out:
        tgt = np.concatenate([tgt, rng.uniform(-half, half, (n_out, 3))])
    return PointCloud(src), PointCloud(tgt), pose


# ---------------------------------------------------------------- manifests

MANIFEST_2D = ["pair_id", "source_path", "target_path", "tx", "ty", "theta", "mu", "seed"]
MANIFEST_3D = ["pair_id", "source_path", "target_path", "tx", "ty", "tz", "alpha", "beta", "gamma", "mu", "seed"]


def manifest_row(pair_id, src_path, tgt_path, pose, seed):
    if isinstance(pose, Pose4):
        vals = [*pose.t, pose.theta, pose.mu]
    else:
        vals = [*pose.t, *pose.euler, pose.mu]
    return [pair_id, str(src_path), str(tgt_path), *(f"{v:.9g}" for v in vals), seed]


def write_manifest(path, rows, dims):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_2D if dims == 2 else MANIFEST_3D)
        w.writerows(rows)


def read_manifest(path):
    """Rows as dicts with poses rebuilt; raises DataError on malformed input."""
    from .errors import DataError
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise DataError(f"{path}: {e.strerror or e}") from e
    out = []
    for i, r in enumerate(rows):
        try:
            if "tz" in r:
                pose = Pose7((float(r["tx"]), float(r["ty"]), float(r["tz"])),
                             (float(r["alpha"]), float(r["beta"]), float(r["gamma"])), float(r["mu"]), "m")
            else:
                pose = Pose4((float(r["tx"]), float(r["ty"])), float(r["theta"]), float(r["mu"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: row {i + 1}: {e}") from e
        out.append(dict(r, pose=pose))
    return out
