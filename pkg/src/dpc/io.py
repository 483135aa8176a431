"""File formats: binary grids, graymap images, point clouds, checkpoints, result records."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .grid import Grid, Grid2, Grid3, PointCloud, Pose4, Pose7

GRID_MAGIC = b"DPCG"
CKPT_MAGIC = b"DPCW"
VERSION = 1


def _open_error(path, e):
    return DataError(f"{path}: {e.strerror or e}")


# ---------------------------------------------------------------- grids

def save_grid(path, data, B=None):
    """Write a 2D or 3D array (or Grid) in the DPCG binary layout."""
    arr = np.asarray(data.data if isinstance(data, Grid) else data, dtype="<f4")
    if arr.ndim not in (2, 3):
        raise DataError(f"{path}: only 2D and 3D arrays can be stored, got {arr.ndim}D")
    B = arr.shape[0] // 2 if B is None else B
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC + struct.pack("<III", VERSION, arr.ndim, B))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_grid_array(path):
    """Raw array of a DPCG file; the shape is ``(2B,) * dims``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise _open_error(path, e) from e
    if raw[:4] != GRID_MAGIC or len(raw) < 16:
        raise DataError(f"{path}: not a DPCG grid file")
    version, dims, B = struct.unpack("<III", raw[4:16])
    if version != VERSION or dims not in (2, 3) or B < 1:
        raise DataError(f"{path}: unsupported header (version={version}, dims={dims}, B={B})")
    n = (2 * B) ** dims
    if len(raw) != 16 + 4 * n:
        raise DataError(f"{path}: expected {n} float32 values, file holds {(len(raw) - 16) // 4}")
    arr = np.frombuffer(raw, dtype="<f4", offset=16).astype(float).reshape((2 * B,) * dims)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: grid contains non-finite values")
    return arr


def load_grid(path, extent=0.0):
    arr = load_grid_array(path)
    cls = Grid3 if arr.ndim == 3 else Grid2
    return cls(arr.shape[0] // 2, arr, extent)


# ---------------------------------------------------------------- images

def load_image(path):
    """Square grayscale image as a :class:`Grid2` with values in [0, 1]."""
    p = Path(path)
    if p.suffix.lower() == ".dpcg":
        g = load_grid(p)
        if not isinstance(g, Grid2):
            raise DataError(f"{path}: expected a 2D grid")
        return g
    try:
        with Image.open(p) as im:
            arr = np.asarray(im.convert("L"), dtype=float) / 255.0
    except OSError as e:
        raise DataError(f"{path}: cannot read image ({e})") from e
    if arr.shape[0] != arr.shape[1] or arr.shape[0] % 2:
        raise DataError(f"{path}: image must be square with an even side, got {arr.shape}")
    return Grid2(arr.shape[0] // 2, arr)


def save_image(path, data, normalize=False):
    """Write an 8-bit graymap; values are clipped to [0, 1] unless ``normalize``."""
    arr = np.asarray(data.data if isinstance(data, Grid) else data, dtype=float)
    if normalize:
        lo, hi = arr.min(), arr.max()
        arr = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    img = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path, format="PPM")


# ---------------------------------------------------------------- clouds

def load_cloud(path):
    try:
        pts = np.loadtxt(path, ndmin=2)
    except OSError as e:
        raise _open_error(path, e) from e
    except ValueError as e:
        raise DataError(f"{path}: malformed point list ({e})") from e
    if pts.size == 0:
        raise DataError(f"{path}: no points")
    if pts.shape[1] != 3:
        raise DataError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    try:
        return PointCloud(pts)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e


def save_cloud(path, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    np.savetxt(path, pts, fmt="%.6f")


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, stack):
    """Write a FilterStack: header, then every tensor as (rank, dims, float32 data)."""
    names = sorted(stack.params)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<IIIIIf", VERSION, 4, stack.ndim, stack.n_layers, stack.kernel, stack.slope))
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.asarray(stack.params[name].value, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    from .autodiff.filters import FilterStack
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise _open_error(path, e) from e
    if raw[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a DPCW checkpoint")
    try:
        version, n_stages, ndim, n_layers, kernel, slope = struct.unpack_from("<IIIIIf", raw, 4)
        if version != VERSION or n_stages != 4:
            raise DataError(f"{path}: unsupported checkpoint (version={version}, stages={n_stages})")
        off = 28
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        stack = FilterStack(ndim, n_layers, kernel, slope)
        names = sorted(stack.params)
        if count != len(names):
            raise DataError(f"{path}: {count} tensors, expected {len(names)}")
        state = {}
        for name in names:
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            state[name] = np.frombuffer(raw, "<f4", n, off).astype(float).reshape(shape)
            off += 4 * n
    except struct.error as e:
        raise DataError(f"{path}: truncated checkpoint") from e
    except ValueError as e:
        raise DataError(f"{path}: corrupt checkpoint ({e})") from e
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    from .errors import ShapeError
    try:
        stack.load_state(state)
    except ShapeError as e:
        raise DataError(f"{path}: {e}") from e
    return stack


# ---------------------------------------------------------------- result records

def format_record(pose, peaks=None):
    """One text line: ``tx ty tz alpha beta gamma mu peak_r peak_mu peak_t`` or ``tx ty theta mu``."""
    if isinstance(pose, Pose4):
        vals = [*pose.t, pose.theta, pose.mu]
    else:
        peaks = peaks or {}
        vals = [*pose.t, *pose.euler, pose.mu,
                peaks.get("rotation", float("nan")), peaks.get("scale", float("nan")), peaks.get("translation", float("nan"))]
    return " ".join(f"{v:.9g}" for v in vals)


def parse_record(line, unit="m"):
    vals = [float(x) for x in line.split()]
    if len(vals) == 4:
        return Pose4(tuple(vals[:2]), vals[2], vals[3])
    if len(vals) in (7, 10):
        return Pose7(tuple(vals[:3]), tuple(vals[3:6]), vals[6], unit)
    raise ValueError(f"expected 4, 7 or 10 fields, got {len(vals)}")


def read_records(path, unit="m"):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise _open_error(path, e) from e
    out = []
    for i, ln in enumerate(lines):
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        try:
            out.append(parse_record(ln, unit))
        except ValueError as e:
            raise DataError(f"{path}: line {i + 1}: {e}") from e
    return out
