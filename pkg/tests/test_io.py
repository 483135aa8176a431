import struct

import numpy as np
import pytest

from dpc import FilterStack, Grid2, Grid3, PointCloud, Pose4, Pose7
from dpc.errors import DataError
from dpc.io import (GRID_MAGIC, format_record, load_checkpoint, load_cloud, load_grid, load_grid_array,
                    load_image, parse_record, read_records, save_checkpoint, save_cloud, save_grid, save_image)


@pytest.mark.parametrize("shape", [(8, 8), (6, 6, 6)])
def test_grid_roundtrip(tmp_path, rng, shape):
    a = rng.standard_normal(shape)
    p = tmp_path / "g.dpcg"
    save_grid(p, a)
    b = load_grid_array(p)
    assert b.shape == shape
    np.testing.assert_allclose(b, a.astype(np.float32))
    g = load_grid(p, extent=2.0)
    assert isinstance(g, Grid3 if len(shape) == 3 else Grid2)
    assert g.bandwidth == shape[0] // 2


def test_grid_header_layout(tmp_path):
    p = tmp_path / "g.dpcg"
    save_grid(p, np.arange(64.0).reshape(4, 4, 4))
    raw = p.read_bytes()
    assert raw[:4] == GRID_MAGIC
    assert struct.unpack("<III", raw[4:16]) == (1, 3, 2)
    assert len(raw) == 16 + 4 * 64
    assert np.frombuffer(raw[16:20], "<f4")[0] == 0.0
    assert np.frombuffer(raw[-4:], "<f4")[0] == 63.0


def test_grid_rejects_bad_files(tmp_path):
    p = tmp_path / "g.dpcg"
    save_grid(p, np.zeros((4, 4)))
    raw = p.read_bytes()
    (tmp_path / "magic.dpcg").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.dpcg").write_bytes(raw[:-4])
    (tmp_path / "nan.dpcg").write_bytes(raw[:16] + np.full(16, np.nan, "<f4").tobytes())
    for name, msg in [("magic", "not a DPCG"), ("short", "expected 16"), ("nan", "non-finite")]:
        with pytest.raises(DataError, match=msg) as ei:
            load_grid_array(tmp_path / f"{name}.dpcg")
        assert name in str(ei.value)
    with pytest.raises(DataError, match="missing"):
        load_grid_array(tmp_path / "missing.dpcg")


def test_image_roundtrip_quantizes(tmp_path, rng):
    a = rng.random((16, 16))
    p = tmp_path / "a.pgm"
    save_image(p, a)
    assert p.read_bytes()[:2] == b"P5"
    g = load_image(p)
    assert g.bandwidth == 8
    assert np.abs(g.data - a).max() <= 0.5 / 255 + 1e-12


def test_image_normalize_and_clip(tmp_path):
    a = np.linspace(-1, 3, 16).reshape(4, 4)
    save_image(tmp_path / "c.pgm", a)
    save_image(tmp_path / "n.pgm", a, normalize=True)
    c, n = load_image(tmp_path / "c.pgm").data, load_image(tmp_path / "n.pgm").data
    assert c.min() == 0 and c.max() == 1 and c[0, 0] == 0 and c[-1, -1] == 1
    assert n[0, 0] == 0 and n[-1, -1] == 1
    assert np.all(np.diff(n.ravel()) >= 0)


def test_image_must_be_square_and_even(tmp_path):
    from PIL import Image
    Image.fromarray(np.zeros((4, 6), np.uint8)).save(tmp_path / "r.png")
    Image.fromarray(np.zeros((5, 5), np.uint8)).save(tmp_path / "o.png")
    for name in ("r.png", "o.png"):
        with pytest.raises(DataError, match="square"):
            load_image(tmp_path / name)
    (tmp_path / "junk.pgm").write_text("hello")
    with pytest.raises(DataError, match="junk.pgm"):
        load_image(tmp_path / "junk.pgm")


def test_image_accepts_2d_grid_only(tmp_path):
    save_grid(tmp_path / "a.dpcg", np.ones((4, 4)))
    save_grid(tmp_path / "b.dpcg", np.ones((4, 4, 4)))
    assert load_image(tmp_path / "a.dpcg").bandwidth == 2
    with pytest.raises(DataError, match="2D"):
        load_image(tmp_path / "b.dpcg")


def test_cloud_roundtrip(tmp_path, rng):
    pts = rng.standard_normal((50, 3))
    save_cloud(tmp_path / "c.xyz", PointCloud(pts))
    c = load_cloud(tmp_path / "c.xyz")
    assert len(c) == 50
    np.testing.assert_allclose(c.points, pts, atol=1e-6)


@pytest.mark.filterwarnings("ignore:loadtxt")
def test_cloud_single_point_and_errors(tmp_path):
    (tmp_path / "one.xyz").write_text("1 2 3\n")
    assert load_cloud(tmp_path / "one.xyz").points.shape == (1, 3)
    (tmp_path / "two.xyz").write_text("1 2\n3 4\n")
    (tmp_path / "empty.xyz").write_text("")
    (tmp_path / "bad.xyz").write_text("1 2 x\n")
    (tmp_path / "inf.xyz").write_text("1 2 inf\n")
    for name, msg in [("two", "3 columns"), ("empty", "no points"), ("bad", "malformed"), ("inf", "non-finite")]:
        with pytest.raises(DataError, match=msg):
            load_cloud(tmp_path / f"{name}.xyz")
    with pytest.raises(DataError, match="nothere"):
        load_cloud(tmp_path / "nothere.xyz")


def _perturbed(ndim, rng):
    st = FilterStack(ndim, n_layers=2, kernel=3)
    st.load_state({k: v.value + 0.01 * rng.standard_normal(np.shape(v.value)) for k, v in st.params.items()})
    return st


@pytest.mark.parametrize("ndim", [2, 3])
def test_checkpoint_roundtrip(tmp_path, rng, ndim):
    st = _perturbed(ndim, rng)
    p = tmp_path / "w.dpcw"
    save_checkpoint(p, st)
    back = load_checkpoint(p)
    assert (back.ndim, back.n_layers, back.kernel) == (ndim, 2, 3)
    assert back.slope == pytest.approx(st.slope)
    for k, v in st.params.items():
        np.testing.assert_allclose(back.params[k].value, np.float32(v.value), rtol=1e-6)


def test_checkpoint_corruption(tmp_path, rng):
    p = tmp_path / "w.dpcw"
    save_checkpoint(p, _perturbed(2, rng))
    raw = p.read_bytes()
    cases = {"magic": b"NOPE" + raw[4:], "trunc": raw[:-6], "tail": raw + b"\0\0\0\0",
             "version": raw[:4] + struct.pack("<I", 9) + raw[8:], "header": raw[:10]}
    for name, data in cases.items():
        q = tmp_path / f"{name}.dpcw"
        q.write_bytes(data)
        with pytest.raises(DataError) as ei:
            load_checkpoint(q)
        assert f"{name}.dpcw" in str(ei.value)


def test_record_roundtrip_3d():
    p = Pose7((0.1, -0.2, 0.3), (0.5, 1.0, 2.0), 1.1, "m")
    line = format_record(p, {"rotation": 0.9, "scale": 0.8, "translation": 0.7})
    assert len(line.split()) == 10
    q = parse_record(line)
    np.testing.assert_allclose(q.t, p.t)
    np.testing.assert_allclose(q.euler, p.euler)
    assert q.mu == pytest.approx(p.mu) and q.unit == "m"
    assert format_record(p).split()[-3:] == ["nan"] * 3
    assert len(parse_record(" ".join(line.split()[:7])).t) == 3


def test_record_roundtrip_2d():
    p = Pose4((3.5, -1.25), 0.75, 0.9)
    q = parse_record(format_record(p))
    assert isinstance(q, Pose4)
    assert q.t == pytest.approx(p.t) and (q.theta, q.mu) == pytest.approx((p.theta, p.mu))


def test_read_records_skips_comments_and_reports_line(tmp_path):
    f = tmp_path / "r.txt"
    f.write_text("# header\n\n1 2 0.5 1\n1 2 3\n")
    with pytest.raises(DataError, match="line 4"):
        read_records(f)
    f.write_text("# header\n\n1 2 0.5 1\n")
    assert len(read_records(f)) == 1
