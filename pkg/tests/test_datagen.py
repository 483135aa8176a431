import math

import numpy as np
import pytest
from scipy import stats

from dpc.datagen import (PairSpec, gen2d, gen3d, random_rotation, read_manifest, sample_pose4, manifest_row,
                         write_manifest)
from dpc.errors import ConfigError, DataError
from dpc.grid import Pose4, Pose7


def test_identity_2d_target_equals_source():
    src, tgt, pose = gen2d(PairSpec.identity(seed=3))
    np.testing.assert_array_equal(src.data, tgt.data)
    assert pose.t == (0.0, 0.0) and pose.mu == 1.0


def test_2d_deterministic():
    a = gen2d(PairSpec(seed=9, blur_sigma=2))
    b = gen2d(PairSpec(seed=9, blur_sigma=2))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)
    assert a[2] == b[2]


def test_2d_pose_ranges():
    spec = PairSpec(t_max=50)
    rng = np.random.default_rng(0)
    poses = [sample_pose4(spec, rng) for _ in range(1000)]
    assert max(max(abs(p.t[0]), abs(p.t[1])) for p in poses) <= 50
    assert all(0 <= p.theta < math.pi and 0.8 <= p.mu <= 1.2 for p in poses)


def test_2d_image_properties():
    src, tgt, _ = gen2d(PairSpec(seed=1))
    assert src.data.shape == (256, 256)
    assert 0 <= src.data.min() and src.data.max() <= 1 and src.data.max() > 0


def test_3d_identity_clouds_equal():
    src, tgt, _ = gen3d(PairSpec.identity(dims=3, seed=2, extent=2.0, object_radius=0.7))
    a = src.points[np.lexsort(src.points.T)]
    b = tgt.points[np.lexsort(tgt.points.T)]
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert 2000 <= len(src) <= 6000


def test_3d_outlier_count():
    src, tgt, _ = gen3d(PairSpec(dims=3, seed=4, outlier_rate=0.5, object_radius=0.7))
    assert abs(len(tgt) - 1.5 * len(src)) <= 1


def test_3d_crop_removes_fraction():
    src, tgt, _ = gen3d(PairSpec(dims=3, seed=4, crop=0.2, object_radius=0.7))
    assert abs(len(tgt) - 0.8 * len(src)) <= 0.01 * len(src) + 1


def test_3d_pose_ranges():
    for s in range(20):
        _, _, p = gen3d(PairSpec(dims=3, seed=s, t_max=0.25, object_radius=0.7))
        assert np.linalg.norm(p.t) <= 0.25 + 1e-12 and 0.8 <= p.mu <= 1.2 and p.unit == "m"


def test_so3_sampler_uniform():
    rng = np.random.default_rng(2024)
    axes, angles = [], []
    for _ in range(10000):
        R = random_rotation(rng)
        ang = math.acos(np.clip((np.trace(R) - 1) / 2, -1, 1))
        ax = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        axes.append(ax / np.linalg.norm(ax))
        angles.append(ang)
    axes = np.array(axes)
    # uniform rotations: axis uniform on the sphere (z uniform in [-1, 1], azimuth uniform)
    hz = np.histogram(axes[:, 2], bins=10, range=(-1, 1))[0]
    hphi = np.histogram(np.arctan2(axes[:, 1], axes[:, 0]), bins=12, range=(-math.pi, math.pi))[0]
    assert stats.chisquare(hz).pvalue > 1e-3
    assert stats.chisquare(hphi).pvalue > 1e-3
    # rotation angle density (1 - cos w) / pi
    edges = np.linspace(0, math.pi, 11)
    cdf = (edges - np.sin(edges)) / math.pi
    expected = np.diff(cdf) * len(angles)
    ha = np.histogram(angles, bins=edges)[0]
    assert stats.chisquare(ha, expected).pvalue > 1e-3


def test_spec_validation():
    with pytest.raises(ConfigError):
        PairSpec(dims=4)
    with pytest.raises(ConfigError):
        PairSpec(outlier_rate=0.6)
    with pytest.raises(ConfigError):
        PairSpec(mu_range=(1.2, 0.8))
    with pytest.raises(ConfigError):
        gen3d(PairSpec(dims=2))


def test_manifest_roundtrip(tmp_path):
    rows = [manifest_row("0", "a.pgm", "b.pgm", Pose4((1.5, -2.0), 0.3, 1.1), 7)]
    write_manifest(tmp_path / "m.csv", rows, 2)
    back = read_manifest(tmp_path / "m.csv")
    assert back[0]["pose"] == Pose4((1.5, -2.0), 0.3, 1.1)
    rows = [manifest_row("0", "a.xyz", "b.xyz", Pose7((0.1, 0, 0), (1, 1, 1), 0.9, "m"), 3)]
    write_manifest(tmp_path / "m3.csv", rows, 3)
    assert read_manifest(tmp_path / "m3.csv")[0]["pose"].t == (0.1, 0.0, 0.0)
    (tmp_path / "bad.csv").write_text("pair_id,source_path,target_path,tx,ty,theta,mu,seed\n0,a,b,x,1,1,1,0\n")
    with pytest.raises(DataError, match="row 1"):
        read_manifest(tmp_path / "bad.csv")
