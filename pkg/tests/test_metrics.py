import math

import numpy as np
import pytest

from dpc.errors import DataError
from dpc.grid import Pose4, Pose7
from dpc.metrics import accuracy, evaluate, pair_errors


def test_perfect_results():
    poses = [Pose4((1, 2), 0.5, 1.1), Pose4((-3, 0), 3.0, 0.9)]
    m = evaluate(poses, poses)
    assert all(v == 100.0 for v in m.acc.values())
    assert all(v == 0.0 for v in m.mse.values())


def test_counting_threshold():
    truth = [Pose4((0, 0), 0, 1), Pose4((0, 0), 0, 1)]
    est = [Pose4((0, 0), 0, 1), Pose4((20, 0), 0, 1)]
    assert evaluate(est, truth, {"x": 10}).acc["x10"] == 50.0


def test_mse_hand_fixture():
    truth = [Pose4((0, 0), 0, 1.0)] * 3
    est = [Pose4((1, 0), math.radians(2), 1.1), Pose4((2, 1), 0, 1.0), Pose4((-3, 0), math.radians(-1), 0.8)]
    m = evaluate(est, truth)
    assert m.mse["x"] == pytest.approx((1 + 4 + 9) / 3)
    assert m.mse["y"] == pytest.approx(1 / 3)
    assert m.mse["r"] == pytest.approx((4 + 0 + 1) / 3)
    assert m.mse["mu"] == pytest.approx((0.01 + 0 + 0.04) / 3)


def test_angle_wraps():
    e = pair_errors(Pose4((0, 0), 0.01, 1), Pose4((0, 0), 2 * math.pi - 0.01, 1))
    assert e["r"] == pytest.approx(math.degrees(0.02))


def test_3d_errors():
    t = Pose7((0, 0, 0), (0, 0, 0), 1.0)
    e = pair_errors(Pose7((0.3, 0.4, 0), (0.2, 0, 0), 1.05), t)
    assert e["t"] == pytest.approx(0.5)
    assert e["r"] == pytest.approx(math.degrees(0.2))
    assert e["mu"] == pytest.approx(0.05)
    m = evaluate([Pose7((0.1, 0, 0), (0.05, 0, 0), 1.0)], [t])
    assert m.acc == {"t0.3": 100.0, "r10": 100.0, "mu0.05": 100.0}


def test_sweep_and_mismatch():
    truth = [Pose4((0, 0), 0, 1)] * 4
    est = [Pose4((d, 0), 0, 1) for d in (0, 1, 5, 30)]
    m = evaluate(est, truth)
    assert m.sweep["x"][:2] == [25.0, 50.0] and m.sweep["x"][19] == 75.0
    with pytest.raises(DataError):
        evaluate(est, truth[:3])
    with pytest.raises(DataError):
        pair_errors(Pose4(), Pose7())
    assert math.isnan(accuracy([], 1.0))
