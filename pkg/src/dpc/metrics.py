"""Registration error metrics, threshold accuracies and mean squared errors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .grid import Pose4, Pose7, geodesic_distance, wrap_angle

DEFAULT_THRESHOLDS_2D = {"x": 10.0, "y": 10.0, "r": 1.0, "mu": 0.2}
DEFAULT_THRESHOLDS_3D = {"t": 0.3, "r": 10.0, "mu": 0.05}


def pair_errors(est, truth):
    """Absolute errors of one pair; rotations in degrees.

    2D poses give ``x``, ``y``, ``r``, ``mu``; 3D poses give ``t``
    (Euclidean), ``r`` (geodesic) and ``mu``.
    """
    if isinstance(est, Pose4) and isinstance(truth, Pose4):
        dr = abs(wrap_angle(est.theta - truth.theta))
        return {
            "x": abs(est.t[0] - truth.t[0]),
            "y": abs(est.t[1] - truth.t[1]),
            "r": math.degrees(dr),
            "mu": abs(est.mu - truth.mu),
        }
    if isinstance(est, Pose7) and isinstance(truth, Pose7):
        return {
            "t": float(np.linalg.norm(np.subtract(est.t, truth.t))),
            "r": math.degrees(geodesic_distance(est.R, truth.R)),
            "mu": abs(est.mu - truth.mu),
        }
    raise DataError(f"cannot compare {type(est).__name__} with {type(truth).__name__}")


def accuracy(errors, tau):
    """Percentage of errors at or below ``tau``."""
    errors = np.asarray(errors, float)
    if errors.size == 0:
        return float("nan")
    return 100.0 * float(np.mean(errors <= tau))


@dataclass
class Metrics:
    per_pair: list
    acc: dict = field(default_factory=dict)
    mse: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    def lines(self):
        for k, v in self.acc.items():
            yield f"Acc_{k}: {v:.2f}%"
        for k, v in self.mse.items():
            yield f"MSE_{k}: {v:.6g}"


def evaluate(estimates, truths, thresholds=None, sweep=range(20)):
    """Aggregate metrics over aligned lists of estimated and true poses.

    ``sweep`` gives the integer thresholds of the accuracy curves (one curve
    per error component).
    """
    if len(estimates) != len(truths):
        raise DataError(f"length mismatch: {len(estimates)} estimates vs {len(truths)} ground-truth poses")
    per_pair = [pair_errors(e, t) for e, t in zip(estimates, truths)]
    if not per_pair:
        return Metrics([])
    three_d = "t" in per_pair[0]
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS_3D if three_d else DEFAULT_THRESHOLDS_2D
    cols = {k: np.array([p[k] for p in per_pair]) for k in per_pair[0]}
    acc = {f"{k}{_fmt(tau)}": accuracy(cols[k], tau) for k, tau in thresholds.items() if k in cols}
    mse = {k: float(np.mean(v ** 2)) for k, v in cols.items()}
    curves = {k: [accuracy(v, tau) for tau in sweep] for k, v in cols.items()}
    return Metrics(per_pair, acc, mse, curves)


def _fmt(tau):
    return f"{tau:g}"
