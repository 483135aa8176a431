"""Differentiable phase correlation for global rigid-plus-scale registration.

``register3`` aligns volumes in 7DoF (a rigid motion plus isotropic scale)
and ``register2`` aligns images in 4DoF.  Both run classically or behind a
trainable :class:`~dpc.autodiff.FilterStack`.
"""

from .autodiff import FilterStack
from .errors import (ConfigError, DataError, DegenerateInput, DPCError, EmptyInput, NumericalError,
                     ShapeError, StageError, StateError)
from .grid import Grid2, Grid3, PointCloud, Pose4, Pose7, apply_pose2, apply_pose3, normalize, voxelize
from .pipeline import Registration2Result, Registration3Result, SolverConfig, register2, register3

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DPCError", "DataError", "DegenerateInput", "EmptyInput", "FilterStack", "Grid2", "Grid3",
    "NumericalError", "PointCloud", "Pose4", "Pose7", "Registration2Result", "Registration3Result", "ShapeError",
    "SolverConfig", "StageError", "StateError", "apply_pose2", "apply_pose3", "normalize", "register2",
    "register3", "voxelize",
]
