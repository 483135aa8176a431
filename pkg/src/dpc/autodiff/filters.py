"""Trainable feature extractors and solver temperatures."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, ShapeError
from ..grid import Grid
from . import ops
from .tape import Var

STAGES = ("rot_scale", "translation")
SIDES = (1, 2)
TEMPERATURES = ("r", "mu", "t")


class FilterStack:
    """Four small convolution stacks plus three log-temperatures.

    Each extractor is ``conv -> leaky -> conv [-> leaky -> conv]``; the final
    layer has no nonlinearity so the identity initialisation passes
    non-negative inputs through unchanged.

    Parameters
    ----------
    ndim : int
        2 for images, 3 for volumes.
    n_layers : int
        2 or 3 convolution layers per extractor.
    kernel : int
        Odd kernel side, 3 or 5.
    slope : float
        Negative-side slope of the leaky nonlinearity.
    init : {"identity", "zeros", "random"}
    """

    def __init__(self, ndim, n_layers=2, kernel=3, slope=0.1, xi=10.0, init="identity", seed=0):
        if ndim not in (2, 3):
            raise ConfigError(f"ndim must be 2 or 3, got {ndim}")
        if n_layers not in (2, 3):
            raise ConfigError(f"n_layers must be 2 or 3, got {n_layers}")
        if kernel not in (3, 5):
            raise ConfigError(f"kernel must be 3 or 5, got {kernel}")
        self.ndim, self.n_layers, self.kernel, self.slope = ndim, n_layers, kernel, float(slope)
        rng = np.random.default_rng(seed)
        self.params = {}
        for stage in STAGES:
            for side in SIDES:
                for layer in range(n_layers):
                    k = np.zeros((kernel,) * ndim)
                    if init == "identity":
                        k[(kernel // 2,) * ndim] = 1.0
                    elif init == "random":
                        k = rng.normal(0, 0.3, k.shape)
                    elif init != "zeros":
                        raise ConfigError(f"unknown init {init!r}")
                    self.params[f"{stage}.{side}.{layer}.kernel"] = Var(k, requires_grad=True)
                    self.params[f"{stage}.{side}.{layer}.bias"] = Var(np.float64(0.0), requires_grad=True)
        for name in TEMPERATURES:
            self.params[f"log_xi.{name}"] = Var(np.float64(math.log(xi)), requires_grad=True)

    # ------------------------------------------------------------------

    def xi(self, name):
        """Temperature ``exp(log_xi)`` as a differentiable scalar."""
        return ops.exp(self.params[f"log_xi.{name}"])

    def temperatures(self):
        return {n: float(np.exp(self.params[f"log_xi.{n}"].value)) for n in TEMPERATURES}

    def extract(self, g, stage, side):
        """Run one extractor on a grid (or Var); returns a Var of the same shape."""
        if stage not in STAGES or side not in SIDES:
            raise ConfigError(f"unknown extractor {stage}/{side}")
        x = g.data if isinstance(g, Grid) else g
        val = x.value if isinstance(x, Var) else np.asarray(x)
        if np.ndim(val) != self.ndim:
            raise ShapeError(f"extractor expects {self.ndim}D input, got {np.ndim(val)}D")
        for layer in range(self.n_layers):
            k = self.params[f"{stage}.{side}.{layer}.kernel"]
            b = self.params[f"{stage}.{side}.{layer}.bias"]
            x = ops.conv(x, k, b)
            if layer < self.n_layers - 1:
                x = ops.leaky_relu(x, self.slope)
        return x

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self):
        """Plain ``name -> array`` copy of every parameter."""
        return {k: np.array(v.value, dtype=float) for k, v in self.params.items()}

    def load_state(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, v in state.items():
            if k not in self.params:
                raise ShapeError(f"unexpected parameter {k!r}")
            v = np.asarray(v, dtype=float)
            if v.shape != np.shape(self.params[k].value):
                raise ShapeError(f"{k}: shape {v.shape} != {np.shape(self.params[k].value)}")
            if not np.all(np.isfinite(v)):
                raise ShapeError(f"{k}: non-finite values")
            self.params[k].value = v.copy() if v.ndim else np.float64(v)


def extract(g, stack, stage, side):
    """Extractor output, or the input itself in classical mode (``stack is None``)."""
    if stack is None:
        x = g.data if isinstance(g, Grid) else g
        return x if isinstance(x, Var) else Var(np.asarray(x, float))
    return stack.extract(g, stage, side)
