"""Pose-supervised training of the extractor stack and solver temperatures."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, NumericalError
from ..grid import Grid, Pose4, Pose7
from . import ops
from .filters import FilterStack
from .tape import backward

log = logging.getLogger(__name__)

LOSS_NAMES = ("r_kld", "r_l1", "t_kld", "t_l1", "mu_kld", "mu_l1")
DEFAULT_WEIGHTS = (1.0, 3.0, 3.0, 1.0, 1.0, 3.0)


@dataclass
class TrainConfig:
    """Training hyper-parameters.

    ``weights`` follow the order of :data:`LOSS_NAMES`.  ``decay`` multiplies
    the learning rate every ``decay_every`` steps (1.0 disables it).
    """

    weights: tuple = DEFAULT_WEIGHTS
    lr: float = 3e-4
    steps: int = 2000
    seed: int = 0
    sigma: float = 1.0
    optimizer: str = "adam"
    decay: float = 1.0
    decay_every: int = 500
    learn_temperatures: bool = True
    solver: object = None

    def __post_init__(self):
        if len(self.weights) != 6 or any(w < 0 for w in self.weights):
            raise ConfigError(f"weights: need six non-negative values, got {self.weights}")
        if not self.lr >= 0:
            raise ConfigError(f"lr: must be non-negative, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps: must be non-negative, got {self.steps}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer: expected 'adam' or 'sgd', got {self.optimizer!r}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma: must be positive, got {self.sigma}")


# ---------------------------------------------------------------- losses

def _wrap(x, period):
    return (x + period / 2) % period - period / 2


def stage_losses(out, truth, sigma=1.0):
    """The six loss terms of one forward pass against a ground-truth pose."""
    L = {}
    if isinstance(truth, Pose7):
        rot, sc, tr = out["rotation"], out["scale"], out["translation"]
        eul = np.asarray(truth.euler)
        L["r_kld"] = ops.kld(rot["map"], rot["xi"], rot["axes"], rot["periods"], eul, sigma)
        L["r_l1"] = ops.l1(rot["est"], eul, rot["periods"])
        lmu = math.log(truth.mu)
        L["mu_kld"] = ops.kld(sc["map"], sc["xi"], sc["axes"], sc["periods"], [lmu], sigma)
        L["mu_l1"] = ops.l1(ops.exp(ops.index(sc["est"], 0)), truth.mu)
    else:
        rs, tr = out["rot_scale"], out["translation"]
        target = np.array([math.log(truth.mu), _wrap(-truth.theta, math.pi)])
        L["r_kld"] = ops.kld(rs["map"], rs["xi"], rs["axes"], rs["periods"], target, sigma)
        L["r_l1"] = ops.l1(ops.index(rs["est"], 1), target[1], (math.pi,))
        L["mu_l1"] = ops.l1(ops.exp(ops.index(rs["est"], 0)), truth.mu)
    t = np.asarray(truth.t, float)
    L["t_kld"] = ops.kld(tr["map"], tr["xi"], tr["axes"], tr["periods"], t, sigma)
    L["t_l1"] = ops.l1(tr["est"], t, tr["periods"])
    return L


def total_loss(losses, weights=DEFAULT_WEIGHTS):
    names = [n for n in LOSS_NAMES if n in losses]
    w = dict(zip(LOSS_NAMES, weights))
    return ops.weighted_sum([losses[n] for n in names], [w[n] for n in names])


def pair_loss(v1, v2, truth, stack, solver=None, sigma=1.0, weights=DEFAULT_WEIGHTS):
    """Forward one pair with ground-truth compensation; returns (total Var, terms)."""
    from ..pipeline import forward2, forward3
    a1 = v1.data if isinstance(v1, Grid) else v1
    a2 = v2.data if isinstance(v2, Grid) else v2
    fwd = forward3 if isinstance(truth, Pose7) else forward2
    _, out, _ = fwd(a1, a2, stack, solver, truth=truth)
    terms = stage_losses(out, truth, sigma)
    return total_loss(terms, weights), terms


# ---------------------------------------------------------------- optimisers

class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params):
        self.t += 1
        for name, p in params.items():
            if p.grad is None:
                continue
            g = np.real(p.grad)
            m = self.m.get(name, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(name, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            p.value = p.value - self.lr * mh / (np.sqrt(vh) + self.eps)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params):
        for p in params.values():
            if p.grad is not None:
                p.value = p.value - self.lr * np.real(p.grad)


@dataclass
class TrainResult:
    stack: FilterStack
    curve: list = field(default_factory=list)

    def write_curve(self, path):
        write_loss_curve(path, self.curve)


def write_loss_curve(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss_total", "loss_r", "loss_mu", "loss_t"])
        for row in curve:
            w.writerow([row[0], *(f"{v:.9g}" for v in row[1:])])


def train(pairs, cfg, stack=None, callback=None):
    """Fit ``stack`` on ``pairs`` of ``(source, target, pose)``, one pair per step.

    Pairs are visited in a seeded random order, reshuffled each epoch.
    Returns a :class:`TrainResult` with rows ``(step, total, r, mu, t)``.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("training set is empty")
    ndim = np.ndim(pairs[0][0].data if isinstance(pairs[0][0], Grid) else pairs[0][0])
    stack = stack or FilterStack(ndim)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr) if cfg.optimizer == "adam" else SGD(cfg.lr)
    params = {k: v for k, v in stack.params.items() if cfg.learn_temperatures or not k.startswith("log_xi")}
    curve = []
    order = []
    for step in range(cfg.steps):
        if not order:
            order = list(rng.permutation(len(pairs)))
        v1, v2, truth = pairs[order.pop()]
        stack.zero_grad()
        total, terms = pair_loss(v1, v2, truth, stack, solver=cfg.solver, sigma=cfg.sigma, weights=cfg.weights)
        val = float(total.value)
        if not math.isfinite(val):
            raise NumericalError(f"loss diverged at step {step}")
        w = dict(zip(LOSS_NAMES, cfg.weights))
        part = {k: sum(w[n] * float(terms[n].value) for n in terms if n.startswith(k + "_")) for k in ("r", "mu", "t")}
        curve.append((step, val, part["r"], part["mu"], part["t"]))
        if cfg.lr > 0 and total.requires_grad:
            backward(total)
            opt.step(params)
        if cfg.decay != 1.0 and (step + 1) % cfg.decay_every == 0:
            opt.lr *= cfg.decay
        if callback is not None:
            callback(step, val)
    return TrainResult(stack, curve)
