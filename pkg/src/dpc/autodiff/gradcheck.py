"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import ConfigError
from ..grid import Pose4, Pose7, apply_pose2, apply_pose3, Grid2, Grid3, matrix_to_euler
from .filters import FilterStack
from .tape import Var, backward
from .train import DEFAULT_WEIGHTS, stage_losses, total_loss

STAGE_TERMS = {
    "rotation": ("r_kld", "r_l1"),
    "scale": ("mu_kld", "mu_l1"),
    "translation": ("t_kld", "t_l1"),
    "rot_scale": ("r_kld", "r_l1", "mu_l1"),
}
STAGE_TEMPERATURE = {"rotation": "r", "scale": "mu", "translation": "t", "rot_scale": "r"}


@dataclass
class GradReport:
    """Gradients per tensor and, after a check, normwise relative errors."""

    grads: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def passed(self, tol=1e-3):
        return self.max_error <= tol

    def lines(self):
        for k in sorted(self.errors):
            yield f"{k}: rel_err={self.errors[k]:.3e}"
        yield f"max_rel_err={self.max_error:.3e}"


def backward_report(loss, stack=None, inputs=None):
    """Run the reverse pass from ``loss`` and gather gradients.

    ``inputs`` maps names to leaf Vars (e.g. the input grids).  Temperature
    gradients are reported with respect to ``xi`` itself, not its log.
    """
    backward(loss)
    rep = GradReport()
    for name, v in (inputs or {}).items():
        rep.grads[name] = np.zeros(np.shape(v.value)) if v.grad is None else np.real(v.grad)
    if stack is not None:
        for name, p in stack.params.items():
            g = np.zeros(np.shape(p.value)) if p.grad is None else np.real(p.grad)
            if name.startswith("log_xi."):
                rep.grads["xi." + name[7:]] = g / math.exp(float(p.value))
            else:
                rep.grads[name] = g
    return rep


def relative_error(analytic, numeric, floor=1e-8):
    """``max|a - n| / max(max|n|, max|a|, floor)``.

    ``floor`` keeps tensors whose true gradient vanishes (a bias feeding
    only the zero-frequency bin) from turning round-off into a large ratio.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    den = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / den)


def make_problem(B, seed, ndim=3):
    """Random smooth pair, ground-truth pose and a perturbed identity stack."""
    rng = np.random.default_rng(seed)
    n = 2 * B
    v1 = rng.random((n,) * ndim)
    if ndim == 3:
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        R = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                      [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                      [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
        pose = Pose7(tuple(rng.uniform(-1, 1, 3)), matrix_to_euler(R), rng.uniform(0.9, 1.1))
        v2 = apply_pose3(Grid3(B, v1), pose).data
    else:
        pose = Pose4(tuple(rng.uniform(-1, 1, 2)), rng.uniform(0, math.pi), rng.uniform(0.9, 1.1))
        v2 = apply_pose2(Grid2(B, v1), pose).data
    v2 = v2 + 0.01 * rng.random(v2.shape)
    stack = FilterStack(ndim, n_layers=2, kernel=3)
    for name, p in stack.params.items():
        if not name.startswith("log_xi"):
            p.value = p.value + rng.normal(0, 0.05, np.shape(p.value))
        if name.endswith(".0.bias"):
            # keep pre-activations clear of the leaky kink so differences are smooth
            p.value = p.value + 0.5
    return v1, v2, pose, stack


def stage_loss(v1, v2, pose, stack, stage, solver=None, return_centers=False):
    """Weighted loss terms of one stage under ground-truth compensation."""
    from ..pipeline import forward2, forward3
    fwd = forward3 if isinstance(pose, Pose7) else forward2
    _, out, _ = fwd(v1, v2, stack, solver, truth=pose)
    terms = stage_losses(out, pose)
    keep = {k: terms[k] for k in STAGE_TERMS[stage]}
    loss = total_loss(keep, DEFAULT_WEIGHTS)
    if return_centers:
        return loss, {k: v["est"].name for k, v in out.items()}
    return loss


GRADCHECK_EPS = 1e-3


def gradcheck(B=4, stage="rotation", seed=7, h=1e-3, n_probe=64, n_param_probe=6, ndim=None, order=4,
              eps=GRADCHECK_EPS):
    """Compare analytic and central-difference gradients for one stage.

    Probes ``n_probe`` random cells of the first input grid, up to
    ``n_param_probe`` entries of every extractor tensor feeding the stage and
    the stage temperature.  ``order=4`` uses the five-point central stencil
    with step ``h``; ``order=2`` the plain two-point one.  Whitening divides
    by ``|G2|^2``, so the loss is strongly curved and the two-point
    truncation error alone can exceed 1e-3 relative.  For the same reason
    the whitening floor defaults to ``1e-3``: with the inference default of
    ``1e-8`` near-empty spectral bins make the loss vary on scales far below
    ``h``, and agreement is only visible at much smaller steps.
    """
    if order not in (2, 4):
        raise ConfigError(f"order must be 2 or 4, got {order}")
    if stage not in STAGE_TERMS:
        raise ConfigError(f"stage must be one of {sorted(STAGE_TERMS)}, got {stage!r}")
    if not 2 <= B <= 16:
        raise ConfigError(f"bandwidth must lie in [2, 16], got {B}")
    ndim = ndim or (2 if stage == "rot_scale" else 3)
    v1, v2, pose, stack = make_problem(B, seed, ndim)
    from ..pipeline import SolverConfig
    g1 = Var(v1.copy(), requires_grad=True)
    loss, centers = stage_loss(g1, v2, pose, stack, stage, SolverConfig(eps=eps), return_centers=True)
    rep = backward_report(loss, stack, {"g1": g1})
    rng = np.random.default_rng(seed + 1)
    # the backward pass treats window positions as constants; so must the differences
    pinned = SolverConfig(eps=eps, centers=centers)

    def loss_value():
        return float(stage_loss(v1, v2, pose, stack, stage, pinned).value)

    scale = max(float(np.abs(g).max(initial=0.0)) for g in rep.grads.values())
    floor = max(1e-6 * scale, 1e-8)
    checks = {}

    def central(f):
        if order == 2:
            return (f(h) - f(-h)) / (2 * h)
        return (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h)

    def probe(arr, flat_idx, setter):
        num = []
        for i in flat_idx:
            orig = arr.flat[i]

            def f(d):
                setter(i, orig + d)
                return loss_value()

            num.append(central(f))
            setter(i, orig)
        return np.array(num)

    idx = rng.choice(v1.size, min(n_probe, v1.size), replace=False)

    def set_v1(i, val):
        v1.flat[i] = val

    checks["g1"] = (rep.grads["g1"].flat[idx], probe(v1, idx, set_v1))

    prefix = "translation." if stage == "translation" else "rot_scale."
    for name, p in stack.params.items():
        if not name.startswith(prefix):
            continue
        arr = np.atleast_1d(np.array(p.value, dtype=float))
        pidx = rng.choice(arr.size, min(n_param_probe, arr.size), replace=False)

        def set_p(i, val, p=p, arr=arr):
            arr.flat[i] = val
            p.value = arr.reshape(np.shape(p.value)) if np.ndim(p.value) else np.float64(arr[0])

        num = probe(arr, pidx, set_p)
        checks[name] = (np.atleast_1d(rep.grads[name]).flat[pidx], num)

    tname = STAGE_TEMPERATURE[stage]
    lp = stack.params[f"log_xi.{tname}"]
    xi0 = math.exp(float(lp.value))
    def f_xi(d):
        lp.value = np.float64(math.log(xi0 + d))
        return loss_value()

    checks[f"xi.{tname}"] = (rep.grads[f"xi.{tname}"], central(f_xi))
    lp.value = np.float64(math.log(xi0))
    for name, (a, n) in checks.items():
        rep.errors[name] = relative_error(a, n, floor)
    return rep
