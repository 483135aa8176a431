"""Minimal reverse-mode tape.

Every differentiable operation returns a :class:`Var` holding its value, its
parent variables and a vector-Jacobian closure.  Nothing is recorded when no
parent requires a gradient, so the same code path serves plain inference.

Gradient convention for complex values: ``grad = dL/dRe + i dL/dIm`` for a
real scalar loss ``L``.  Under this convention a linear map ``A`` pulls
gradients back through ``A^H``.
"""

from __future__ import annotations

import numpy as np

from ..errors import StateError


class Var:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "name")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None


def var(x, requires_grad=False, name=None):
    """Wrap a value as a leaf; existing Vars pass through unchanged."""
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x) if not np.isscalar(x) else x, requires_grad=requires_grad, name=name)


def const(x):
    return var(x, requires_grad=False)


def record(value, parents, vjp):
    """Build an op output; ``vjp(g)`` returns one gradient (or None) per parent."""
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Var(value, parents, vjp, True)
    return Var(value)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out, seed=None):
    """Accumulate ``d out / d leaf`` into ``.grad`` of every reachable leaf.

    ``out`` is normally a scalar loss; ``seed`` supplies the upstream
    gradient for non-scalar outputs.  Returns the list of leaves touched.
    """
    if not isinstance(out, Var) or not out.requires_grad:
        raise StateError("nothing was recorded: the output does not depend on any variable requiring a gradient")
    if seed is None:
        if np.size(out.value) != 1:
            raise StateError("a seed gradient is required for non-scalar outputs")
        seed = np.ones_like(np.asarray(out.value, dtype=float))
    grads = {id(out): np.asarray(seed)}
    leaves = []
    for node in reversed(_toposort(out)):
        g = grads.pop(id(node), None)
        if node.vjp is None:
            if g is not None:
                node.grad = g if node.grad is None else node.grad + g
                leaves.append(node)
            continue
        if g is None:
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    return leaves
