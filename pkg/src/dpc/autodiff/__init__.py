"""Reverse-mode gradients, trainable extractors and training."""

from .filters import FilterStack, extract
from .tape import Var, backward, var

__all__ = ["FilterStack", "Var", "backward", "extract", "var"]
