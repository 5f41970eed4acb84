"""Tape-based reverse-mode differentiation over dense and CSR matrix kernels."""
from . import ops
from .rng import RngStream
from .sparse import SparsePattern, SparseWeighted
from .tape import GradientMap, Node, Tape, tape_gradients, vjp_through_gradient

__all__ = [
    "GradientMap",
    "Node",
    "RngStream",
    "SparsePattern",
    "SparseWeighted",
    "Tape",
    "ops",
    "tape_gradients",
    "vjp_through_gradient",
]
