"""Float64 tensors, seeded randomness and reverse-mode autodiff."""
from romda.numerics import autodiff as ad
from romda.numerics.autodiff import Graph, Node
from romda.numerics.gradcheck import grad_check
from romda.numerics.rng import Rng
from romda.numerics.tensor import as_tensor, decode_rmx, encode_rmx, read_rmx, write_rmx

__all__ = [
    "Graph", "Node", "Rng", "ad", "as_tensor", "decode_rmx", "encode_rmx",
    "grad_check", "read_rmx", "write_rmx",
]
