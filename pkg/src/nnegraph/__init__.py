"""Nearest neighbour embracing graphs on Poisson processes in Euclidean and hyperbolic space."""
from .geometry import Space
from .nne import NNEGraph, build_nne, verify_graph
from .sampling import PointConfiguration, RandomStream, sample_poisson_ball

__all__ = [
    "Space",
    "NNEGraph",
    "build_nne",
    "verify_graph",
    "PointConfiguration",
    "RandomStream",
    "sample_poisson_ball",
]
