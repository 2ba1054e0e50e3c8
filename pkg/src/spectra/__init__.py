"""Spectral analysis and graph neural networks for signed directed graphs."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    DivergenceError,
    DomainError,
    IsolatedNodeError,
    ParseError,
    SpectraError,
)
from .graph import SignedDiGraph, SsbmParams, load_edge_list, ssbm_generate, symmetrize  # noqa: E402
from .spectral import LaplacianKind, build_laplacian  # noqa: E402

__all__ = [
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "IsolatedNodeError",
    "LaplacianKind",
    "ParseError",
    "SignedDiGraph",
    "SpectraError",
    "SsbmParams",
    "build_laplacian",
    "load_edge_list",
    "ssbm_generate",
    "symmetrize",
]
