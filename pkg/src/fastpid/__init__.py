"""Partial information decomposition with a differentiable solver, an exact oracle,
a synergy-aware training controller and a two-modality competition simulator."""

from .dist import Joint3, Marginal2, InfoMeasures, build_joint, marginal, measures, quantize_embeddings
from .solver import SolverConfig, PidResult, solve

__all__ = [
    "Joint3",
    "Marginal2",
    "InfoMeasures",
    "build_joint",
    "marginal",
    "measures",
    "quantize_embeddings",
    "SolverConfig",
    "PidResult",
    "solve",
]
__version__ = "0.1.0"
