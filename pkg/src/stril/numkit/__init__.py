"""Numeric substrate: fp64 autodiff, Adam, distribution helpers, PCA, RNG, checkpoints."""

from . import tensor as ops
from .checkpoint import read_checkpoint, write_checkpoint
from .dist import categorical_stats, gaussian_reparam, kl_diag_gaussian, positive_scale
from .optim import AdamState, ParamStore, RowAdam, adam_step, clip_by_global_norm
from .pca import jacobi_eigh, pca_project
from .rng import make_rng, sample_index
from .tensor import NonFiniteError, Tensor, forward_backward

__all__ = [
    "AdamState",
    "NonFiniteError",
    "ParamStore",
    "RowAdam",
    "Tensor",
    "adam_step",
    "categorical_stats",
    "clip_by_global_norm",
    "forward_backward",
    "gaussian_reparam",
    "jacobi_eigh",
    "kl_diag_gaussian",
    "make_rng",
    "ops",
    "pca_project",
    "positive_scale",
    "read_checkpoint",
    "sample_index",
    "write_checkpoint",
]
