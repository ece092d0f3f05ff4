"""Alignment-factorized sentence-pair model with a self-checkable autodiff
core: compare aligned token pairs, compress each comparison to a scalar,
propagate the scalars into the sequence encoder."""

from .config import ModelConfig
from .model import Model, build_model, count_params, cross_entropy_loss
from .tensor import Tensor, backward, check_gradients

__version__ = "0.1.0"

__all__ = ["ModelConfig", "Model", "build_model", "count_params",
           "cross_entropy_loss", "Tensor", "backward", "check_gradients",
           "__version__"]
