"""Embedding network: differentiation engine, encoder, loss, optimiser, trainer."""

from .loss import DegenerateBatchError, triplet_loss_semihard
from .model import ConvSpec, EmbeddingModel, ModelConfig, forward
from .tensor import Tensor, no_grad

__all__ = [
    "ConvSpec",
    "DegenerateBatchError",
    "EmbeddingModel",
    "ModelConfig",
    "Tensor",
    "forward",
    "no_grad",
    "triplet_loss_semihard",
]
