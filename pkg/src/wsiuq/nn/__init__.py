"""Small numpy neural network core: layers, training loop, checkpoints."""
from .layers import (
    Dense,
    Dropout,
    DropoutSpec,
    ReLU,
    VariationalDense,
    dropout_forward,
    flipout_forward,
    kl_gaussian_to_standard_normal,
    softplus,
)
from .network import Network, build_mlp, cross_entropy_loss, elbo_loss, softmax, zero_network
from .optim import Adam, PlateauScheduler
from .train import EpochRecord, TrainConfig, TrainResult, train
from .gradcheck import gradient_check, gradient_norm
from . import checkpoint

__all__ = [
    "Adam", "Dense", "Dropout", "DropoutSpec", "EpochRecord", "Network", "PlateauScheduler",
    "ReLU", "TrainConfig", "TrainResult", "VariationalDense", "build_mlp", "checkpoint",
    "cross_entropy_loss", "dropout_forward", "elbo_loss", "flipout_forward",
    "gradient_check", "gradient_norm", "kl_gaussian_to_standard_normal", "softmax",
    "softplus", "train", "zero_network",
]
