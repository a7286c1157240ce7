"""Dense float64 tensors with reverse-mode differentiation, layers and AdamW."""

from .functional import RunningStats, batch_norm, conv1d, fully_connected, max_pool_global, mse, relu
from .layers import BatchNorm1d, Conv1d, ConvBlock, Linear, Module, Parameter
from .optim import AdamW, AdamWState, clip_grad_norm
from .tensor import Tensor, as_tensor, backward

__all__ = [
    "AdamW", "AdamWState", "BatchNorm1d", "Conv1d", "ConvBlock", "Linear", "Module", "Parameter",
    "RunningStats", "Tensor", "as_tensor", "backward", "batch_norm", "clip_grad_norm", "conv1d",
    "fully_connected", "max_pool_global", "mse", "relu",
]
