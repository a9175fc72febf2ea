from .functional import (
    avg_pool2d,
    conv2d,
    conv_output_shape,
    depthwise_conv2d,
    linear,
    pad2d,
    transposed_conv2d,
    upsample_nearest,
)
from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .optim import Adam, AdamState, EarlyStopping, LrSchedule, ReduceOnPlateau, adam_step
from .serialize import FormatError, read_tensor, write_tensor
from .tensor import (
    ShapeError,
    Tensor,
    backward,
    concat,
    is_grad_enabled,
    matmul,
    no_grad,
    parameter,
    stack,
    tensor,
    unbroadcast,
    where,
)

__all__ = [
    "Adam", "AdamState", "Conv2d", "ConvTranspose2d", "EarlyStopping", "FormatError", "Linear",
    "LrSchedule", "Module", "ReduceOnPlateau", "ShapeError", "Tensor", "adam_step", "avg_pool2d",
    "backward", "concat", "conv2d", "conv_output_shape", "depthwise_conv2d", "is_grad_enabled",
    "linear", "matmul", "no_grad", "pad2d", "parameter", "read_tensor", "stack", "tensor",
    "transposed_conv2d", "unbroadcast", "upsample_nearest", "where", "write_tensor",
]
