"""Tensor engine: dense arrays, reverse-mode autodiff, 3D network primitives."""

from voxdemog.tensor.conv import ConvSpec, avgpool3d, conv3d, global_avgpool, maxpool3d, output_extent
from voxdemog.tensor.core import (
    Tensor,
    absolute,
    add,
    backward,
    concat,
    div,
    exp,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    pad,
    power,
    reshape,
    roll,
    sqrt,
    sub,
    take_rows,
    tensor,
    transpose,
    tsum,
)
from voxdemog.tensor.functional import (
    BatchNormState,
    batchnorm,
    dropout,
    gelu,
    layernorm,
    linear,
    relu,
    sigmoid,
    softmax,
)
from voxdemog.tensor.gradcheck import check_parameters, finite_diff_check, relative_error

__all__ = [
    "BatchNormState",
    "ConvSpec",
    "Tensor",
    "absolute",
    "add",
    "avgpool3d",
    "backward",
    "batchnorm",
    "check_parameters",
    "concat",
    "conv3d",
    "div",
    "dropout",
    "exp",
    "finite_diff_check",
    "gelu",
    "global_avgpool",
    "is_grad_enabled",
    "layernorm",
    "linear",
    "log",
    "matmul",
    "maxpool3d",
    "mean",
    "mul",
    "no_grad",
    "output_extent",
    "pad",
    "power",
    "relative_error",
    "relu",
    "reshape",
    "roll",
    "sigmoid",
    "softmax",
    "sqrt",
    "sub",
    "take_rows",
    "tensor",
    "transpose",
    "tsum",
]
