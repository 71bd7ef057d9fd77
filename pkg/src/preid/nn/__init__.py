from .tensor import (
    Tensor,
    GradError,
    ShapeError,
    add,
    bce_with_logits,
    concat,
    div,
    elu_plus_one,
    exp,
    gather,
    layer_norm,
    log,
    matmul,
    maximum_scalar,
    mul,
    pool_concat,
    relu,
    reshape,
    sigmoid,
    sqrt,
    sub,
    swapaxes,
    tmax,
    tmean,
    tsum,
)
from .params import Parameter, ParameterStore, kaiming_uniform

__all__ = [
    "Tensor", "GradError", "ShapeError",
    "add", "sub", "mul", "div", "matmul", "relu", "elu_plus_one", "exp", "log",
    "sqrt", "sigmoid", "maximum_scalar", "tsum", "tmean", "tmax", "concat",
    "reshape", "swapaxes", "gather", "layer_norm", "pool_concat",
    "bce_with_logits", "Parameter", "ParameterStore", "kaiming_uniform",
]
