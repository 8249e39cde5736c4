from .autodiff import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    bce_loss,
    concat,
    layer_norm,
    matmul,
    mean,
    mse_loss,
    mul,
    relu,
    reshape,
    row_softmax,
    scale,
    sigmoid,
    square,
    sub,
    take_rows,
    total,
    transpose,
)
from .optim import AdamW, ParamStore, adamw_step, cosine_lr
from .rng import RngStream, stream
from .special import bessel_k, erf, erfc, gaussian_q

__all__ = [
    "AdamW",
    "ParamStore",
    "RngStream",
    "ShapeError",
    "Tensor",
    "adamw_step",
    "add",
    "as_tensor",
    "backward",
    "bce_loss",
    "bessel_k",
    "concat",
    "cosine_lr",
    "erf",
    "erfc",
    "gaussian_q",
    "layer_norm",
    "matmul",
    "mean",
    "mse_loss",
    "mul",
    "relu",
    "reshape",
    "row_softmax",
    "scale",
    "sigmoid",
    "square",
    "stream",
    "sub",
    "take_rows",
    "total",
    "transpose",
]
