"""Tensor arithmetic with reverse-mode automatic differentiation."""
from .tensor import (
    DimensionError,
    DomainError,
    NumcoreError,
    Tensor,
    UsageError,
    grad_enabled,
    no_grad,
)
from .ops import (
    add,
    clamp,
    conv1d,
    elementwise,
    exp,
    groupnorm,
    huber,
    linear,
    log,
    log1p,
    mul,
    negate,
    rdft,
    reduce,
    resample_linear,
    reshape,
    rmax,
    rmean,
    rmin,
    rstd,
    rsum,
    scale,
    silu,
    sqrt,
    square,
    sub,
)

__all__ = [
    "DimensionError",
    "DomainError",
    "NumcoreError",
    "Tensor",
    "UsageError",
    "grad_enabled",
    "no_grad",
    "add",
    "clamp",
    "conv1d",
    "elementwise",
    "exp",
    "groupnorm",
    "huber",
    "linear",
    "log",
    "log1p",
    "mul",
    "negate",
    "rdft",
    "reduce",
    "resample_linear",
    "reshape",
    "rmax",
    "rmean",
    "rmin",
    "rstd",
    "rsum",
    "scale",
    "silu",
    "sqrt",
    "square",
    "sub",
]
