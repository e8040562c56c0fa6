"""Dense-array math with reverse-mode autodiff and gradient checking."""

from .engine import (
    NumArray,
    Tape,
    add,
    array,
    concat,
    constant,
    div,
    exp,
    gather_rows,
    l2_normalize,
    log,
    masked_max,
    matmul,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    softmax,
    sq_euclidean,
    sqrt,
    square,
    sub,
    tanh,
    transpose,
    window_concat,
)
from .gradcheck import grad_check

__all__ = [
    "NumArray",
    "Tape",
    "add",
    "array",
    "concat",
    "constant",
    "div",
    "exp",
    "gather_rows",
    "grad_check",
    "l2_normalize",
    "log",
    "masked_max",
    "matmul",
    "mul",
    "neg",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "softmax",
    "sq_euclidean",
    "sqrt",
    "square",
    "sub",
    "tanh",
    "transpose",
    "window_concat",
]
