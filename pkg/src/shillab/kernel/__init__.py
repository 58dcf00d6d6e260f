from .gradcheck import GradCheckReport, grad_check
from .layers import CrossAttention, Embedding, Linear, ReLU, Sigmoid, Tanh, softmax_backward
from .ops import (
    as_matrix,
    identity,
    l2_normalize_rows,
    log_sigmoid,
    log_softmax_rows,
    matmul,
    relu,
    scatter_add,
    sigmoid,
    softmax_rows,
    xavier_uniform,
)
from .params import FrozenParamsError, ParamStore
from .rng import Rng

__all__ = [
    "CrossAttention",
    "Embedding",
    "FrozenParamsError",
    "GradCheckReport",
    "Linear",
    "ParamStore",
    "ReLU",
    "Rng",
    "Sigmoid",
    "Tanh",
    "as_matrix",
    "grad_check",
    "identity",
    "l2_normalize_rows",
    "log_sigmoid",
    "log_softmax_rows",
    "matmul",
    "relu",
    "scatter_add",
    "sigmoid",
    "softmax_backward",
    "softmax_rows",
    "xavier_uniform",
]
