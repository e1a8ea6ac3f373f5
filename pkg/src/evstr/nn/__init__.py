from .tensor import (
    Tensor,
    ShapeError,
    add,
    concat,
    dropout,
    gather_rows,
    log_softmax,
    matmul,
    relu,
    sigmoid,
    softmax,
    tanh,
    texp,
    tlog,
    tmax,
    tmean,
    tsqrt,
    tsum,
)
from .module import MLP, BatchNorm, Dropout, LayerNorm, Linear, Module, Parameter, uniform_init
from .loss import cross_entropy
from .optim import SGD, cosine_lr
from .gradcheck import GradReport, grad_check
from . import serialize

__all__ = [
    "Tensor", "ShapeError", "add", "concat", "dropout", "gather_rows",
    "log_softmax", "matmul", "relu", "sigmoid", "softmax", "tanh", "texp",
    "tlog", "tmax", "tmean", "tsqrt", "tsum",
    "MLP", "BatchNorm", "Dropout", "LayerNorm", "Linear", "Module",
    "Parameter", "uniform_init", "cross_entropy", "SGD", "cosine_lr",
    "GradReport", "grad_check", "serialize",
]
