"""Minimal reverse-mode differentiable array core."""

from .graph import DiffArray, Graph, accumulate, as_array, constant, current_graph, parameter, record_op
from .gradcheck import GradCheckReport, grad_check
from .norm import RunningNorm
from .ops import (
    add,
    array_sum,
    avg_pool2d,
    concat,
    conv2d,
    exp,
    l2_normalize,
    log,
    matmul,
    mean,
    mul,
    neg,
    reduce_max,
    relu,
    reshape,
    set_backward_fault,
    sqrt,
    stop_gradient,
    sub,
    take_rows,
    transpose,
)

__all__ = [
    "DiffArray",
    "Graph",
    "GradCheckReport",
    "RunningNorm",
    "accumulate",
    "add",
    "array_sum",
    "avg_pool2d",
    "as_array",
    "concat",
    "constant",
    "conv2d",
    "current_graph",
    "exp",
    "grad_check",
    "l2_normalize",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "parameter",
    "record_op",
    "reduce_max",
    "relu",
    "reshape",
    "set_backward_fault",
    "sqrt",
    "stop_gradient",
    "sub",
    "take_rows",
    "transpose",
]
