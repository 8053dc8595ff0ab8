"""Central finite-difference oracle for backward rules.

The oracle is deliberately independent of the tape: numeric gradients come
from plain forward evaluations at perturbed inputs, so a wrong backward
rule cannot hide. Inputs should sit away from non-differentiable kinks
(e.g. perturb random draws slightly off exact relu corners); the check
itself does not move them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import NumericError
from .graph import DiffArray, Graph, constant, parameter


@dataclass
class GradCheckReport:
    """Per-coordinate comparison between analytic and numeric gradients."""

    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    tol: float
    passed: bool


def _relative_errors(analytic: np.ndarray, numeric: np.ndarray, switch: float) -> np.ndarray:
    # Coordinates where both gradients are tiny are compared absolutely so
    # finite-difference noise on near-zero entries cannot dominate the ratio.
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < switch
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(small, diff, diff / np.where(small, 1.0, scale))
    return rel


def grad_check(
    f: Callable[[DiffArray], DiffArray],
    x: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
    switch: float = 1e-6,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Passes iff the worst per-coordinate relative error is below ``tol``.
    Raises NumericError (naming the offending flat coordinate) if any
    evaluation or gradient is non-finite.
    """
    x = np.asarray(x, dtype=np.float64)

    leaf = parameter(x)
    with Graph() as graph:
        out = f(leaf)
        if out.value.size != 1:
            raise NumericError(f"grad_check target must be scalar, got shape {out.value.shape}")
        if not np.isfinite(out.value).all():
            raise NumericError("grad_check forward value is non-finite")
        graph.backward(out)
    analytic = np.zeros_like(x) if leaf.grad is None else leaf.grad.copy()
    if not np.isfinite(analytic).all():
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError(f"analytic gradient non-finite at flat coordinate {bad}")

    numeric = np.zeros_like(x)
    flat = numeric.reshape(-1)
    base = x.copy()
    for i in range(base.size):
        orig = base.flat[i]
        base.flat[i] = orig + h
        hi = float(f(constant(base.copy())).value)
        base.flat[i] = orig - h
        lo = float(f(constant(base.copy())).value)
        base.flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"finite-difference evaluation non-finite at flat coordinate {i}")
        flat[i] = (hi - lo) / (2.0 * h)

    rel = _relative_errors(analytic, numeric, switch)
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(
        analytic=analytic,
        numeric=numeric,
        rel_errors=rel,
        max_rel_error=max_rel,
        tol=tol,
        passed=bool(max_rel < tol),
    )
