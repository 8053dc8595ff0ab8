"""Contrastive objectives, their weighted sum, and the depth-probe loss.

The contrastive loss treats each matched key as the positive class among
exactly the matched keys of the same scene: no memory bank, no cross-scene
negatives. It is averaged over pairs by default so gradient magnitudes do
not scale with the pair count; a flag restores plain-sum semantics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DiffArray
from .errors import ConfigError, DegenerateBatchError, NumericError
from .matching import MatchSet


@dataclass(frozen=True)
class LossWeights:
    lambda_intra: float = 1.0
    mu_inter: float = 1.0
    temperature: float = 0.07

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.lambda_intra < 0 or self.mu_inter < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lambda_intra == 0 and self.mu_inter == 0:
            raise ConfigError("at least one loss weight must be positive")


@dataclass(frozen=True)
class SiLossParams:
    """Scale-invariant depth loss parameters.

    ``pixel_count`` is informational: the effective count is always derived
    from the valid mask at call time.
    """

    variance_weight: float = 0.85
    scale: float = 10.0
    pixel_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.variance_weight <= 1.0:
            raise ConfigError(f"variance_weight must be in [0, 1], got {self.variance_weight}")
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")


def info_nce(
    queries: DiffArray,
    keys: DiffArray,
    pairs: MatchSet,
    temperature: float,
    reduction: str = "mean",
    check_norm: bool = True,
) -> DiffArray:
    """Softmax cross-entropy over similarity logits of matched pairs.

    For each pair (i, j), q_i against the matched keys {k_k : (., k) in pairs}
    with k_j as the positive. Queries and keys index into full embedding
    matrices through the pair lists.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    m = len(pairs)
    if m < 2:
        raise DegenerateBatchError(f"contrastive loss needs >= 2 pairs, got {m} (no negatives exist)")
    if check_norm:
        for name, emb, idx in (("query", queries, pairs.query_indices), ("key", keys, pairs.key_indices)):
            norms = np.linalg.norm(emb.value[idx], axis=1)
            if np.abs(norms - 1.0).max() > 1e-4:
                raise NumericError(f"{name} rows are not unit-norm (max deviation {np.abs(norms - 1.0).max():.2e})")

    q = dc.take_rows(queries, pairs.query_indices)
    k = dc.take_rows(keys, pairs.key_indices)
    logits = dc.mul(dc.matmul(q, dc.transpose(k)), 1.0 / temperature)
    # row-max shift (constant under differentiation) keeps exp well-scaled
    shift = dc.stop_gradient(dc.reduce_max(logits, axis=1, keepdims=True))
    lse = dc.add(dc.log(dc.array_sum(dc.exp(dc.sub(logits, shift)), axis=1)), dc.reshape(shift, (m,)))
    positives = dc.array_sum(dc.mul(q, k), axis=1)  # row-wise dot of matched pairs
    per_pair = dc.sub(lse, dc.mul(positives, 1.0 / temperature))
    return dc.mean(per_pair) if reduction == "mean" else dc.array_sum(per_pair)


def intra_loss(
    f_alpha_emb: DiffArray,
    f_beta_emb: DiffArray,
    m1: MatchSet,
    temperature: float,
    reduction: str = "mean",
    check_norm: bool = True,
) -> DiffArray:
    """Contrastive loss between the two geometric views of one cloud;
    gradients flow to both views (point branch only)."""
    return info_nce(f_alpha_emb, f_beta_emb, m1, temperature, reduction=reduction, check_norm=check_norm)


def inter_loss(
    f_alpha_emb: DiffArray,
    f_gamma_emb: DiffArray,
    m2: MatchSet,
    temperature: float,
    reduction: str = "mean",
    check_norm: bool = True,
) -> DiffArray:
    """Contrastive loss between point embeddings and projected image features.

    The point-side queries are gradient-cropped, so this term trains only the
    image branch and image head and cannot disturb what the point branch
    learned from its own views.
    """
    queries = dc.stop_gradient(f_alpha_emb)
    return info_nce(queries, f_gamma_emb, m2, temperature, reduction=reduction, check_norm=check_norm)


def total_loss(l_intra, l_inter, weights: LossWeights) -> DiffArray:
    """Weighted combination lambda * L_intra + mu * L_inter."""
    return dc.add(dc.mul(dc.as_array(l_intra), weights.lambda_intra),
                  dc.mul(dc.as_array(l_inter), weights.mu_inter))


def si_loss(
    predicted_log_depth: DiffArray,
    true_depth: np.ndarray,
    valid_mask: np.ndarray,
    params: SiLossParams,
    strict_printed_form: bool = False,
) -> DiffArray:
    """Scale-invariant log-depth loss over valid pixels.

    Default is the variance-corrected form
        scale * sqrt(mean(g^2) - variance_weight * mean(g)^2),
    g = predicted_log_depth - log(true_depth). The strict flag switches to
    the additive printed variant scale * sqrt(mean(g^2) + (vw/T) * sum(g)^2),
    kept behind a flag because it is dimensionally inconsistent with the
    variance form most implementations use.
    """
    mask = np.asarray(valid_mask, dtype=bool).reshape(-1)
    depth = np.asarray(true_depth, dtype=np.float64).reshape(-1)
    if mask.shape != depth.shape:
        raise ConfigError(f"mask shape {mask.shape} != depth shape {depth.shape}")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ConfigError("si_loss needs at least one valid pixel")
    if (depth[idx] <= 0).any():
        raise NumericError("true depth must be positive on valid pixels")

    pred = dc.reshape(predicted_log_depth, (-1,))
    if pred.value.shape != depth.shape:
        raise ConfigError(f"prediction shape {pred.value.shape} != depth shape {depth.shape}")
    g = dc.sub(dc.take_rows(pred, idx), dc.constant(np.log(depth[idx])))
    mean_sq = dc.mean(dc.mul(g, g))
    if strict_printed_form:
        t = float(idx.size)
        total = dc.array_sum(g)
        inner = dc.add(mean_sq, dc.mul(dc.mul(total, total), params.variance_weight / t))
    else:
        mg = dc.mean(g)
        inner = dc.sub(mean_sq, dc.mul(dc.mul(mg, mg), params.variance_weight))
    # clamp roundoff: the variance form can dip a hair below zero when g is constant
    return dc.mul(dc.sqrt(dc.relu(inner)), params.scale)
