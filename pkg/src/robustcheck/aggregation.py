"""Merging several attribution vectors into one explanation.

Two aggregations are provided. The rank ensemble averages each method's
per-feature rank (1 = largest absolute attribution) with weights that grow as
a coefficient shrinks, then inflates features whose sign the methods dispute;
small ensemble values therefore mark important features and the final ranking
sorts ascending. The norm-1 mean simply averages unit-normalized attribution
vectors, which can zero out a feature the individual methods all consider
relevant -- the ensemble exists to avoid exactly that.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_SIGN_PENALTY = 0.15
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class EnsembleConfig:
    penalty: float = DEFAULT_SIGN_PENALTY  # sign-disagreement inflation factor
    weight_floor: float = WEIGHT_FLOOR

    def __post_init__(self):
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if self.weight_floor <= 0:
            raise ValueError("weight_floor must be > 0")


@dataclass(frozen=True)
class EnsembleResult:
    values: np.ndarray  # a_ens, smaller = more important
    ranks: np.ndarray  # permutation of 1..m, 1 = most important
    sign_disagreement: np.ndarray  # methods in the minority sign group per feature


def rank_abs(values: np.ndarray) -> np.ndarray:
    """1-based rank positions by decreasing |value|; ties keep feature order."""
    return rank_abs_batch(np.atleast_2d(values))[0]


def rank_abs_batch(values: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    order = np.argsort(-np.abs(values), axis=1, kind="stable")
    ranks = np.empty_like(values)
    np.put_along_axis(
        ranks, order, np.broadcast_to(np.arange(1.0, values.shape[1] + 1), values.shape), axis=1
    )
    return ranks


def _rank_ascending_batch(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, axis=1, kind="stable")
    ranks = np.empty_like(values)
    np.put_along_axis(
        ranks, order, np.broadcast_to(np.arange(1.0, values.shape[1] + 1), values.shape), axis=1
    )
    return ranks


def ensemble_weights(values: np.ndarray, weight_floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Per-feature weights std(a) / sqrt(|mean(a)| * |a_j|), floored inside the root.

    The floor keeps the weight finite when the vector mean or a coefficient is
    exactly zero; a constant vector has zero standard deviation and therefore
    weight zero everywhere.
    """
    return ensemble_weights_batch(np.atleast_2d(values), weight_floor)[0]


def ensemble_weights_batch(values: np.ndarray, weight_floor: float = WEIGHT_FLOOR) -> np.ndarray:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    std = values.std(axis=1, keepdims=True)
    mean_mag = np.maximum(np.abs(values.mean(axis=1, keepdims=True)), weight_floor)
    coef_mag = np.maximum(np.abs(values), weight_floor)
    return std / np.sqrt(mean_mag * coef_mag)


def sign_disagreement_batch(stack: np.ndarray) -> np.ndarray:
    """Count of methods in the minority sign group per feature.

    `stack` has shape (L, B, m). Signs form three groups (negative, zero,
    positive); unanimous features score 0, otherwise the size of the smallest
    non-empty group.
    """
    signs = np.sign(stack)
    neg = np.sum(signs < 0, axis=0)
    zero = np.sum(signs == 0, axis=0)
    pos = np.sum(signs > 0, axis=0)
    counts = np.stack([neg, zero, pos])
    total = stack.shape[0]
    unanimous = np.max(counts, axis=0) == total
    smallest = np.min(np.where(counts > 0, counts, total + 1), axis=0)
    return np.where(unanimous, 0, smallest).astype(np.float64)


def ensemble_aggregate_batch(
    stack: np.ndarray, config: EnsembleConfig = EnsembleConfig()
) -> EnsembleResult:
    """Rank ensemble over a stack of attribution matrices, shape (L, B, m)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 2:
        raise ValueError("need a (L, B, m) stack with at least two methods")
    ranks = np.stack([rank_abs_batch(stack[l]) for l in range(stack.shape[0])])
    weights = np.stack(
        [ensemble_weights_batch(stack[l], config.weight_floor) for l in range(stack.shape[0])]
    )
    n_bar = sign_disagreement_batch(stack)
    weight_sum = weights.sum(axis=0)
    degenerate = weight_sum == 0.0
    if np.any(degenerate):
        logger.warning(
            "ensemble: %d feature cells had zero total weight; assigned worst rank",
            int(degenerate.sum()),
        )
    safe_sum = np.where(degenerate, 1.0, weight_sum)
    values = (ranks * weights).sum(axis=0) / safe_sum * (1.0 + config.penalty * n_bar)
    values = np.where(degenerate, np.inf, values)
    return EnsembleResult(
        values=values,
        ranks=_rank_ascending_batch(values),
        sign_disagreement=n_bar,
    )


def ensemble_aggregate(
    attrs, config: EnsembleConfig = EnsembleConfig()
) -> EnsembleResult:
    """Rank ensemble of L >= 2 attribution vectors for a single point."""
    stack = np.stack([np.asarray(a, dtype=np.float64) for a in attrs])[:, None, :]
    result = ensemble_aggregate_batch(stack, config)
    return EnsembleResult(
        values=result.values[0],
        ranks=result.ranks[0],
        sign_disagreement=result.sign_disagreement[0],
    )


def mean_aggregate(attrs) -> np.ndarray:
    """Elementwise mean of unit-normalized vectors, rescaled to unit norm."""
    return mean_aggregate_batch(
        np.stack([np.asarray(a, dtype=np.float64) for a in attrs])[:, None, :]
    )[0]


def mean_aggregate_batch(stack: np.ndarray) -> np.ndarray:
    """Norm-1 mean over a stack (L, B, m); zero-norm inputs are excluded."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 2:
        raise ValueError("need a (L, B, m) stack with at least two methods")
    norms = np.linalg.norm(stack, axis=2, keepdims=True)
    usable = norms[:, :, 0] > 0.0
    if not np.all(usable):
        logger.warning(
            "mean aggregation: %d zero-norm attribution vectors excluded",
            int((~usable).sum()),
        )
    unit = np.where(norms > 0.0, stack / np.where(norms > 0.0, norms, 1.0), 0.0)
    counts = np.maximum(usable.sum(axis=0), 1)[:, None]
    mean = unit.sum(axis=0) / counts
    out_norm = np.linalg.norm(mean, axis=1, keepdims=True)
    degenerate = out_norm[:, 0] == 0.0
    if np.any(degenerate):
        logger.warning(
            "mean aggregation: %d aggregated vectors had zero norm", int(degenerate.sum())
        )
    return np.where(out_norm > 0.0, mean / np.where(out_norm > 0.0, out_norm, 1.0), 0.0)
