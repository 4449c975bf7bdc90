"""Robustness estimation and trust classification.

The robustness of an explanation at a point is the mean Spearman rank
correlation between the explanation of the point and the explanations of its
prediction-preserving perturbations, clamped to [0, 1]. A k-nearest-neighbour
regressor fitted on validation robustness scores predicts how robust the
surrounding feature-space region is, and the two scores together classify a
point as robust / uncertain / non-robust. Validation against model agreement
uses a ROC/AUC analysis over the robustness scores.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

TRUST_ROBUST = "robust"
TRUST_UNCERTAIN = "uncertain"
TRUST_NON_ROBUST = "non_robust"

DEFAULT_THRESHOLD = 0.80
DEFAULT_THRESHOLD_SWEEP = tuple(round(0.05 * i, 2) for i in range(1, 20))


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks of `values`, ascending, with ties given their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sorted_v = v[order]
    ranks = np.empty(len(v), dtype=np.float64)
    run_starts = np.concatenate(([0], np.flatnonzero(sorted_v[1:] != sorted_v[:-1]) + 1))
    run_ends = np.concatenate((run_starts[1:], [len(v)]))
    for s, e in zip(run_starts, run_ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def spearman_rho(u, v, with_flag: bool = False):
    """Spearman rank correlation with average-rank tie handling.

    Degenerate inputs (a constant vector) have no defined rank correlation;
    by convention the result is 1.0 when both vectors are constant (their
    rank transforms coincide elementwise) and 0.0 when only one is. Pass
    `with_flag=True` to also receive a degeneracy indicator.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    if len(u) < 2:
        raise ValueError("need at least two entries")
    u_const = bool(np.all(u == u[0]))
    v_const = bool(np.all(v == v[0]))
    if u_const or v_const:
        rho = 1.0 if (u_const and v_const) else 0.0
        return (rho, True) if with_flag else rho
    ru = average_ranks(u)
    rv = average_ranks(v)
    ru -= ru.mean()
    rv -= rv.mean()
    rho = float(np.dot(ru, rv) / np.sqrt(np.dot(ru, ru) * np.dot(rv, rv)))
    rho = min(1.0, max(-1.0, rho))
    return (rho, False) if with_flag else rho


@dataclass(frozen=True)
class RobustnessScore:
    """Estimated robustness of one explained point."""

    point_id: int
    explainer: str
    raw_mean: float  # mean Spearman rho, in [-1, 1]
    r_hat: float  # clamped to [0, 1]
    n_used: int  # neighbourhood size the mean was taken over
    n_degenerate: int = 0  # rho pairs that hit the constant-vector convention

    @property
    def standard_error(self) -> float:
        return 1.0 / np.sqrt(self.n_used) if self.n_used else float("nan")


def estimate_robustness(
    explanation: np.ndarray,
    neighbour_explanations: np.ndarray,
    point_id: int = -1,
    explainer: str = "",
) -> RobustnessScore:
    """Mean Spearman rho between a point's explanation and its neighbours'.

    `explanation` has shape (m,); `neighbour_explanations` has shape (K, m)
    with one row per kept perturbation. The raw mean lies in [-1, 1] and is
    clamped to [0, 1] for the reported score.
    """
    explanation = np.asarray(explanation, dtype=np.float64)
    neigh = np.asarray(neighbour_explanations, dtype=np.float64)
    if neigh.ndim != 2 or neigh.shape[1] != explanation.shape[0]:
        raise ValueError("neighbour explanations must be (K, m)")
    if neigh.shape[0] == 0:
        raise NumericalError(
            "empty neighbourhood: no perturbation survived the same-prediction "
            "filter; retune the perturbation magnitude"
        )
    rhos = np.empty(neigh.shape[0])
    degenerate = 0
    for i in range(neigh.shape[0]):
        rho, flag = spearman_rho(explanation, neigh[i], with_flag=True)
        rhos[i] = rho
        degenerate += int(flag)
    raw = float(np.mean(rhos))
    return RobustnessScore(
        point_id=point_id,
        explainer=explainer,
        raw_mean=raw,
        r_hat=max(raw, 0.0),
        n_used=neigh.shape[0],
        n_degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# knn regressor over robustness scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnnRegressor:
    """Exact-search k-nearest-neighbour regressor (Euclidean)."""

    points: np.ndarray  # (N, d), encoded space
    scores: np.ndarray  # (N,)
    k: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        sc = np.asarray(self.scores, dtype=np.float64)
        if pts.ndim != 2 or sc.shape != (pts.shape[0],):
            raise ValueError("points must be (N, d) with one score per row")
        if not 1 <= self.k <= pts.shape[0]:
            raise ValueError(f"k={self.k} must be in [1, {pts.shape[0]}]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "scores", sc)


def fit_knn(points: np.ndarray, scores: np.ndarray, k: int) -> KnnRegressor:
    return KnnRegressor(points=points, scores=scores, k=k)


def predict_knn(model: KnnRegressor, x: np.ndarray) -> float:
    return float(predict_knn_batch(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def predict_knn_batch(model: KnnRegressor, X: np.ndarray) -> np.ndarray:
    """Unweighted mean of the k nearest training scores per query row.

    Distance ties at the k-th neighbour resolve to the lower training index
    (stable argsort), keeping predictions deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    d2 = _sq_distances(X, model.points)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, : model.k]
    return model.scores[nearest].mean(axis=1)


def _sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = -2.0 * (A @ B.T)
    d2 += np.sum(A * A, axis=1)[:, None]
    d2 += np.sum(B * B, axis=1)[None, :]
    return np.maximum(d2, 0.0)


def loo_predictions(points: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Leave-one-out knn predictions over a training set."""
    points = np.asarray(points, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} must be in [1, {n - 1}] for leave-one-out")
    d2 = _sq_distances(points, points)
    np.fill_diagonal(d2, np.inf)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return scores[nearest].mean(axis=1)


def select_k(
    score_sets: Sequence[tuple[np.ndarray, np.ndarray]],
    candidates: Sequence[int],
) -> int:
    """Pick the neighbour count minimizing summed leave-one-out squared error.

    `score_sets` holds one (points, scores) pair per model; the error is
    summed across all of them so a single k serves every net. Ties resolve
    to the smallest candidate.
    """
    if not candidates:
        raise ValueError("no candidate k values given")
    best_k, best_err = None, np.inf
    for k in sorted(candidates):
        err = 0.0
        for points, scores in score_sets:
            pred = loo_predictions(points, scores, k)
            err += float(np.sum((pred - np.asarray(scores)) ** 2))
        if err < best_err - 1e-15:
            best_k, best_err = k, err
    return int(best_k)


# ---------------------------------------------------------------------------
# trust classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrustLabel:
    label: str
    r_hat: float
    r_knn: float
    threshold: float


def classify_trust(r_hat: float, r_knn: float, threshold: float) -> TrustLabel:
    """Three-way trust rule combining own and neighbourhood-predicted robustness.

    robust:     r_hat >= threshold and r_knn >= threshold
    uncertain:  r_hat >= threshold and r_knn <  threshold
    non_robust: r_hat <  threshold
    """
    if r_hat >= threshold:
        label = TRUST_ROBUST if r_knn >= threshold else TRUST_UNCERTAIN
    else:
        label = TRUST_NON_ROBUST
    return TrustLabel(label=label, r_hat=r_hat, r_knn=r_knn, threshold=threshold)


def robust_fraction_curve(
    r_hat: np.ndarray,
    r_knn: np.ndarray,
    thresholds: Sequence[float] = DEFAULT_THRESHOLD_SWEEP,
) -> np.ndarray:
    r_hat = np.asarray(r_hat, dtype=np.float64)
    r_knn = np.asarray(r_knn, dtype=np.float64)
    return np.array(
        [np.mean((r_hat >= t) & (r_knn >= t)) for t in thresholds], dtype=np.float64
    )


def select_threshold(
    r_hat: np.ndarray,
    r_knn: np.ndarray,
    thresholds: Sequence[float] = DEFAULT_THRESHOLD_SWEEP,
    fallback: float = DEFAULT_THRESHOLD,
) -> float:
    """Threshold at the first inflection of the robust-fraction curve.

    Sweeps the candidate thresholds, computes the fraction of points labelled
    robust at each, and returns the first threshold where the discrete second
    difference of that curve changes sign. Curves with no sign change (for
    example an exactly linear decline) fall back to the default 0.80.
    """
    thresholds = list(thresholds)
    if len(thresholds) < 4:
        return fallback
    curve = robust_fraction_curve(r_hat, r_knn, thresholds)
    second = curve[2:] - 2.0 * curve[1:-1] + curve[:-2]  # at thresholds[1:-1]
    signs = np.sign(np.where(np.abs(second) < 1e-12, 0.0, second))
    return _first_inflection(signs, thresholds, fallback)


def _first_inflection(signs, thresholds, fallback: float) -> float:
    # signs[i] is the curvature sign at thresholds[i + 1]. An inflection is
    # the first interior threshold whose curvature no longer matches the
    # established sign and that is followed by the opposite sign; a run of
    # exact zeros between opposite signs counts from its first zero.
    established = 0.0
    zero_run_start = None
    for i, s in enumerate(signs):
        if s == 0.0:
            if established != 0.0 and zero_run_start is None:
                zero_run_start = i
            continue
        if established == 0.0:
            established = s
        elif s != established:
            at = zero_run_start if zero_run_start is not None else i
            return float(thresholds[at + 1])
        zero_run_start = None
    return fallback


# ---------------------------------------------------------------------------
# ROC/AUC validation against model agreement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    """ROC of "scored robust" against the model-agreement flag."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    defined: bool
    n_agree: int
    n_disagree: int


def validate_roc(
    scores: np.ndarray,
    agree: np.ndarray,
    thresholds: Sequence[float] | None = None,
) -> RocCurve:
    """ROC curve treating agreement points as positives.

    At each threshold t: TPR = P(score >= t | agree), FPR = P(score >= t |
    disagree). With the default threshold set (all distinct scores) the
    trapezoid AUC equals the pairwise concordance count exactly. When every
    point agrees (or none does) the curve is undefined and flagged as such.
    """
    scores = np.asarray(scores, dtype=np.float64)
    agree = np.asarray(agree, dtype=bool)
    if scores.shape != agree.shape or scores.ndim != 1:
        raise ValueError("scores and agreement flags must be 1-d and aligned")
    n_agree = int(agree.sum())
    n_disagree = int(len(agree) - n_agree)
    if n_agree == 0 or n_disagree == 0:
        return RocCurve(
            thresholds=np.array([]),
            fpr=np.array([]),
            tpr=np.array([]),
            auc=float("nan"),
            defined=False,
            n_agree=n_agree,
            n_disagree=n_disagree,
        )
    if thresholds is None:
        levels = np.unique(scores)[::-1]
    else:
        levels = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]
    # Sentinels anchor the endpoints (0,0) and (1,1).
    levels = np.concatenate(([np.inf], levels, [-np.inf]))
    tpr = np.array([np.mean(scores[agree] >= t) for t in levels])
    fpr = np.array([np.mean(scores[~agree] >= t) for t in levels])
    auc = _trapezoid(fpr, tpr)
    return RocCurve(
        thresholds=levels,
        fpr=fpr,
        tpr=tpr,
        auc=auc,
        defined=True,
        n_agree=n_agree,
        n_disagree=n_disagree,
    )


def _trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * (x[1:] - x[:-1])))
