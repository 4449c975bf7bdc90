"""Perturbation-set construction around explained points.

Two generation schemes operate on the collapsed representation (standardized
numerics + modality codes):

* random -- white noise on numerics, independent modality flips on
  categoricals; cheap but blind to the data manifold;
* medoid -- convex steps toward nearby cluster medoids fitted on the
  validation split, so perturbations stay close to the observed data
  distribution.

Both are followed by a same-prediction filter: only perturbations the model
classifies like the original point are kept. Hyperparameter tuning walks a
grid from the strongest perturbation down until the mean retention reaches
the 95% target.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError
from .mlp import MlpModel, predict_batch

logger = logging.getLogger(__name__)

DEFAULT_CLUSTER_SIZE = 10
RETENTION_TARGET = 0.95
REGENERATE_BELOW = 0.5
_RESEED_OFFSET = 0x9E3779B9


@dataclass(frozen=True)
class RandomConfig:
    """White-noise scheme: N(0, sigma^2) on numerics, flips on categoricals."""

    sigma: float = 0.05
    flip_prob: float = 0.05
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class MedoidConfig:
    """Medoid scheme: Beta-weighted interpolation toward a nearby medoid."""

    alpha: float = 0.05
    alpha_cat: float = 0.05
    k_nearest: int = 5
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        # The Beta(alpha*100, (1-alpha)*100) draw needs both parameters > 0.
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not 0.0 <= self.alpha_cat <= 1.0:
            raise ValueError("alpha_cat must be in [0, 1]")
        if self.k_nearest < 1:
            raise ValueError("k_nearest must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def gen_random(
    x_collapsed: np.ndarray,
    numeric_mask: np.ndarray,
    modality_counts: np.ndarray,
    config: RandomConfig,
) -> np.ndarray:
    """n random perturbations of one collapsed point, deterministic per seed.

    Numerics receive i.i.d. Gaussian noise; each categorical flips with
    probability flip_prob to a uniformly chosen *different* modality.
    Single-modality categoricals never flip.
    """
    x = np.asarray(x_collapsed, dtype=np.float64)
    numeric_mask = np.asarray(numeric_mask, dtype=bool)
    rng = np.random.default_rng(config.seed)
    out = np.tile(x, (config.n, 1))
    num_idx = np.flatnonzero(numeric_mask)
    if num_idx.size:
        out[:, num_idx] += rng.normal(0.0, config.sigma, size=(config.n, num_idx.size))
    for j in np.flatnonzero(~numeric_mask):
        k = int(modality_counts[j])
        if k < 2:
            logger.info("feature %d has a single modality and never flips", j)
            continue
        flips = rng.random(config.n) < config.flip_prob
        # uniform over the k-1 other modalities, skipping the observed one
        draws = rng.integers(0, k - 1, size=config.n)
        replacement = draws + (draws >= int(x[j]))
        out[flips, j] = replacement[flips]
    return out


# ---------------------------------------------------------------------------
# k-medoids index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MedoidIndex:
    """Fitted k-medoids clustering of the validation split (Euclidean, encoded)."""

    row_ids: np.ndarray  # (k,) indices into the fitted dataset
    encoded: np.ndarray  # (k, d) medoid coordinates, encoded space
    collapsed: np.ndarray  # (k, m) medoid coordinates, collapsed space
    neighbour_order: np.ndarray  # (k, k-1) other medoids by increasing distance
    cluster_size: int  # the average-cluster-size target the k was derived from
    distance: str = "euclidean"

    @property
    def k(self) -> int:
        return len(self.row_ids)

    def assign(self, X_encoded: np.ndarray) -> np.ndarray:
        """Nearest-medoid id per row; ties resolve to the lower medoid index."""
        X = np.atleast_2d(np.asarray(X_encoded, dtype=np.float64))
        d2 = _sq_dist(X, self.encoded)
        return np.argmin(d2, axis=1)


def _sq_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = -2.0 * (A @ B.T)
    d2 += np.sum(A * A, axis=1)[:, None]
    d2 += np.sum(B * B, axis=1)[None, :]
    return np.maximum(d2, 0.0)


def fit_medoids(
    encoded: np.ndarray,
    collapsed: np.ndarray,
    cluster_size: int = DEFAULT_CLUSTER_SIZE,
    seed: int = 0,
    k: int | None = None,
    max_iter: int = 50,
) -> MedoidIndex:
    """k-medoids with distance-weighted seeding and capped alternation.

    k defaults to ceil(N / cluster_size). Each refinement pass reassigns
    every point to its nearest medoid and moves each medoid to the cluster
    member minimizing the summed intra-cluster distance. If two medoids
    collapse onto identical coordinates the fit is retried with a fresh
    seeded init before giving up.
    """
    X = np.asarray(encoded, dtype=np.float64)
    C = np.asarray(collapsed, dtype=np.float64)
    n = X.shape[0]
    if cluster_size < 1:
        raise ValueError("cluster_size must be >= 1")
    if n < cluster_size:
        raise ValueError(f"need at least cluster_size={cluster_size} points, got {n}")
    if k is None:
        k = math.ceil(n / cluster_size)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")

    d2 = _sq_dist(X, X)
    for attempt in range(3):
        rng = np.random.default_rng(seed + attempt * _RESEED_OFFSET)
        medoids = _weighted_init(d2, k, rng)
        medoids = _alternate(d2, medoids, max_iter)
        coords = X[medoids]
        if len(np.unique(coords, axis=0)) == k:
            break
        logger.warning(
            "medoid fit attempt %d produced duplicate medoids; retrying with "
            "jittered init", attempt
        )
    else:
        raise NumericalError(
            "k-medoids collapsed onto duplicate points after retries; the "
            "dataset likely contains too many identical rows"
        )

    order = np.argsort(_sq_dist(X[medoids], X[medoids]), axis=1, kind="stable")[:, 1:]
    return MedoidIndex(
        row_ids=medoids,
        encoded=X[medoids],
        collapsed=C[medoids],
        neighbour_order=order,
        cluster_size=cluster_size,
    )


def _weighted_init(d2: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = d2.shape[0]
    chosen = [int(rng.integers(n))]
    nearest = d2[chosen[0]].copy()
    for _ in range(k - 1):
        total = nearest.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen medoid
            candidates = np.setdiff1d(np.arange(n), np.asarray(chosen))
            chosen.append(int(candidates[0]))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(nearest), r, side="right"))
            idx = min(idx, n - 1)
            chosen.append(idx)
        nearest = np.minimum(nearest, d2[chosen[-1]])
    return np.asarray(chosen, dtype=int)


def _alternate(d2: np.ndarray, medoids: np.ndarray, max_iter: int) -> np.ndarray:
    n = d2.shape[0]
    medoids = np.array(sorted(set(int(m) for m in medoids)), dtype=int)
    for _ in range(max_iter):
        assign = np.argmin(d2[:, medoids], axis=1)
        new = medoids.copy()
        for c in range(len(medoids)):
            members = np.flatnonzero(assign == c)
            if members.size == 0:
                # reseed an empty cluster at the point farthest from any medoid
                dist_to_nearest = d2[:, medoids].min(axis=1)
                dist_to_nearest[medoids] = -1.0
                new[c] = int(np.argmax(dist_to_nearest))
                continue
            within = d2[np.ix_(members, members)].sum(axis=1)
            new[c] = int(members[np.argmin(within)])
        new = np.array(sorted(set(int(m) for m in new)), dtype=int)
        if len(new) == len(medoids) and np.array_equal(new, medoids):
            break
        if len(new) < len(medoids):
            # two clusters chose the same medoid; top up deterministically
            missing = len(medoids) - len(new)
            dist_to_nearest = d2[:, new].min(axis=1)
            dist_to_nearest[new] = -1.0
            extra = np.argsort(-dist_to_nearest, kind="stable")[:missing]
            new = np.array(sorted(set(new.tolist() + extra.tolist())), dtype=int)
        medoids = new
    return medoids


def gen_medoid(
    x_collapsed: np.ndarray,
    x_encoded: np.ndarray,
    index: MedoidIndex,
    numeric_mask: np.ndarray,
    config: MedoidConfig,
) -> np.ndarray:
    """n medoid-directed perturbations of one point, deterministic per seed.

    Per perturbation: draw one medoid uniformly from the k_nearest medoids
    neighbouring the point's cluster centre, blend the numeric part with a
    Beta(100*alpha, 100*(1-alpha)) coefficient, and adopt the medoid's
    modality per categorical feature with probability alpha_cat.
    """
    x = np.asarray(x_collapsed, dtype=np.float64)
    numeric_mask = np.asarray(numeric_mask, dtype=bool)
    rng = np.random.default_rng(config.seed)

    cluster = int(index.assign(np.asarray(x_encoded)[None, :])[0])
    available = index.neighbour_order.shape[1]
    k_near = config.k_nearest
    if k_near > available:
        logger.warning(
            "k_nearest=%d exceeds the %d available medoids; clamped", k_near, available
        )
        k_near = available
    if k_near == 0:
        raise NumericalError("medoid index has a single medoid; no neighbours to draw")
    pool = index.neighbour_order[cluster, :k_near]

    picks = pool[rng.integers(0, k_near, size=config.n)]
    targets = index.collapsed[picks]
    blend = rng.beta(100.0 * config.alpha, 100.0 * (1.0 - config.alpha), size=config.n)

    out = np.tile(x, (config.n, 1))
    num_idx = np.flatnonzero(numeric_mask)
    if num_idx.size:
        out[:, num_idx] = (1.0 - blend[:, None]) * x[num_idx] + blend[:, None] * targets[
            :, num_idx
        ]
    cat_idx = np.flatnonzero(~numeric_mask)
    if cat_idx.size:
        adopt = rng.random((config.n, cat_idx.size)) < config.alpha_cat
        block = out[:, cat_idx]
        block[adopt] = targets[:, cat_idx][adopt]
        out[:, cat_idx] = block
    return out


# ---------------------------------------------------------------------------
# filtering and assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Neighbourhood:
    origin_id: int
    origin_class: int
    points: np.ndarray  # (n, d) encoded perturbations, pre-filter
    kept: np.ndarray  # (n,) same-prediction mask
    generator: str  # "random" | "medoid"

    @property
    def retention(self) -> float:
        return float(self.kept.mean())

    @property
    def kept_points(self) -> np.ndarray:
        return self.points[self.kept]

    @property
    def n_kept(self) -> int:
        return int(self.kept.sum())


def filter_neighbourhood(
    model: MlpModel,
    x_encoded: np.ndarray,
    points_encoded: np.ndarray,
    origin_id: int = -1,
    generator: str = "",
) -> Neighbourhood:
    """Keep only perturbations whose predicted class matches the origin's."""
    origin_class = int(predict_batch(model, np.asarray(x_encoded)[None, :])[0])
    kept = predict_batch(model, points_encoded) == origin_class
    return Neighbourhood(
        origin_id=origin_id,
        origin_class=origin_class,
        points=np.asarray(points_encoded, dtype=np.float64),
        kept=kept,
        generator=generator,
    )


def generate_points(
    x_collapsed: np.ndarray,
    x_encoded: np.ndarray,
    scheme: str,
    config,
    numeric_mask: np.ndarray,
    modality_counts: np.ndarray,
    index: MedoidIndex | None = None,
) -> np.ndarray:
    if scheme == "random":
        return gen_random(x_collapsed, numeric_mask, modality_counts, config)
    if scheme == "medoid":
        if index is None:
            raise ValueError("medoid scheme requires a fitted MedoidIndex")
        return gen_medoid(x_collapsed, x_encoded, index, numeric_mask, config)
    raise ValueError(f"unknown neighbourhood scheme {scheme!r}")


def build_neighbourhood(
    model: MlpModel,
    codec,
    x_collapsed: np.ndarray,
    x_encoded: np.ndarray,
    scheme: str,
    config,
    index: MedoidIndex | None = None,
    origin_id: int = -1,
    regenerate_below: float = REGENERATE_BELOW,
) -> Neighbourhood:
    """Generate, filter, and (once) regenerate if the filter was too harsh.

    If fewer than `regenerate_below * n` perturbations survive, one more set
    is generated from an offset seed and the better of the two is kept; the
    estimator downstream averages over kept points only.
    """
    kwargs = dict(
        numeric_mask=codec.numeric_mask,
        modality_counts=codec.modality_counts,
        index=index,
    )
    pts = generate_points(x_collapsed, x_encoded, scheme, config, **kwargs)
    nbr = filter_neighbourhood(
        model, x_encoded, codec.encode(pts), origin_id=origin_id, generator=scheme
    )
    if nbr.n_kept < regenerate_below * config.n:
        retry_cfg = replace(config, seed=config.seed + _RESEED_OFFSET)
        pts2 = generate_points(x_collapsed, x_encoded, scheme, retry_cfg, **kwargs)
        nbr2 = filter_neighbourhood(
            model, x_encoded, codec.encode(pts2), origin_id=origin_id, generator=scheme
        )
        if nbr2.n_kept > nbr.n_kept:
            nbr = nbr2
    return nbr


# ---------------------------------------------------------------------------
# retention tuning
# ---------------------------------------------------------------------------


def tune_hyperparams(
    model: MlpModel,
    codec,
    sample_collapsed: np.ndarray,
    sample_encoded: np.ndarray,
    scheme: str,
    grid,
    index: MedoidIndex | None = None,
    seed: int = 0,
    target: float = RETENTION_TARGET,
):
    """Pick the strongest grid entry with mean retention >= target.

    `grid` must be ordered from weakest to strongest perturbation; candidates
    are evaluated from the strongest end so that the selected configuration
    perturbs as much as the retention target allows. Returns the chosen
    config plus the per-candidate retention log. If no candidate qualifies,
    the weakest entry is returned with a warning.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty tuning grid")
    sample_collapsed = np.atleast_2d(sample_collapsed)
    sample_encoded = np.atleast_2d(sample_encoded)

    log: list[tuple[object, float]] = []
    chosen = None
    for cand_pos in range(len(grid) - 1, -1, -1):
        cand = grid[cand_pos]
        retentions = []
        for i in range(sample_collapsed.shape[0]):
            cfg = replace(cand, seed=seed + 1000003 * cand_pos + i)
            pts = generate_points(
                sample_collapsed[i],
                sample_encoded[i],
                scheme,
                cfg,
                numeric_mask=codec.numeric_mask,
                modality_counts=codec.modality_counts,
                index=index,
            )
            nbr = filter_neighbourhood(model, sample_encoded[i], codec.encode(pts))
            retentions.append(nbr.retention)
        mean_retention = float(np.mean(retentions))
        log.append((cand, mean_retention))
        if chosen is None and mean_retention >= target:
            chosen = cand
            break
    log.reverse()
    if chosen is None:
        logger.warning(
            "no %s grid entry reached retention %.2f; falling back to the "
            "weakest candidate", scheme, target,
        )
        chosen = grid[0]
    return chosen, log
