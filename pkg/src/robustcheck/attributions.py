"""Feature attribution rules for the dense network engine.

Three backpropagation-style explainers are implemented from their defining
rules rather than wrapped from an autodiff framework, because the robustness
estimator leans on their exact algebraic properties:

* integrated gradients -- right-endpoint Riemann sum of input gradients along
  the straight path from a baseline, so the zero-path and linear-model closed
  forms hold exactly;
* deeplift (rescale rule) -- difference-from-reference multipliers chained
  through the layers; summation-to-delta is checked on every call;
* layer-wise relevance propagation -- epsilon and gamma backward rules with a
  sign-matched stabilizer in the denominator.

All three satisfy missingness exactly with the default zero baseline: an
encoded input entry of 0 always receives attribution 0. By default the target
score is the pre-softmax logit of the predicted class; `through_softmax`
switches to the probability head.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import NumericalError
from .mlp import (
    MlpModel,
    _activation_gradient,
    gradient_wrt_input,
    logits_batch,
    predict_batch,
    softmax,
    traced_batch,
)

logger = logging.getLogger(__name__)

METHODS = ("ig", "deeplift", "lrp")

DEFAULT_IG_STEPS = 50
DEFAULT_LRP_EPSILON = 1e-6
DEFAULT_LRP_GAMMA = 0.25
DEEPLIFT_DELTA_GUARD = 1e-9
SUM_TO_DELTA_RTOL = 1e-9

SPACE_ENCODED = "encoded"
SPACE_COLLAPSED = "collapsed"


@dataclass(frozen=True)
class AttributionVector:
    values: np.ndarray
    method: str
    target_class: int
    space: str = SPACE_ENCODED

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"{self.method}: non-finite attribution values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class AttributionConfig:
    """Shared settings for the three explainers."""

    steps: int = DEFAULT_IG_STEPS
    epsilon: float = DEFAULT_LRP_EPSILON
    gamma: float = DEFAULT_LRP_GAMMA
    rule: str = "gamma"  # LRP rule: "epsilon" or "gamma"
    through_softmax: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.rule not in ("epsilon", "gamma"):
            raise ValueError(f"unknown LRP rule {self.rule!r}")


def _resolve(model, X, baseline, targets):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ValueError(f"input width {X.shape[1]} != model input_dim {model.input_dim}")
    if baseline is None:
        baseline = np.zeros(model.input_dim)
    baseline = np.asarray(baseline, dtype=np.float64).reshape(-1)
    if baseline.shape != (model.input_dim,):
        raise ValueError("baseline must match the model input dimension")
    if targets is None:
        targets = predict_batch(model, X)
    targets = np.broadcast_to(np.asarray(targets, dtype=int), (X.shape[0],)).copy()
    return X, baseline, targets


def _target_scores(model, X, targets, through_softmax):
    rows = np.arange(X.shape[0])
    if through_softmax:
        return softmax(logits_batch(model, X))[rows, targets]
    return logits_batch(model, X)[rows, targets]


# ---------------------------------------------------------------------------
# integrated gradients
# ---------------------------------------------------------------------------


def integrated_gradients_batch(
    model: MlpModel,
    X: np.ndarray,
    baseline: np.ndarray | None = None,
    steps: int = DEFAULT_IG_STEPS,
    targets=None,
    through_softmax: bool = False,
) -> np.ndarray:
    """Right-endpoint Riemann approximation of the path integral of gradients.

    attribution_j = (x_j - x'_j)/steps * sum_{k=1..steps} grad_j at
    x' + (x - x')*k/steps, with the target class fixed per row.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X, baseline, targets = _resolve(model, X, baseline, targets)
    diff = X - baseline
    total = np.zeros_like(X)
    # Chunk the (batch x steps) path points to bound peak memory.
    chunk = max(1, 16384 // max(1, X.shape[0]))
    for start in range(1, steps + 1, chunk):
        ks = np.arange(start, min(start + chunk, steps + 1))
        pts = baseline + diff[:, None, :] * (ks / steps)[None, :, None]
        flat = pts.reshape(-1, X.shape[1])
        grads = gradient_wrt_input(
            model, flat, np.repeat(targets, len(ks)), through_softmax
        )
        total += grads.reshape(X.shape[0], len(ks), X.shape[1]).sum(axis=1)
    return diff * total / steps


def integrated_gradients(
    model: MlpModel,
    x: np.ndarray,
    baseline: np.ndarray | None = None,
    steps: int = DEFAULT_IG_STEPS,
    target: int | None = None,
    through_softmax: bool = False,
) -> AttributionVector:
    values = integrated_gradients_batch(
        model, np.asarray(x)[None, :], baseline, steps,
        None if target is None else [target], through_softmax,
    )[0]
    if target is None:
        target = int(predict_batch(model, np.atleast_2d(x))[0])
    return AttributionVector(values=values, method="ig", target_class=target)


# ---------------------------------------------------------------------------
# deeplift (rescale)
# ---------------------------------------------------------------------------


def deeplift_batch(
    model: MlpModel,
    X: np.ndarray,
    baseline: np.ndarray | None = None,
    targets=None,
    through_softmax: bool = False,
    delta_guard: float = DEEPLIFT_DELTA_GUARD,
    check_delta: bool = True,
) -> np.ndarray:
    """Rescale-rule contributions relative to a reference input.

    Nonlinearity multipliers are delta-activation over delta-pre-activation
    when the latter exceeds `delta_guard` in magnitude, else the analytic
    activation gradient; linear layers chain multipliers through their
    weights. In logit mode the contributions sum to the target score
    difference and this is asserted on every call (`check_delta`).

    With `through_softmax` the head is linearized at the input (softmax is not
    an elementwise nonlinearity, so the rescale rule does not apply to it);
    summation-to-delta then only holds to first order and is not asserted.
    """
    X, baseline, targets = _resolve(model, X, baseline, targets)
    rows = np.arange(X.shape[0])
    zs, acts, probs = traced_batch(model, X)
    ref_zs, ref_acts, ref_probs = traced_batch(model, baseline[None, :])

    if through_softmax:
        pt = probs[rows, targets][:, None]
        m = pt * (-probs)
        m[rows, targets] += pt[:, 0]
    else:
        m = np.zeros((X.shape[0], model.output_dim))
        m[rows, targets] = 1.0

    for layer, z, ref_z in zip(reversed(model.layers), reversed(zs), reversed(ref_zs)):
        dz = z - ref_z
        if layer.activation == "identity":
            ratio = np.ones_like(dz)
        else:
            da = _apply_act(layer.activation, z) - _apply_act(layer.activation, ref_z)
            grad = _activation_gradient(layer.activation, z)
            small = np.abs(dz) <= delta_guard
            ratio = np.where(small, grad, da / np.where(small, 1.0, dz))
        m = (m * ratio) @ layer.weights

    contributions = m * (X - baseline)
    if check_delta and not through_softmax:
        score_x = _target_scores(model, X, targets, False)
        score_ref = logits_batch(model, baseline[None, :])[0][targets]
        delta = score_x - score_ref
        total = contributions.sum(axis=1)
        # relative to the score scale, so a near-cancelling delta does not
        # turn float noise into a spurious failure
        scale = np.maximum(np.abs(delta), np.abs(score_x) + np.abs(score_ref))
        tol = SUM_TO_DELTA_RTOL * np.maximum(scale, 1.0)
        bad = np.abs(total - delta) > tol
        if np.any(bad):
            worst = int(np.argmax(np.abs(total - delta)))
            raise NumericalError(
                "deeplift summation-to-delta violated: "
                f"sum={total[worst]!r} vs delta={delta[worst]!r}"
            )
    return contributions


def _apply_act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def deeplift_rescale(
    model: MlpModel,
    x: np.ndarray,
    baseline: np.ndarray | None = None,
    target: int | None = None,
    through_softmax: bool = False,
) -> AttributionVector:
    values = deeplift_batch(
        model, np.asarray(x)[None, :], baseline,
        None if target is None else [target], through_softmax,
    )[0]
    if target is None:
        target = int(predict_batch(model, np.atleast_2d(x))[0])
    return AttributionVector(values=values, method="deeplift", target_class=target)


# ---------------------------------------------------------------------------
# layer-wise relevance propagation
# ---------------------------------------------------------------------------


def lrp_batch(
    model: MlpModel,
    X: np.ndarray,
    rule: str = "epsilon",
    epsilon: float = DEFAULT_LRP_EPSILON,
    gamma: float = DEFAULT_LRP_GAMMA,
    targets=None,
    through_softmax: bool = False,
    collect_layer_sums: bool = False,
):
    """Backward relevance propagation with the epsilon or gamma rule.

    Relevance is seeded at the target output neuron with its score and pushed
    down through every layer:

        R_j = sum_k  a_j * w_eff_jk / (z_k + eps * sign(z_k)) * R_k

    where w_eff adds gamma times the positive part of the weights (gamma rule;
    gamma=0 recovers the epsilon rule bit for bit) and z_k includes the bias,
    so the bias participates in the denominator only. The stabilizer follows
    the sign of z_k; denominators that still vanish are zeroed out and flagged
    with a vanishing-relevance warning.
    """
    if rule not in ("epsilon", "gamma"):
        raise ValueError(f"unknown LRP rule {rule!r}")
    g = gamma if rule == "gamma" else 0.0
    X, _, targets = _resolve(model, X, None, targets)
    rows = np.arange(X.shape[0])
    zs, acts, probs = traced_batch(model, X)

    R = np.zeros((X.shape[0], model.output_dim))
    R[rows, targets] = _target_scores(model, X, targets, through_softmax)
    layer_sums = [R.sum(axis=1)]

    inputs = [X] + list(acts[:-1])
    for layer, a_in in zip(reversed(model.layers), reversed(inputs)):
        w_eff = layer.weights + g * np.maximum(layer.weights, 0.0)
        b_eff = layer.bias + g * np.maximum(layer.bias, 0.0)
        z_eff = a_in @ w_eff.T + b_eff
        denom = z_eff + epsilon * np.where(z_eff >= 0.0, 1.0, -1.0)
        vanishing = np.abs(denom) < np.finfo(np.float64).tiny
        if np.any(vanishing):
            warnings.warn(
                "lrp: vanishing relevance denominator; affected paths zeroed",
                RuntimeWarning,
                stacklevel=2,
            )
            denom = np.where(vanishing, 1.0, denom)
            s = np.where(vanishing, 0.0, R / denom)
        else:
            s = R / denom
        R = a_in * (s @ w_eff)
        layer_sums.append(R.sum(axis=1))

    if collect_layer_sums:
        return R, layer_sums
    return R


def lrp(
    model: MlpModel,
    x: np.ndarray,
    rule: str = "epsilon",
    epsilon: float = DEFAULT_LRP_EPSILON,
    gamma: float = DEFAULT_LRP_GAMMA,
    target: int | None = None,
    through_softmax: bool = False,
) -> AttributionVector:
    values = lrp_batch(
        model, np.asarray(x)[None, :], rule, epsilon, gamma,
        None if target is None else [target], through_softmax,
    )[0]
    if target is None:
        target = int(predict_batch(model, np.atleast_2d(x))[0])
    return AttributionVector(values=values, method="lrp", target_class=target)


# ---------------------------------------------------------------------------
# reverse encoding and the combined entry point
# ---------------------------------------------------------------------------


def reverse_encode_batch(
    values: np.ndarray,
    encoding_ranges: Iterable[tuple[int, int]],
    X_encoded: np.ndarray,
) -> np.ndarray:
    """Collapse encoded-space attributions to one value per original feature.

    Numeric features copy through; each categorical feature takes the
    attribution of its observed (hot) modality column, identified from the
    encoded input itself.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    X_encoded = np.atleast_2d(np.asarray(X_encoded, dtype=np.float64))
    ranges = list(encoding_ranges)
    if values.shape != X_encoded.shape:
        raise ValueError("attributions and encoded inputs must align")
    if ranges[-1][1] != values.shape[1]:
        raise ValueError(
            f"encoding map covers {ranges[-1][1]} columns, attributions have "
            f"{values.shape[1]}"
        )
    rows = np.arange(values.shape[0])
    out = np.empty((values.shape[0], len(ranges)), dtype=np.float64)
    for j, (start, stop) in enumerate(ranges):
        if stop - start == 1:
            out[:, j] = values[:, start]
        else:
            hot = np.argmax(X_encoded[:, start:stop], axis=1)
            out[:, j] = values[rows, start + hot]
    return out


def reverse_encode(attr: AttributionVector, encoding_ranges, x_encoded) -> AttributionVector:
    if attr.space != SPACE_ENCODED:
        raise ValueError("attribution is already collapsed")
    collapsed = reverse_encode_batch(
        attr.values[None, :], encoding_ranges, np.asarray(x_encoded)[None, :]
    )[0]
    return AttributionVector(
        values=collapsed,
        method=attr.method,
        target_class=attr.target_class,
        space=SPACE_COLLAPSED,
    )


def explain_batch(
    model: MlpModel,
    X: np.ndarray,
    encoding_ranges,
    config: AttributionConfig = AttributionConfig(),
    baseline: np.ndarray | None = None,
    targets=None,
) -> dict[str, np.ndarray]:
    """All three attribution methods, collapsed, for a batch of inputs.

    Targets default to each row's predicted class. Returns a dict mapping
    method name to a (B, m) matrix in collapsed feature space.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if targets is None:
        targets = predict_batch(model, X)
    encoded = {
        "ig": integrated_gradients_batch(
            model, X, baseline, config.steps, targets, config.through_softmax
        ),
        "deeplift": deeplift_batch(
            model, X, baseline, targets, config.through_softmax
        ),
        "lrp": lrp_batch(
            model, X, config.rule, config.epsilon, config.gamma,
            targets, config.through_softmax,
        ),
    }
    return {
        method: reverse_encode_batch(vals, encoding_ranges, X)
        for method, vals in encoded.items()
    }


def explain_all(
    model: MlpModel,
    x: np.ndarray,
    encoding_ranges,
    config: AttributionConfig = AttributionConfig(),
    baseline: np.ndarray | None = None,
) -> dict[str, AttributionVector]:
    """Collapsed attributions of a single input under the three methods."""
    x = np.asarray(x, dtype=np.float64)
    target = int(predict_batch(model, x[None, :])[0])
    mats = explain_batch(model, x[None, :], encoding_ranges, config, baseline, [target])
    return {
        method: AttributionVector(
            values=mat[0], method=method, target_class=target, space=SPACE_COLLAPSED
        )
        for method, mat in mats.items()
    }
