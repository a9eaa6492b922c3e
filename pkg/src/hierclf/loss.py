"""Hierarchy, cross-entropy and combinatorial losses with analytic gradients.

Gradients are taken with respect to the sigmoid outputs of the hierarchy
head and the pre-softmax leaf logits. Chaining through the sigmoid is the
network's job.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .statespace import StateSpace

VARIANTS = ("combinatorial", "hier_only", "leaf_ce_only", "per_node_binary_ce")
REDUCTIONS = ("mean", "sum")

_BCE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class LossValue:
    """Loss parts and gradients.

    For a single sample the gradients are vectors; for a batch they are
    ``(k, n)`` and ``(k, n_leaves)`` matrices already scaled by the
    reduction.
    """

    total: float
    hier_part: float
    ce_part: float
    grad_hier: np.ndarray
    grad_ce: np.ndarray


def _check_label(ss: StateSpace, g) -> int:
    g = int(g)
    if not 0 <= g < ss.n:
        raise ValueError(f"observed label {g} is not a node of the hierarchy")
    return g


def hier_loss(ss: StateSpace, x, g: int) -> tuple[float, np.ndarray]:
    """Negative log marginal of the observed label and its gradient."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ss.n,):
        raise ValueError(f"expected {ss.n} outputs, got shape {x.shape}")
    g = _check_label(ss, g)
    scores = ss.dense @ x
    log_z = logsumexp(scores)
    rows = ss.rows_with_label[g]
    log_zg = logsumexp(scores[rows])
    p = np.exp(scores - log_z)
    q = np.exp(scores[rows] - log_zg)
    grad = p @ ss.dense - q @ ss.dense[rows]
    return float(log_z - log_zg), grad


def ce_loss(leaf_logits, target: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy; ``target`` is a position in leaf order."""
    z = np.asarray(leaf_logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("leaf logits must be a nonempty vector")
    target = int(target)
    if not 0 <= target < z.size:
        raise ValueError(f"target {target} is not a leaf position (have {z.size} leaves)")
    log_p = z - logsumexp(z)
    grad = np.exp(log_p)
    grad[target] -= 1.0
    return float(-log_p[target]), grad


def combinatorial_loss(
    ss: StateSpace, x, leaf_logits, g: int, ce_weight: float = 1.0
) -> LossValue:
    """Hierarchy loss, plus cross-entropy when the observed label is a leaf."""
    g = _check_label(ss, g)
    leaf_logits = np.asarray(leaf_logits, dtype=np.float64)
    if leaf_logits.shape != (len(ss.leaves),):
        raise ValueError(
            f"expected {len(ss.leaves)} leaf logits, got shape {leaf_logits.shape}"
        )
    h, grad_h = hier_loss(ss, x, g)
    pos = ss.leaf_position.get(g)
    if pos is None:
        return LossValue(h, h, 0.0, grad_h, np.zeros_like(leaf_logits))
    c, grad_c = ce_loss(leaf_logits, pos)
    c *= ce_weight
    return LossValue(h + c, h, c, grad_h, ce_weight * grad_c)


def leaf_ce_only_loss(ss: StateSpace, x, leaf_logits, g: int) -> LossValue:
    """Baseline: cross-entropy on leaf-labeled samples, nothing otherwise."""
    g = _check_label(ss, g)
    leaf_logits = np.asarray(leaf_logits, dtype=np.float64)
    zero_h = np.zeros(ss.n)
    pos = ss.leaf_position.get(g)
    if pos is None:
        return LossValue(0.0, 0.0, 0.0, zero_h, np.zeros_like(leaf_logits))
    c, grad_c = ce_loss(leaf_logits, pos)
    return LossValue(c, 0.0, c, zero_h, grad_c)


def binary_targets(ss: StateSpace, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-node targets for an observation at ``g`` and the mask of known nodes.

    The path to ``g`` is positive, nodes exclusive with ``g`` are negative and
    descendants of ``g`` are unknown.
    """
    target = ss.dense[ss.row_of(g)].copy()
    below = ss.dense[1:, g].astype(bool)
    below[g] = False
    return target, ~below


def per_node_bce_loss(ss: StateSpace, x, leaf_logits, g: int) -> LossValue:
    """Baseline: independent binary cross-entropy on every known node."""
    g = _check_label(ss, g)
    x = np.asarray(x, dtype=np.float64)
    t, known = binary_targets(ss, g)
    xc = np.clip(x, _BCE_EPS, 1.0 - _BCE_EPS)
    terms = -(t * np.log(xc) + (1.0 - t) * np.log1p(-xc))
    value = float(np.sum(terms[known]))
    grad = np.where(known, (xc - t) / (xc * (1.0 - xc)), 0.0)
    return LossValue(value, value, 0.0, grad, np.zeros(len(ss.leaves)))


_SINGLE = {
    "combinatorial": combinatorial_loss,
    "hier_only": lambda ss, x, z, g, ce_weight=1.0: combinatorial_loss(ss, x, z, g, 0.0),
    "leaf_ce_only": lambda ss, x, z, g, ce_weight=1.0: leaf_ce_only_loss(ss, x, z, g),
    "per_node_binary_ce": lambda ss, x, z, g, ce_weight=1.0: per_node_bce_loss(ss, x, z, g),
}


def total_loss(
    ss: StateSpace,
    outputs,
    leaf_logits,
    observed,
    *,
    variant: str = "combinatorial",
    reduction: str = "mean",
    ce_weight: float = 1.0,
) -> LossValue:
    """Reduce per-sample losses over a batch, one sample at a time.

    This is the reference path; :func:`batch_loss` computes the same result
    with whole-batch matrix products.
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    leaf_logits = np.atleast_2d(np.asarray(leaf_logits, dtype=np.float64))
    observed = np.atleast_1d(np.asarray(observed))
    _check_batch(ss, outputs, leaf_logits, observed, variant, reduction)
    k = outputs.shape[0]
    scale = 1.0 / k if reduction == "mean" else 1.0
    fn = _SINGLE[variant]
    total = hier = ce = 0.0
    grad_h = np.empty_like(outputs)
    grad_c = np.empty_like(leaf_logits)
    for j in range(k):
        lv = fn(ss, outputs[j], leaf_logits[j], observed[j], ce_weight=ce_weight)
        total += lv.total
        hier += lv.hier_part
        ce += lv.ce_part
        grad_h[j] = lv.grad_hier * scale
        grad_c[j] = lv.grad_ce * scale
    return LossValue(total * scale, hier * scale, ce * scale, grad_h, grad_c)


def _check_batch(ss, outputs, leaf_logits, observed, variant, reduction):
    if variant not in VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}; choose from {VARIANTS}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"unknown reduction {reduction!r}; choose from {REDUCTIONS}")
    k = observed.shape[0]
    if k == 0:
        raise ValueError("empty batch")
    if outputs.shape != (k, ss.n):
        raise ValueError(f"outputs have shape {outputs.shape}, expected ({k}, {ss.n})")
    if leaf_logits.shape != (k, len(ss.leaves)):
        raise ValueError(
            f"leaf logits have shape {leaf_logits.shape}, expected ({k}, {len(ss.leaves)})"
        )
    if observed.min() < 0 or observed.max() >= ss.n:
        raise ValueError("observed labels out of range")


def batch_loss(
    ss: StateSpace,
    outputs,
    leaf_logits,
    observed,
    *,
    variant: str = "combinatorial",
    reduction: str = "mean",
    ce_weight: float = 1.0,
) -> LossValue:
    """Vectorized :func:`total_loss`. Samples are rows of ``outputs``."""
    outputs = np.asarray(outputs, dtype=np.float64)
    leaf_logits = np.asarray(leaf_logits, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.int64)
    _check_batch(ss, outputs, leaf_logits, observed, variant, reduction)
    k = observed.shape[0]
    scale = 1.0 / k if reduction == "mean" else 1.0
    s = ss.dense

    leaf_pos = np.array([ss.leaf_position.get(int(g), -1) for g in observed])
    is_leaf = leaf_pos >= 0
    hier = np.zeros(k)
    grad_h = np.zeros_like(outputs)
    ce = np.zeros(k)
    grad_c = np.zeros_like(leaf_logits)

    if variant in ("combinatorial", "hier_only"):
        scores = outputs @ s.T  # (k, n + 1)
        mask = s[:, observed].T  # rows containing the observed label
        log_z = logsumexp(scores, axis=1, keepdims=True)
        log_zg = logsumexp(scores, axis=1, b=mask, keepdims=True)
        p = np.exp(scores - log_z)
        q = np.exp(scores - log_zg) * mask
        hier = (log_z - log_zg)[:, 0]
        grad_h = (p - q) @ s
    elif variant == "per_node_binary_ce":
        t = s[observed + 1]
        below = s[1:, observed].T.astype(bool)
        below[np.arange(k), observed] = False
        known = ~below
        xc = np.clip(outputs, _BCE_EPS, 1.0 - _BCE_EPS)
        terms = -(t * np.log(xc) + (1.0 - t) * np.log1p(-xc))
        hier = np.where(known, terms, 0.0).sum(axis=1)
        grad_h = np.where(known, (xc - t) / (xc * (1.0 - xc)), 0.0)

    weight = {"combinatorial": ce_weight, "leaf_ce_only": 1.0}.get(variant, 0.0)
    if weight and is_leaf.any():
        z = leaf_logits[is_leaf]
        pos = leaf_pos[is_leaf]
        log_p = z - logsumexp(z, axis=1, keepdims=True)
        ce[is_leaf] = -weight * log_p[np.arange(len(pos)), pos]
        g = softmax(z, axis=1)
        g[np.arange(len(pos)), pos] -= 1.0
        grad_c[is_leaf] = weight * g

    total = hier + ce
    return LossValue(
        float(total.sum() * scale),
        float(hier.sum() * scale),
        float(ce.sum() * scale),
        grad_h * scale,
        grad_c * scale,
    )
