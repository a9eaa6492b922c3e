"""Exact marginals over the tree state space.

The unnormalized score of a legal assignment ``y`` is ``exp(y . x)`` where
``x`` holds the sigmoid outputs of the hierarchy head. Stacking the legal
assignments as the rows of ``S`` turns the partition function and all
marginals into a pair of matrix products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .statespace import StateSpace


def accumulate_marginals(ss: StateSpace, probs: np.ndarray) -> np.ndarray:
    """Sum row probabilities into label marginals, ``(n + 1, k) -> (n, k)``.

    Equivalent to ``S.T @ probs`` but accumulated bottom-up so that every
    parent is a floating-point sum that includes each child's final value;
    this keeps ``child <= parent`` exact rather than approximate.
    """
    marg = np.array(probs[1:], dtype=np.float64)
    for level in range(int(ss.depth.max()), 0, -1):
        nodes = np.flatnonzero(ss.depth == level)
        np.add.at(marg, ss.parent_index[nodes], marg[nodes])
    return marg


@dataclass(frozen=True, eq=False)
class MarginalVector:
    values: np.ndarray
    log_partition: float
    row_probs: np.ndarray


def _as_outputs(ss: StateSpace, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != ss.n:
        raise ValueError(f"expected {ss.n} outputs, got shape {x.shape}")
    return x


def row_log_scores(ss: StateSpace, x) -> np.ndarray:
    """Exponent ``S @ x`` of every legal assignment."""
    return ss.dense @ _as_outputs(ss, x)


def log_partition(scores) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty score vector")
    return float(logsumexp(scores))


def marginals(ss: StateSpace, x) -> MarginalVector:
    scores = row_log_scores(ss, x)
    log_z = log_partition(scores)
    probs = np.exp(scores - log_z)
    values = accumulate_marginals(ss, probs[:, None])[:, 0]
    return MarginalVector(values, log_z, probs)


def batch_row_probs(ss: StateSpace, xs) -> tuple[np.ndarray, np.ndarray]:
    """Row probabilities for a batch.

    Parameters
    ----------
    xs : ndarray of shape (n, k)
        One column of sigmoid outputs per sample.

    Returns
    -------
    probs : ndarray of shape (n + 1, k)
    log_z : ndarray of shape (k,)
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] != ss.n:
        raise ValueError(f"expected an ({ss.n}, k) matrix, got shape {xs.shape}")
    if xs.shape[1] < 1:
        raise ValueError("batch must contain at least one column")
    scores = ss.dense @ xs
    log_z = logsumexp(scores, axis=0)
    return np.exp(scores - log_z), log_z


def batch_marginals(ss: StateSpace, xs) -> list[MarginalVector]:
    probs, log_z = batch_row_probs(ss, xs)
    values = accumulate_marginals(ss, probs)
    return [
        MarginalVector(values[:, j], float(log_z[j]), probs[:, j])
        for j in range(values.shape[1])
    ]


def marginal_matrix(ss: StateSpace, outputs) -> np.ndarray:
    """Marginals for samples stored as rows: ``(k, n) -> (k, n)``."""
    probs, _ = batch_row_probs(ss, np.asarray(outputs, dtype=np.float64).T)
    return accumulate_marginals(ss, probs).T
