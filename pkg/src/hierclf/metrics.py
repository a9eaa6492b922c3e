"""Per-level overall accuracy and the micro-averaged precision-recall curve."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .taxonomy import Taxonomy


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    scores: np.ndarray
    truth_path: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class PrCurve:
    points: np.ndarray  # (m, 2) rows of (precision, recall), recall non-decreasing
    thresholds: np.ndarray
    area: float


def _truth_paths(truth, taxonomy: Taxonomy) -> list[list[int]]:
    """Accept node ids (path implied) or explicit root-to-node paths."""
    paths = []
    for item in truth:
        if np.ndim(item) == 0:
            paths.append(taxonomy.path_to(int(item)))
        else:
            path = [int(v) for v in item]
            path = sorted(path, key=taxonomy.level_of)
            if path != taxonomy.path_to(path[-1]):
                raise ValueError(f"{list(item)} is not a root-to-node path")
            paths.append(path)
    return paths


def from_records(records: Sequence[PredictionRecord]):
    scores = np.array([r.scores for r in records], dtype=np.float64)
    return scores, [tuple(r.truth_path) for r in records]


def _check(scores, truth, taxonomy):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != taxonomy.n:
        raise ValueError(f"scores must be (k, {taxonomy.n}), got {scores.shape}")
    if scores.shape[0] == 0:
        raise ValueError("no predictions")
    paths = _truth_paths(truth, taxonomy)
    if len(paths) != scores.shape[0]:
        raise ValueError("scores and truth differ in length")
    return scores, paths


def per_level_oa(scores, truth, taxonomy: Taxonomy) -> list[float]:
    """Accuracy of the within-level argmax at every level.

    Ties go to the lowest node id. Records whose truth path stops above a
    level do not count towards that level.
    """
    scores, paths = _check(scores, truth, taxonomy)
    out = []
    for lv in range(taxonomy.levels):
        nodes = np.array(taxonomy.nodes_at_level(lv))
        pred = nodes[np.argmax(scores[:, nodes], axis=1)]
        hits = [pred[j] == p[lv] for j, p in enumerate(paths) if len(p) > lv]
        out.append(float(np.mean(hits)) if hits else float("nan"))
    return out


def truth_matrix(paths: Sequence[Sequence[int]], n: int) -> np.ndarray:
    y = np.zeros((len(paths), n), dtype=bool)
    for j, p in enumerate(paths):
        y[j, list(p)] = True
    return y


def average_prc(scores, truth, taxonomy: Taxonomy) -> PrCurve:
    """Micro-averaged PR curve over all labels and records.

    Every distinct score plus 0 and 1 is used as a threshold; a label is
    predicted when its score is >= the threshold. Thresholds that predict
    nothing have no defined precision and are skipped; repeated points are
    collapsed.
    """
    scores, paths = _check(scores, truth, taxonomy)
    y = truth_matrix(paths, taxonomy.n).ravel()
    s = scores.ravel()
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("truth contains no positive labels")

    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_before = np.concatenate([[0], np.cumsum(y[order])])

    thresholds = np.unique(np.concatenate([s, [0.0, 1.0]]))[::-1]
    first = np.searchsorted(s_sorted, thresholds, side="left")
    predicted = s.size - first
    tp = n_pos - pos_before[first]
    keep = predicted > 0
    precision = tp[keep] / predicted[keep]
    recall = tp[keep] / n_pos
    pts = np.column_stack([precision, recall])
    thr = thresholds[keep]
    distinct = np.ones(len(pts), dtype=bool)
    distinct[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts, thr = pts[distinct], thr[distinct]
    return PrCurve(pts, thr, au_prc(pts))


def au_prc(curve) -> float:
    """Trapezoidal area with an anchor at recall 0 carrying the first precision."""
    pts = curve.points if isinstance(curve, PrCurve) else np.asarray(curve, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("empty curve")
    pts = np.atleast_2d(pts)
    precision = np.concatenate([[pts[0, 0]], pts[:, 0]])
    recall = np.concatenate([[0.0], pts[:, 1]])
    area = float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))
    return min(max(area, 0.0), 1.0)
