"""Legal-assignment matrix of a tree hierarchy.

In a tree every legal assignment is either all zeros or the indicator of a
root-to-node path, so the state space has exactly ``n + 1`` rows. Row 0 is
the all-zeros assignment and row ``v + 1`` switches on ``v`` and its
ancestors.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .taxonomy import Taxonomy

MAX_BRUTE_FORCE_NODES = 20


@dataclass(frozen=True, eq=False)
class StateSpace:
    s_matrix: np.ndarray  # (n + 1, n), uint8
    rows_with_label: tuple[np.ndarray, ...]
    zero_row: int = 0
    parent_index: np.ndarray | None = None  # -1 for roots
    depth: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.s_matrix.shape[1]

    @property
    def n_rows(self) -> int:
        return self.s_matrix.shape[0]

    def row_of(self, v: int) -> int:
        """Row whose assignment stops exactly at node ``v``."""
        return v + 1

    @cached_property
    def dense(self) -> np.ndarray:
        """Float64 copy of ``S`` for matrix products."""
        d = self.s_matrix.astype(np.float64)
        d.setflags(write=False)
        return d

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        """Labels set by a single row, i.e. nodes without descendants."""
        return tuple(i for i, r in enumerate(self.rows_with_label) if len(r) == 1)

    @cached_property
    def leaf_position(self) -> dict[int, int]:
        return {v: k for k, v in enumerate(self.leaves)}

    def to_csv(self, t: Taxonomy) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([node.name for node in t.nodes])
        writer.writerows(self.s_matrix.tolist())
        return buf.getvalue()


def build_state_space(t: Taxonomy) -> StateSpace:
    n = t.n
    s = np.zeros((n + 1, n), dtype=np.uint8)
    for v in range(n):
        s[v + 1, t.path_to(v)] = 1
    s.setflags(write=False)
    rows = []
    for i in range(n):
        r = np.flatnonzero(s[:, i])
        r.setflags(write=False)
        rows.append(r)
    parent_index = np.array([-1 if p is None else p for p in t.parents], dtype=np.int64)
    depth = np.array([node.level for node in t.nodes], dtype=np.int64)
    return StateSpace(s, tuple(rows), 0, parent_index, depth)


def satisfies_constraints(t: Taxonomy, y) -> bool:
    """Check a binary assignment against every subsumption and exclusion edge."""
    y = np.asarray(y)
    if y.shape != (t.n,):
        raise ValueError(f"assignment has shape {y.shape}, expected ({t.n},)")
    on = [i for i in range(t.n) if y[i]]
    for i in on:
        p = t.parents[i]
        if p is not None and not y[p]:
            return False
    for a, b in itertools.combinations(on, 2):
        if t.are_exclusive(a, b):
            return False
    return True


def brute_force_state_space(t: Taxonomy) -> set[tuple[int, ...]]:
    """Enumerate all 2**n assignments and keep the legal ones."""
    if t.n > MAX_BRUTE_FORCE_NODES:
        raise ValueError(
            f"brute force enumeration limited to {MAX_BRUTE_FORCE_NODES} nodes, got {t.n}"
        )
    return {
        y for y in itertools.product((0, 1), repeat=t.n) if satisfies_constraints(t, y)
    }
