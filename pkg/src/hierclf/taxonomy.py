"""Label hierarchy: parsing, validation and ancestor queries.

A taxonomy file is UTF-8 text with one node per line::

    <id>\t<parent-id or ->\t<name>

Ids are consecutive integers starting at 0 in file order; ``-`` marks a
root. Blank lines and lines starting with ``#`` are ignored. Several roots
are allowed and no virtual root is stored.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence


class TaxonomyError(ValueError):
    """Base class for malformed hierarchies."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyTaxonomyError(TaxonomyError):
    pass


class DuplicateIdError(TaxonomyError):
    pass


class UnknownParentError(TaxonomyError):
    pass


class CycleError(TaxonomyError):
    pass


class DuplicateNameError(TaxonomyError):
    pass


class MalformedLineError(TaxonomyError):
    pass


@dataclass(frozen=True)
class Node:
    name: str
    parent: int | None
    level: int


@dataclass(frozen=True)
class Taxonomy:
    """Immutable label tree. Node ids index every downstream vector."""

    nodes: tuple[Node, ...]
    _children: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)

    @classmethod
    def from_parents(
        cls, parents: Sequence[int | None], names: Sequence[str] | None = None
    ) -> "Taxonomy":
        """Build a taxonomy from a parent list (``None`` for roots)."""
        n = len(parents)
        if n == 0:
            raise EmptyTaxonomyError("taxonomy has no nodes")
        if names is None:
            names = [f"node{i}" for i in range(n)]
        if len(names) != n:
            raise ValueError("names and parents differ in length")
        for i, p in enumerate(parents):
            if p is not None and not 0 <= p < n:
                raise UnknownParentError(f"node {i} has unknown parent {p}")

        levels: list[int | None] = [None] * n
        for start in range(n):
            path = []
            v: int | None = start
            seen = set()
            while v is not None and levels[v] is None:
                if v in seen:
                    raise CycleError(f"cycle through node {v}")
                seen.add(v)
                path.append(v)
                v = parents[v]
            base = -1 if v is None else levels[v]
            for depth, u in enumerate(reversed(path), start=1):
                levels[u] = base + depth

        nodes = tuple(Node(str(names[i]), parents[i], levels[i]) for i in range(n))
        by_level: dict[tuple[int, str], int] = {}
        for i, node in enumerate(nodes):
            key = (node.level, node.name)
            if key in by_level:
                raise DuplicateNameError(
                    f"name {node.name!r} repeated at level {node.level} "
                    f"(nodes {by_level[key]} and {i})"
                )
            by_level[key] = i

        children: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(parents):
            if p is not None:
                children[p].append(i)
        return cls(nodes, tuple(tuple(c) for c in children))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def levels(self) -> int:
        return 1 + max(node.level for node in self.nodes)

    @cached_property
    def parents(self) -> tuple[int | None, ...]:
        return tuple(node.parent for node in self.nodes)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        """Leaf ids in NodeId order; this fixes the leaf-logit order."""
        return tuple(i for i in range(self.n) if not self._children[i])

    @property
    def leaf_set(self) -> frozenset[int]:
        return frozenset(self.leaves)

    @cached_property
    def roots(self) -> tuple[int, ...]:
        return tuple(i for i, node in enumerate(self.nodes) if node.parent is None)

    @cached_property
    def is_uniform(self) -> bool:
        """True when every leaf sits on the last level."""
        return all(self.nodes[i].level == self.levels - 1 for i in self.leaves)

    def children(self, v: int) -> tuple[int, ...]:
        self._check(v)
        return self._children[v]

    def level_of(self, v: int) -> int:
        self._check(v)
        return self.nodes[v].level

    def ancestors_of(self, v: int) -> list[int]:
        """Ancestors of ``v`` ordered root first, excluding ``v``."""
        self._check(v)
        out = []
        p = self.nodes[v].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        out.reverse()
        return out

    def path_to(self, v: int) -> list[int]:
        """Root-to-``v`` path including ``v``."""
        return self.ancestors_of(v) + [v]

    def descendants_of(self, v: int) -> list[int]:
        self._check(v)
        out = []
        stack = list(reversed(self._children[v]))
        while stack:
            u = stack.pop()
            out.append(u)
            stack.extend(reversed(self._children[u]))
        return sorted(out)

    def is_ancestor(self, a: int, b: int) -> bool:
        """True if ``a`` is a strict ancestor of ``b``."""
        self._check(a)
        self._check(b)
        p = self.nodes[b].parent
        while p is not None:
            if p == a:
                return True
            p = self.nodes[p].parent
        return False

    def nodes_at_level(self, level: int) -> list[int]:
        if not 0 <= level < self.levels:
            raise IndexError(f"level {level} out of range [0, {self.levels})")
        return [i for i, node in enumerate(self.nodes) if node.level == level]

    def are_exclusive(self, a: int, b: int) -> bool:
        """True iff neither node is an ancestor of the other."""
        self._check(a)
        self._check(b)
        if a == b:
            raise ValueError("exclusivity is undefined for a node and itself")
        return not (self.is_ancestor(a, b) or self.is_ancestor(b, a))

    def level_counts(self) -> list[int]:
        return [len(self.nodes_at_level(lv)) for lv in range(self.levels)]

    def to_text(self) -> str:
        lines = []
        for i, node in enumerate(self.nodes):
            parent = "-" if node.parent is None else str(node.parent)
            lines.append(f"{i}\t{parent}\t{node.name}")
        return "\n".join(lines) + "\n"

    @cached_property
    def digest(self) -> str:
        """SHA-256 of the normalized file text; used to pair data with trees."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def _check(self, v: int) -> None:
        if not isinstance(v, (int,)) and not hasattr(v, "__index__"):
            raise TypeError(f"node id must be an integer, got {type(v).__name__}")
        if not 0 <= v < self.n:
            raise IndexError(f"node id {v} out of range [0, {self.n})")


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse taxonomy file content.

    Raises
    ------
    EmptyTaxonomyError, DuplicateIdError, UnknownParentError, CycleError,
    DuplicateNameError, MalformedLineError
        Each carries the offending line number where one applies.
    """
    entries: list[tuple[int, str, str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLineError(
                f"expected 3 tab-separated fields, got {len(parts)}", lineno
            )
        ident, parent, name = (p.strip() for p in parts)
        try:
            node_id = int(ident)
        except ValueError:
            raise MalformedLineError(f"id {ident!r} is not an integer", lineno) from None
        if not name:
            raise MalformedLineError("empty node name", lineno)
        entries.append((node_id, parent, name, lineno))

    if not entries:
        raise EmptyTaxonomyError("taxonomy file contains no nodes")

    line_of: dict[int, int] = {}
    for expected, (node_id, _, _, lineno) in enumerate(entries):
        if node_id in line_of:
            raise DuplicateIdError(
                f"id {node_id} already defined on line {line_of[node_id]}", lineno
            )
        if node_id != expected:
            raise MalformedLineError(
                f"ids must be consecutive from 0; expected {expected}, got {node_id}",
                lineno,
            )
        line_of[node_id] = lineno

    parents: list[int | None] = []
    for node_id, parent, _, lineno in entries:
        if parent == "-":
            parents.append(None)
            continue
        try:
            pid = int(parent)
        except ValueError:
            raise MalformedLineError(f"parent {parent!r} is not an integer", lineno) from None
        if pid not in line_of:
            raise UnknownParentError(f"node {node_id} has unknown parent {pid}", lineno)
        parents.append(pid)

    # Report cycles against the first offending line.
    for node_id, _, _, lineno in entries:
        seen = {node_id}
        p = parents[node_id]
        while p is not None:
            if p in seen:
                raise CycleError(f"node {node_id} is on a parent cycle", lineno)
            seen.add(p)
            p = parents[p]

    return Taxonomy.from_parents(parents, [name for _, _, name, _ in entries])


def serialize_taxonomy(t: Taxonomy) -> str:
    return t.to_text()


def load_taxonomy(path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        return parse_taxonomy(fh.read())


def balanced_taxonomy(branching: Iterable[int]) -> Taxonomy:
    """Uniform-depth tree; ``branching[0]`` is the number of roots.

    Node names encode the path, e.g. ``c1.0.3``. Ids are assigned level by
    level so every level occupies a contiguous id range.
    """
    branching = list(branching)
    if not branching or any(b < 1 for b in branching):
        raise ValueError(f"branching factors must be positive, got {branching}")
    parents: list[int | None] = []
    names: list[str] = []
    frontier: list[tuple[int | None, str]] = [(None, "c")]
    for b in branching:
        nxt = []
        for pid, prefix in frontier:
            for k in range(b):
                name = f"{prefix}{k}" if pid is None else f"{prefix}.{k}"
                nxt.append((len(parents), name))
                parents.append(pid)
                names.append(name)
        frontier = nxt
    return Taxonomy.from_parents(parents, names)


def random_taxonomy(n: int, rng, max_roots: int = 3) -> Taxonomy:
    """Random tree with ``n`` nodes; each node's parent precedes it."""
    import numpy as np

    rng = np.random.default_rng(rng)
    n_roots = int(rng.integers(1, min(max_roots, n) + 1))
    parents: list[int | None] = [None] * n_roots
    for i in range(n_roots, n):
        parents.append(int(rng.integers(0, i)))
    return Taxonomy.from_parents(parents)
