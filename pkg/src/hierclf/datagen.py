"""Synthetic hierarchical data, coarse relabeling and feature degradation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .taxonomy import Taxonomy, balanced_taxonomy

DATASET_FORMAT = "hierclf-dataset"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    pass


class Sample(NamedTuple):
    features: np.ndarray
    observed: int
    truth_leaf: int


@dataclass(eq=False)
class Dataset:
    """Features as rows plus observed and ground-truth leaf labels."""

    features: np.ndarray
    observed: np.ndarray
    truth_leaf: np.ndarray
    taxonomy_digest: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=np.int64)
        self.truth_leaf = np.asarray(self.truth_leaf, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        m = self.features.shape[0]
        if self.observed.shape != (m,) or self.truth_leaf.shape != (m,):
            raise ValueError("label arrays must match the number of feature rows")

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.observed[i]), int(self.truth_leaf[i]))

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx].copy(),
            self.observed[idx].copy(),
            self.truth_leaf[idx].copy(),
            self.taxonomy_digest,
        )

    def copy(self) -> "Dataset":
        return self.subset(np.arange(len(self)))

    def truth_paths(self, t: Taxonomy) -> list[list[int]]:
        return [t.path_to(int(v)) for v in self.truth_leaf]

    def validate(self, t: Taxonomy) -> None:
        """Check that every observed label lies on its sample's truth path."""
        if self.taxonomy_digest != t.digest:
            raise ValueError("dataset belongs to a different taxonomy")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        for j in range(len(self)):
            path = t.path_to(int(self.truth_leaf[j]))
            if int(self.observed[j]) not in path:
                raise ValueError(f"sample {j}: observed label is not on the truth path")


@dataclass(frozen=True)
class SyntheticSpec:
    branching: tuple[int, ...] = (3, 3)
    input_dim: int = 16
    separations: tuple[float, ...] = (8.0, 4.0)
    samples_per_leaf: int = 20
    test_samples_per_leaf: int = 20
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branching", tuple(int(b) for b in self.branching))
        object.__setattr__(self, "separations", tuple(float(s) for s in self.separations))
        if not self.branching or min(self.branching) < 1:
            raise ValueError("branching factors must be positive")
        if len(self.separations) != len(self.branching):
            raise ValueError("need one separation per level")
        if min(self.separations) <= 0:
            raise ValueError("separations must be positive")
        if self.input_dim < 1 or self.samples_per_leaf < 1 or self.test_samples_per_leaf < 0:
            raise ValueError("dimensions and sample counts must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def node_centers(spec: SyntheticSpec, t: Taxonomy | None = None) -> np.ndarray:
    """Cluster center of every node; a child sits at its parent plus an offset."""
    t = t or balanced_taxonomy(spec.branching)
    rng = np.random.default_rng([spec.seed, 0])
    centers = np.zeros((t.n, spec.input_dim))
    for v, node in enumerate(t.nodes):
        offset = rng.normal(size=spec.input_dim) / math.sqrt(spec.input_dim)
        base = 0.0 if node.parent is None else centers[node.parent]
        centers[v] = base + spec.separations[node.level] * offset
    return centers


def generate(spec: SyntheticSpec) -> tuple[Taxonomy, Dataset, Dataset]:
    """Hierarchical Gaussian mixture; every sample starts observed at its leaf."""
    t = balanced_taxonomy(spec.branching)
    centers = node_centers(spec, t)
    rng = np.random.default_rng([spec.seed, 1])

    def draw(per_leaf):
        leaves = np.repeat(np.array(t.leaves, dtype=np.int64), per_leaf)
        noise = spec.noise_sigma * rng.normal(size=(leaves.size, spec.input_dim))
        return Dataset(centers[leaves] + noise, leaves.copy(), leaves, t.digest)

    train = draw(spec.samples_per_leaf)
    test = draw(spec.test_samples_per_leaf)
    return t, train, test


def nearest_centroid_predict(features, centers, candidates: Sequence[int]) -> np.ndarray:
    candidates = np.asarray(candidates)
    c = centers[candidates]
    d2 = ((np.asarray(features)[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return candidates[np.argmin(d2, axis=1)]


def _round_half_up(x: float) -> int:
    # Guard against products like 0.7 * 20 = 13.999999999999998.
    return int(math.floor(round(x, 9) + 0.5))


def _class_members(d: Dataset, leaf: int) -> np.ndarray:
    """Members of a class in a content-defined order, independent of row order."""
    idx = np.flatnonzero(d.truth_leaf == leaf)
    keys = d.features[idx]
    order = np.lexsort(keys.T[::-1]) if keys.size else np.arange(0)
    return idx[order]


def relabel_selection(d: Dataset, t: Taxonomy, proportion: float, seed: int) -> np.ndarray:
    """Indices chosen for relabeling, sorted ascending."""
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion {proportion} outside [0, 1]")
    if not np.all(d.observed == d.truth_leaf) or not set(d.observed.tolist()) <= t.leaf_set:
        raise ValueError("relabeling expects every observed label to be a leaf")
    chosen = []
    for leaf in np.unique(d.truth_leaf):
        members = _class_members(d, int(leaf))
        k = _round_half_up(proportion * members.size)
        if k == 0:
            continue
        if t.parents[int(leaf)] is None:
            raise ValueError(f"leaf {int(leaf)} is a root and has no parent to relabel to")
        perm = np.random.default_rng([seed, int(leaf)]).permutation(members.size)
        chosen.append(members[perm[:k]])
    if not chosen:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen))


def relabel(d: Dataset, t: Taxonomy, proportion: float, seed: int = 0) -> Dataset:
    """Move a fixed share of every leaf class to the leaf's parent label.

    ``round_half_up(proportion * class_size)`` samples per class are chosen
    uniformly without replacement; truth labels are untouched.
    """
    sel = relabel_selection(d, t, proportion, seed)
    out = d.copy()
    parents = np.array([-1 if p is None else p for p in t.parents], dtype=np.int64)
    out.observed[sel] = parents[out.truth_leaf[sel]]
    return out


def degrade(
    d: Dataset,
    selected,
    factor: int,
    mode: str = "block",
    noise_sigma: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Destroy detail in the selected rows.

    ``block`` replaces each run of ``factor`` consecutive features by its mean
    (the vector analog of nearest-neighbor downsampling); ``noise`` adds
    Gaussian noise instead.
    """
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size and (selected.min() < 0 or selected.max() >= len(d)):
        raise IndexError("selected indices outside the dataset")
    if factor < 1 or d.input_dim % factor:
        raise ValueError(f"factor {factor} must divide input_dim {d.input_dim}")
    out = d.copy()
    rows = out.features[selected]
    if mode == "block":
        blocks = rows.reshape(len(selected), -1, factor).mean(axis=2)
        out.features[selected] = np.repeat(blocks, factor, axis=1)
    elif mode == "noise":
        rng = np.random.default_rng(seed)
        out.features[selected] = rows + noise_sigma * rng.normal(size=rows.shape)
    else:
        raise ValueError(f"unknown degradation mode {mode!r}")
    return out


def stratified_split(d: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out ``round_half_up(fraction * class_size)`` samples per leaf class."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    held = []
    for leaf in np.unique(d.truth_leaf):
        members = np.flatnonzero(d.truth_leaf == leaf)
        k = _round_half_up(fraction * members.size)
        perm = np.random.default_rng([seed, int(leaf), 7]).permutation(members.size)
        held.append(members[perm[:k]])
    held_idx = np.sort(np.concatenate(held)) if held else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(d), dtype=bool)
    mask[held_idx] = False
    return d.subset(np.flatnonzero(mask)), d.subset(held_idx)


def dumps_dataset(d: Dataset) -> str:
    lines = [
        f"# {DATASET_FORMAT} version={DATASET_VERSION} input_dim={d.input_dim} "
        f"taxonomy_sha256={d.taxonomy_digest}"
    ]
    for row, obs, leaf in zip(d.features.tolist(), d.observed.tolist(), d.truth_leaf.tolist()):
        lines.append(",".join([str(obs), str(leaf)] + [repr(v) for v in row]))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {DATASET_FORMAT} "):
        raise DatasetFormatError("missing dataset header line")
    fields = dict(item.split("=", 1) for item in lines[0][2:].split()[1:])
    try:
        version = int(fields["version"])
        input_dim = int(fields["input_dim"])
        digest = fields["taxonomy_sha256"]
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad header: {exc}") from None
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    obs, leaf, feats = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != input_dim + 2:
            raise DatasetFormatError(
                f"line {lineno}: expected {input_dim + 2} fields, got {len(parts)}"
            )
        try:
            obs.append(int(parts[0]))
            leaf.append(int(parts[1]))
            feats.append([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
    features = np.array(feats, dtype=np.float64).reshape(len(feats), input_dim)
    return Dataset(features, obs, leaf, digest)


def save_dataset(d: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_dataset(d))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())
