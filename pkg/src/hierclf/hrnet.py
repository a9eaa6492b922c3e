"""Hierarchical residual network on feature vectors.

Layout (samples are rows)::

    trunk:    a = relu(a @ W.T + b) for each trunk layer
    block l:  f_l = relu(relu(t @ W1.T + b1) @ W2.T + b2)
    combine:  h_0 = f_0,  h_l = relu(f_l + h_{l-1} @ C_l.T)
    O_Hier:   sigmoid(h_l @ H_l.T + c_l) -> the level-l nodes
    O_CE:     h_last @ E.T + e -> leaf logits

Level-l outputs therefore depend on blocks ``0..l`` only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .taxonomy import Taxonomy

CHECKPOINT_MAGIC = b"HIERCLF-CKPT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class HrnConfig:
    input_dim: int
    levels: int
    trunk_dims: tuple[int, ...] = (64,)
    block_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trunk_dims", tuple(int(d) for d in self.trunk_dims))
        if self.input_dim < 1 or self.block_dim < 1 or any(d < 1 for d in self.trunk_dims):
            raise ValueError("all layer widths must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


@dataclass(eq=False)
class HrnModel:
    config: HrnConfig
    params: dict[str, np.ndarray]
    level_nodes: tuple[np.ndarray, ...]
    n_nodes: int
    n_leaves: int
    taxonomy_digest: str
    meta: dict = field(default_factory=dict)

    @property
    def is_trunk(self) -> dict[str, bool]:
        return {name: name.startswith("trunk.") for name in self.params}

    def forward(self, features):
        return forward(self, features)

    def backward(self, cache, grad_hier, grad_ce):
        return backward(self, cache, grad_hier, grad_ce)

    def copy(self) -> "HrnModel":
        return HrnModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.level_nodes,
            self.n_nodes,
            self.n_leaves,
            self.taxonomy_digest,
            dict(self.meta),
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass(eq=False)
class ForwardCache:
    inputs: np.ndarray
    trunk_acts: list[np.ndarray]
    block_hidden: list[np.ndarray]
    block_out: list[np.ndarray]
    combined: list[np.ndarray]
    outputs: np.ndarray
    single: bool


def _shapes(cfg: HrnConfig, level_sizes: Sequence[int], n_leaves: int):
    shapes = []
    prev = cfg.input_dim
    for i, width in enumerate(cfg.trunk_dims):
        shapes += [(f"trunk.{i}.weight", (width, prev)), (f"trunk.{i}.bias", (width,))]
        prev = width
    d = cfg.block_dim
    for lv in range(cfg.levels):
        shapes += [
            (f"block.{lv}.fc1.weight", (d, prev)),
            (f"block.{lv}.fc1.bias", (d,)),
            (f"block.{lv}.fc2.weight", (d, d)),
            (f"block.{lv}.fc2.bias", (d,)),
        ]
        if lv > 0:
            shapes.append((f"combine.{lv}.weight", (d, d)))
    for lv, size in enumerate(level_sizes):
        shapes += [(f"hier_head.{lv}.weight", (size, d)), (f"hier_head.{lv}.bias", (size,))]
    shapes += [("ce_head.weight", (n_leaves, d)), ("ce_head.bias", (n_leaves,))]
    return shapes


def _layout(cfg: HrnConfig, t: Taxonomy):
    if cfg.levels != t.levels:
        raise ValueError(f"config has {cfg.levels} levels but taxonomy has {t.levels}")
    if not t.is_uniform:
        raise ValueError("taxonomy leaves sit at different depths; a uniform tree is required")
    level_nodes = tuple(np.array(t.nodes_at_level(lv), dtype=np.int64) for lv in range(t.levels))
    return level_nodes, _shapes(cfg, [len(ix) for ix in level_nodes], len(t.leaves))


def init_model(cfg: HrnConfig, t: Taxonomy) -> HrnModel:
    """Fan-in scaled uniform weights, zero biases; deterministic in ``cfg.seed``."""
    level_nodes, shapes = _layout(cfg, t)
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in shapes:
        if name.endswith("bias"):
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return HrnModel(cfg, params, level_nodes, t.n, len(t.leaves), t.digest)


def zero_model(cfg: HrnConfig, t: Taxonomy) -> HrnModel:
    level_nodes, shapes = _layout(cfg, t)
    params = {name: np.zeros(shape) for name, shape in shapes}
    return HrnModel(cfg, params, level_nodes, t.n, len(t.leaves), t.digest)


def _relu(a):
    return np.maximum(a, 0.0)


def forward(m: HrnModel, features):
    """Run the network.

    Returns ``(sigmoid_outputs, leaf_logits, cache)``. A 1-D feature vector
    gives 1-D outputs; a ``(k, input_dim)`` batch gives ``(k, n)`` and
    ``(k, n_leaves)``.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != m.config.input_dim:
        raise ValueError(
            f"features have shape {np.shape(features)}, expected (..., {m.config.input_dim})"
        )
    p = m.params
    a = x
    trunk_acts = []
    for i in range(len(m.config.trunk_dims)):
        a = _relu(a @ p[f"trunk.{i}.weight"].T + p[f"trunk.{i}.bias"])
        trunk_acts.append(a)

    hidden, block_out, combined = [], [], []
    outputs = np.empty((x.shape[0], m.n_nodes))
    h = None
    for lv in range(m.config.levels):
        u = _relu(a @ p[f"block.{lv}.fc1.weight"].T + p[f"block.{lv}.fc1.bias"])
        f = _relu(u @ p[f"block.{lv}.fc2.weight"].T + p[f"block.{lv}.fc2.bias"])
        h = f if lv == 0 else _relu(f + h @ p[f"combine.{lv}.weight"].T)
        hidden.append(u)
        block_out.append(f)
        combined.append(h)
        z = h @ p[f"hier_head.{lv}.weight"].T + p[f"hier_head.{lv}.bias"]
        outputs[:, m.level_nodes[lv]] = expit(z)
    logits = h @ p["ce_head.weight"].T + p["ce_head.bias"]

    cache = ForwardCache(x, trunk_acts, hidden, block_out, combined, outputs, single)
    if single:
        return outputs[0], logits[0], cache
    return outputs, logits, cache


def backward(m: HrnModel, cache: ForwardCache, grad_hier, grad_ce) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients on outputs and leaf logits."""
    gx = np.atleast_2d(np.asarray(grad_hier, dtype=np.float64))
    gc = np.atleast_2d(np.asarray(grad_ce, dtype=np.float64))
    k = cache.inputs.shape[0]
    if gx.shape != (k, m.n_nodes) or gc.shape != (k, m.n_leaves):
        raise ValueError("upstream gradients do not match the cached forward pass")
    if len(cache.combined) != m.config.levels:
        raise ValueError("cache was produced by a model with a different layout")
    p = m.params
    grads = {name: np.zeros_like(v) for name, v in p.items()}
    levels = m.config.levels
    top = cache.trunk_acts[-1] if cache.trunk_acts else cache.inputs

    gz = gx * cache.outputs * (1.0 - cache.outputs)
    dh = [None] * levels
    for lv in range(levels):
        gzl = gz[:, m.level_nodes[lv]]
        h = cache.combined[lv]
        grads[f"hier_head.{lv}.weight"] = gzl.T @ h
        grads[f"hier_head.{lv}.bias"] = gzl.sum(axis=0)
        dh[lv] = gzl @ p[f"hier_head.{lv}.weight"]
    h_last = cache.combined[-1]
    grads["ce_head.weight"] = gc.T @ h_last
    grads["ce_head.bias"] = gc.sum(axis=0)
    dh[-1] = dh[-1] + gc @ p["ce_head.weight"]

    d_top = np.zeros_like(top)
    for lv in reversed(range(levels)):
        h = cache.combined[lv]
        if lv == 0:
            df = dh[0]
        else:
            dpre = dh[lv] * (h > 0)
            h_prev = cache.combined[lv - 1]
            grads[f"combine.{lv}.weight"] = dpre.T @ h_prev
            dh[lv - 1] = dh[lv - 1] + dpre @ p[f"combine.{lv}.weight"]
            df = dpre
        f = cache.block_out[lv]
        u = cache.block_hidden[lv]
        dv = df * (f > 0)
        grads[f"block.{lv}.fc2.weight"] = dv.T @ u
        grads[f"block.{lv}.fc2.bias"] = dv.sum(axis=0)
        du = (dv @ p[f"block.{lv}.fc2.weight"]) * (u > 0)
        grads[f"block.{lv}.fc1.weight"] = du.T @ top
        grads[f"block.{lv}.fc1.bias"] = du.sum(axis=0)
        d_top += du @ p[f"block.{lv}.fc1.weight"]

    da = d_top
    for i in reversed(range(len(m.config.trunk_dims))):
        act = cache.trunk_acts[i]
        below = cache.trunk_acts[i - 1] if i > 0 else cache.inputs
        dz = da * (act > 0)
        grads[f"trunk.{i}.weight"] = dz.T @ below
        grads[f"trunk.{i}.bias"] = dz.sum(axis=0)
        da = dz @ p[f"trunk.{i}.weight"]
    return grads


def save_checkpoint(m: HrnModel, path) -> None:
    """Write ``m`` as magic line, JSON header line, raw little-endian float64."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(m.config),
        "taxonomy_sha256": m.taxonomy_digest,
        "dtype": "<f8",
        "params": [{"name": k, "shape": list(v.shape)} for k, v in m.params.items()],
        "meta": m.meta,
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in m.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path, t: Taxonomy) -> HrnModel:
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        blob = fh.read()
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    if header["taxonomy_sha256"] != t.digest:
        raise CheckpointError("checkpoint was trained on a different taxonomy")
    cfg = HrnConfig(**header["config"])
    level_nodes, shapes = _layout(cfg, t)
    if [(s["name"], tuple(s["shape"])) for s in header["params"]] != [
        (name, tuple(shape)) for name, shape in shapes
    ]:
        raise CheckpointError("checkpoint parameter layout does not match its config")
    params = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape))
        chunk = blob[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError("checkpoint is truncated")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(blob):
        raise CheckpointError("trailing bytes after parameters")
    return HrnModel(cfg, params, level_nodes, t.n, len(t.leaves), t.digest, header["meta"])
