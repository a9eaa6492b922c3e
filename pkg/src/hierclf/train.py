"""Mini-batch SGD with momentum, weight decay and a cosine learning rate."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import metrics
from .datagen import Dataset, stratified_split
from .hrnet import HrnModel, backward, forward
from .inference import marginal_matrix
from .loss import REDUCTIONS, VARIANTS, batch_loss
from .statespace import StateSpace
from .taxonomy import Taxonomy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    base_lr: float = 0.05
    trunk_lr_ratio: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    reduction: str = "mean"
    variant: str = "combinatorial"
    ce_weight: float = 1.0
    val_fraction: float = 0.2
    decoupled_weight_decay: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.trunk_lr_ratio < 0:
            raise ValueError("trunk_lr_ratio must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.0

    @classmethod
    def zeros_like(cls, model: HrnModel, lr: float = 0.0) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in model.params.items()}, 0, lr)


def cosine_lr(base_lr: float, epoch: float, total_epochs: int) -> float:
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def sgd_step(
    model: HrnModel, grads: dict[str, np.ndarray], state: OptimizerState, cfg: TrainConfig
) -> None:
    """In-place momentum update.

    ``v <- momentum * v + grad + wd * param`` then ``param <- param - lr * v``,
    with the learning rate scaled by ``trunk_lr_ratio`` on trunk parameters.
    With ``decoupled_weight_decay`` the decay bypasses the velocity.
    """
    if grads.keys() != model.params.keys():
        raise ValueError("gradient names do not match model parameters")
    for name, param in model.params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {param.shape}")
        lr = state.lr * (cfg.trunk_lr_ratio if name.startswith("trunk.") else 1.0)
        v = state.velocity[name]
        v *= cfg.momentum
        v += g
        if cfg.decoupled_weight_decay:
            param -= lr * cfg.weight_decay * param
        else:
            v += cfg.weight_decay * param
        param -= lr * v
    state.step += 1


def prediction_scores(model: HrnModel, ss: StateSpace, features, variant: str) -> np.ndarray:
    """Per-node scores used for evaluation, ``(k, n)``.

    Hierarchy-trained variants use exact marginals; the per-node baseline
    uses raw sigmoid outputs; the leaf-softmax baseline sums leaf
    probabilities under each node.
    """
    outputs, logits, _ = forward(model, np.atleast_2d(features))
    if variant == "per_node_binary_ce":
        return outputs
    if variant == "leaf_ce_only":
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        # rows of S for the leaves give each leaf's path; summing spreads mass upward
        leaf_paths = ss.dense[[ss.row_of(v) for v in ss.leaves]]
        return p @ leaf_paths
    return marginal_matrix(ss, outputs)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    hier_loss: float
    ce_loss: float
    level_oa: list[float]
    au_prc: float
    steps: int


@dataclass
class FitResult:
    model: HrnModel
    history: list[EpochRecord] = field(default_factory=list)
    validation: Dataset | None = None


def fit(
    model: HrnModel,
    dataset: Dataset,
    taxonomy: Taxonomy,
    ss: StateSpace,
    cfg: TrainConfig,
    callbacks: Iterable[Callable[[EpochRecord], None]] = (),
    validation: Dataset | None = None,
) -> FitResult:
    """Train ``model`` in place.

    A stratified validation split of ``cfg.val_fraction`` is carved out of
    ``dataset`` unless ``validation`` is given explicitly.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.input_dim != model.config.input_dim:
        raise ValueError(
            f"dataset has {dataset.input_dim} features, model expects {model.config.input_dim}"
        )
    if dataset.taxonomy_digest != taxonomy.digest or model.taxonomy_digest != taxonomy.digest:
        raise ValueError("dataset, model and taxonomy disagree on the hierarchy")
    if dataset.observed.min() < 0 or dataset.observed.max() >= taxonomy.n:
        raise ValueError("observed label out of range")

    train = dataset
    if validation is None and cfg.val_fraction > 0:
        train, validation = stratified_split(dataset, cfg.val_fraction, cfg.seed)

    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState.zeros_like(model)
    history = []
    m = len(train)
    for epoch in range(cfg.epochs):
        state.lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs)
        order = rng.permutation(m)
        total = hier = ce = 0.0
        steps = 0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            outputs, logits, cache = forward(model, train.features[idx])
            lv = batch_loss(
                ss,
                outputs,
                logits,
                train.observed[idx],
                variant=cfg.variant,
                reduction=cfg.reduction,
                ce_weight=cfg.ce_weight,
            )
            grads = backward(model, cache, lv.grad_hier, lv.grad_ce)
            sgd_step(model, grads, state, cfg)
            weight = len(idx) if cfg.reduction == "mean" else 1.0
            total += lv.total * weight
            hier += lv.hier_part * weight
            ce += lv.ce_part * weight
            steps += 1

        level_oa = [float("nan")] * taxonomy.levels
        au = float("nan")
        if validation is not None and len(validation):
            report = evaluate(model, validation, taxonomy, ss, cfg.variant)
            level_oa, au = report["level_oa"], report["au_prc"]
        rec = EpochRecord(epoch, state.lr, total / m, hier / m, ce / m, level_oa, au, steps)
        history.append(rec)
        log.debug("epoch %d lr %.5f loss %.5f", epoch, state.lr, rec.loss)
        for cb in callbacks:
            cb(rec)
    return FitResult(model, history, validation)


def evaluate(
    model: HrnModel, dataset: Dataset, taxonomy: Taxonomy, ss: StateSpace, variant: str
) -> dict:
    scores = prediction_scores(model, ss, dataset.features, variant)
    truth = dataset.truth_leaf
    return {
        "level_oa": metrics.per_level_oa(scores, truth, taxonomy),
        "au_prc": metrics.average_prc(scores, truth, taxonomy).area,
    }
