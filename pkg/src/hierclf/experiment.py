"""Relabeling sweeps over loss variants, with key-value config files.

Config files are plain ``key = value`` lines. Lists use brackets
(``proportions = [0, 0.3, 0.5]``), ``#`` starts a comment, and bare words
are strings.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .datagen import (
    SyntheticSpec,
    degrade,
    generate,
    load_dataset,
    relabel,
    relabel_selection,
)
from .hrnet import HrnConfig, init_model
from .loss import VARIANTS
from .statespace import build_state_space
from .taxonomy import load_taxonomy
from .train import TrainConfig, evaluate, fit

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if value.startswith("["):
            if not value.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated list")
            body = value[1:-1].strip()
            out[key] = [_scalar(v.strip()) for v in body.split(",")] if body else []
        else:
            out[key] = _scalar(value)
    return out


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    proportions: tuple[float, ...] = (0.0, 0.3, 0.5, 0.7, 0.9)
    variants: tuple[str, ...] = ("hier_only", "combinatorial")
    seeds: tuple[int, ...] = (0,)
    degrade: bool = False
    degrade_factor: int = 4
    degrade_mode: str = "block"
    # data: either files or a synthetic spec
    taxonomy: str | None = None
    train_data: str | None = None
    test_data: str | None = None
    branching: tuple[int, ...] = (4, 4, 4)
    input_dim: int = 16
    separations: tuple[float, ...] = (1.0, 1.0, 1.0)
    samples_per_leaf: int = 20
    test_samples_per_leaf: int = 20
    noise_sigma: float = 0.125
    # model
    trunk_dims: tuple[int, ...] = (64,)
    block_dim: int = 32
    # optimization
    epochs: int = 50
    batch_size: int = 32
    base_lr: float = 0.05
    trunk_lr_ratio: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    reduction: str = "mean"
    ce_weight: float = 1.0
    workers: int = 1

    def __post_init__(self):
        for name in ("proportions", "variants", "seeds", "branching", "separations", "trunk_dims"):
            value = getattr(self, name)
            if not isinstance(value, (list, tuple)):
                value = [value]
            object.__setattr__(self, name, tuple(value))
        if not self.proportions or not all(0 <= p <= 1 for p in self.proportions):
            raise ConfigError("proportions must be a nonempty list in [0, 1]")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ConfigError(f"unknown variants {bad}; choose from {VARIANTS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.taxonomy is None and (self.train_data or self.test_data):
            raise ConfigError("dataset files require a taxonomy file")
        if self.taxonomy is not None and not (self.train_data and self.test_data):
            raise ConfigError("a taxonomy file requires train_data and test_data")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**mapping)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_mapping(parse_config(text))

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    def train_config(self, variant: str, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            trunk_lr_ratio=self.trunk_lr_ratio,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=seed,
            reduction=self.reduction,
            variant=variant,
            ce_weight=self.ce_weight,
            val_fraction=0.0,
        )

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            branching=self.branching,
            input_dim=self.input_dim,
            separations=self.separations,
            samples_per_leaf=self.samples_per_leaf,
            test_samples_per_leaf=self.test_samples_per_leaf,
            noise_sigma=self.noise_sigma,
            seed=seed,
        )


def _load_data(cfg: ExperimentConfig, seed: int):
    if cfg.taxonomy is None:
        return generate(cfg.synthetic_spec(seed))
    t = load_taxonomy(cfg.taxonomy)
    train, test = load_dataset(cfg.train_data), load_dataset(cfg.test_data)
    for d in (train, test):
        d.validate(t)
    return t, train, test


def run_cell(cfg: ExperimentConfig, proportion: float, variant: str, seed: int) -> dict:
    """Relabel (and optionally degrade), train, and evaluate one grid cell."""
    t, train, test = _load_data(cfg, seed)
    ss = build_state_space(t)
    selected = relabel_selection(train, t, proportion, seed)
    train = relabel(train, t, proportion, seed)
    if cfg.degrade:
        train = degrade(train, selected, cfg.degrade_factor, mode=cfg.degrade_mode, seed=seed)
    model = init_model(
        HrnConfig(train.input_dim, t.levels, cfg.trunk_dims, cfg.block_dim, seed), t
    )
    result = fit(model, train, t, ss, cfg.train_config(variant, seed))
    report = evaluate(model, test, t, ss, variant)
    row = {"variant": variant, "proportion": proportion, "seed": seed}
    for lv, oa in enumerate(report["level_oa"]):
        row[f"level_{lv}_oa"] = oa
    row["au_prc"] = report["au_prc"]
    row["final_loss"] = result.history[-1].loss
    return row


def _cell(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Run every (proportion, variant, seed) cell; write CSVs if ``out_dir`` is set."""
    jobs = [(cfg, p, v, s) for p in cfg.proportions for v in cfg.variants for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_cell, jobs))
    else:
        rows = [_cell(job) for job in jobs]
    if out_dir is not None:
        write_results(cfg, rows, out_dir)
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Median of every metric over seeds, per (variant, proportion)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["variant"], row["proportion"]), []).append(row)
    metrics = [k for k in rows[0] if k not in ("variant", "proportion", "seed")]
    out = []
    for (variant, proportion), members in groups.items():
        summary = {"variant": variant, "proportion": proportion, "runs": len(members)}
        for key in metrics:
            summary[key] = statistics.median(r[key] for r in members)
        out.append(summary)
    return out


def leaf_grid(cfg: ExperimentConfig, rows: list[dict], levels: int | None = None) -> dict:
    """``{variant: {proportion: median finest-level OA}}``."""
    summary = summarize(rows)
    if levels is None:
        levels = max(int(k.split("_")[1]) for k in rows[0] if k.startswith("level_")) + 1
    key = f"level_{levels - 1}_oa"
    grid = {v: {} for v in cfg.variants}
    for s in summary:
        grid[s["variant"]][s["proportion"]] = s[key]
    return grid


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell_text(v) for k, v in row.items()})


def _cell_text(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_results(cfg: ExperimentConfig, rows: list[dict], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results_long.csv", rows)
    _write_csv(out / "results_summary.csv", summarize(rows))
    grid = leaf_grid(cfg, rows)
    grid_rows = []
    for variant in cfg.variants:
        entry = {"variant": variant}
        for p in cfg.proportions:
            entry[f"{round(100 * p)}%"] = grid[variant][p]
        grid_rows.append(entry)
    _write_csv(out / "grid.csv", grid_rows)
    inputs = {}
    for name in ("taxonomy", "train_data", "test_data"):
        path = getattr(cfg, name)
        if path is not None:
            inputs[name] = {"path": os.fspath(path), "sha256": sha256_file(path)}
    manifest = {"command": "experiment", "config": dataclasses.asdict(cfg), "inputs": inputs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
