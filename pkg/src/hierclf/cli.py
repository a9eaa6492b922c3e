"""Command-line interface: validate, gen, relabel, train, eval, experiment."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .datagen import (
    DatasetFormatError,
    SyntheticSpec,
    degrade,
    generate,
    load_dataset,
    relabel,
    relabel_selection,
    save_dataset,
)
from .experiment import ConfigError, ExperimentConfig, leaf_grid, run_experiment, sha256_file
from .hrnet import CheckpointError, HrnConfig, init_model, load_checkpoint, save_checkpoint
from .statespace import build_state_space
from .taxonomy import TaxonomyError, load_taxonomy
from .train import TrainConfig, evaluate, fit

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_TAXONOMY = 3
EXIT_DATA = 4
EXIT_MISMATCH = 5
EXIT_CONFIG = 6


class MismatchError(ValueError):
    pass


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {k: {"path": os.fspath(p), "sha256": sha256_file(p)} for k, p in inputs.items()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_pair(taxonomy_path, data_path):
    t = load_taxonomy(taxonomy_path)
    d = load_dataset(data_path)
    if d.taxonomy_digest != t.digest:
        raise MismatchError(f"{data_path} was built for a different taxonomy")
    try:
        d.validate(t)
    except (ValueError, IndexError) as exc:
        raise MismatchError(str(exc)) from None
    return t, d


def cmd_validate(args) -> int:
    t = load_taxonomy(args.taxonomy)
    ss = build_state_space(t)
    counts = "/".join(str(c) for c in t.level_counts())
    print(f"n={t.n}, rows={ss.n_rows}, levels={t.levels} ({counts})")
    print(f"state space: {ss.n_rows}x{ss.n}; leaves={len(t.leaves)}; uniform={t.is_uniform}")
    if args.dump_state_space:
        Path(args.dump_state_space).write_text(ss.to_csv(t))
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        branching=_ints(args.branching),
        input_dim=args.input_dim,
        separations=_floats(args.separations),
        samples_per_leaf=args.samples_per_leaf,
        test_samples_per_leaf=args.test_samples_per_leaf,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    t, train, test = generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "taxonomy.tsv").write_text(t.to_text(), encoding="utf-8")
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    _write_manifest(out, "gen", dataclasses.asdict(spec), {})
    print(f"wrote {len(train)} train / {len(test)} test samples, n={t.n}, to {out}")
    return EXIT_OK


def cmd_relabel(args) -> int:
    t, d = _load_pair(args.taxonomy, args.data)
    selected = relabel_selection(d, t, args.proportion, args.seed)
    out = relabel(d, t, args.proportion, args.seed)
    if args.degrade_factor:
        out = degrade(out, selected, args.degrade_factor, mode=args.degrade_mode, seed=args.seed)
    save_dataset(out, args.out)
    print(f"relabeled {selected.size} of {len(d)} samples")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        trunk_lr_ratio=args.trunk_lr_ratio,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        seed=args.seed,
        reduction=args.reduction,
        variant=args.variant,
        ce_weight=args.ce_weight,
        val_fraction=args.val_fraction,
    )


LOG_FIELDS = ("epoch", "lr", "loss", "hier_loss", "ce_loss")


def cmd_train(args) -> int:
    t, d = _load_pair(args.taxonomy, args.data)
    cfg = _train_config(args)
    model_cfg = HrnConfig(d.input_dim, t.levels, _ints(args.trunk_dims), args.block_dim, args.seed)
    model = init_model(model_cfg, t)
    model.meta = {"variant": cfg.variant, "train": dataclasses.asdict(cfg)}
    result = fit(model, d, t, build_state_space(t), cfg)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.bin")
    with open(out / "train_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            list(LOG_FIELDS) + [f"val_level_{lv}_oa" for lv in range(t.levels)] + ["val_au_prc"]
        )
        for r in result.history:
            writer.writerow(
                [r.epoch, f"{r.lr:.10g}", f"{r.loss:.10g}", f"{r.hier_loss:.10g}", f"{r.ce_loss:.10g}"]
                + [f"{v:.10g}" for v in r.level_oa]
                + [f"{r.au_prc:.10g}"]
            )
    _write_manifest(
        out,
        "train",
        {"train": dataclasses.asdict(cfg), "model": dataclasses.asdict(model_cfg)},
        {"taxonomy": args.taxonomy, "data": args.data},
    )
    print(f"trained {cfg.epochs} epochs; final loss {result.history[-1].loss:.6f}")
    return EXIT_OK


def metrics_header(levels: int) -> list[str]:
    return [f"level_{lv}_oa" for lv in range(levels)] + ["au_prc"]


def cmd_eval(args) -> int:
    t, d = _load_pair(args.taxonomy, args.data)
    model = load_checkpoint(args.checkpoint, t)
    if model.config.input_dim != d.input_dim:
        raise MismatchError(
            f"checkpoint expects {model.config.input_dim} features, data has {d.input_dim}"
        )
    variant = model.meta.get("variant", "combinatorial")
    report = evaluate(model, d, t, build_state_space(t), variant)
    values = report["level_oa"] + [report["au_prc"]]
    header = metrics_header(t.levels)
    lines = [",".join(header), ",".join(f"{v:.6f}" for v in values)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = ExperimentConfig.from_text(fh.read())
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    rows = run_experiment(cfg, args.out_dir)
    grid = leaf_grid(cfg, rows)
    print("variant," + ",".join(f"{round(100 * p)}%" for p in cfg.proportions))
    for variant, cells in grid.items():
        print(variant + "," + ",".join(f"{100 * cells[p]:.2f}" for p in cfg.proportions))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierclf", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0 if name != "experiment" else None)
        return p

    p = add("validate", cmd_validate, "check a taxonomy file and print its sizes")
    p.add_argument("taxonomy")
    p.add_argument("--dump-state-space", metavar="CSV", help="write the state-space matrix")

    p = add("gen", cmd_gen, "generate a synthetic hierarchical dataset")
    p.add_argument("--branching", default="4,4,4")
    p.add_argument("--input-dim", type=int, default=16)
    p.add_argument("--separations", default="1,1,1")
    p.add_argument("--samples-per-leaf", type=int, default=20)
    p.add_argument("--test-samples-per-leaf", type=int, default=20)
    p.add_argument("--noise-sigma", type=float, default=0.125)
    p.add_argument("--out-dir", required=True)

    p = add("relabel", cmd_relabel, "relabel a share of each leaf class to its parent")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--proportion", type=float, required=True)
    p.add_argument("--degrade-factor", type=int, default=0)
    p.add_argument("--degrade-mode", choices=("block", "noise"), default="block")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a model and write checkpoint and log")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", default="combinatorial",
                   choices=("combinatorial", "hier_only", "leaf_ce_only", "per_node_binary_ce"))
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--trunk-lr-ratio", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--reduction", choices=("mean", "sum"), default="mean")
    p.add_argument("--ce-weight", type=float, default=1.0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--trunk-dims", default="64")
    p.add_argument("--block-dim", type=int, default=32)

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="metrics CSV path")

    p = add("experiment", cmd_experiment, "run a relabeling sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except TaxonomyError as exc:
        print(f"error: invalid taxonomy: {exc}", file=sys.stderr)
        return EXIT_TAXONOMY
    except (MismatchError, CheckpointError) as exc:
        print(f"error: incompatible inputs: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except DatasetFormatError as exc:
        print(f"error: bad dataset file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
