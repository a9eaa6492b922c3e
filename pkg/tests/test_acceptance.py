"""Acceptance gate: one test per criterion, ``test_c01`` to ``test_c10``.

Each test prints a single ``PASS``/``FAIL`` line; the terminal summary
(see conftest) repeats them in one block at the end of the run.
"""
import time

import numpy as np
import pytest

from conftest import cub_like_text
from hierclf.cli import main
from hierclf.datagen import SyntheticSpec, generate, relabel
from hierclf.experiment import ExperimentConfig, leaf_grid, run_experiment, summarize
from hierclf.hrnet import HrnConfig, init_model, forward
from hierclf.inference import accumulate_marginals, batch_row_probs, marginal_matrix, marginals
from hierclf.loss import ce_loss, hier_loss, combinatorial_loss, total_loss
from hierclf.metrics import average_prc, per_level_oa
from hierclf.statespace import brute_force_state_space, build_state_space
from hierclf.taxonomy import Taxonomy, parse_taxonomy, random_taxonomy
from hierclf.train import TrainConfig, fit
from oracles import (
    brute_force_marginals,
    central_difference,
    max_relative_error,
    network_gradient_error,
)


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    assert ok, detail


def test_c01_state_space_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = 0
    for i in range(100):
        t = random_taxonomy(int(rng.integers(1, 17)), rng)
        rows = {tuple(int(v) for v in r) for r in build_state_space(t).s_matrix}
        mismatches += rows != brute_force_state_space(t)
    bad_counts = 0
    for i in range(100):
        t = random_taxonomy(int(rng.integers(1, 201)), rng)
        ss = build_state_space(t)
        bad_counts += ss.s_matrix.shape != (t.n + 1, t.n)
    cub = build_state_space(parse_taxonomy(cub_like_text()))
    bad_counts += cub.n_rows != 252
    elapsed = time.perf_counter() - t0
    report(
        "c01 state-space oracle",
        mismatches == 0 and bad_counts == 0 and elapsed < 10,
        f"{mismatches} set mismatches, {bad_counts} bad row counts, {elapsed:.2f}s",
    )


def test_c02_marginal_oracle():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        t = random_taxonomy(int(rng.integers(1, 15)), rng)
        x = rng.uniform(size=t.n)
        expected, log_z = brute_force_marginals(t, x)
        got = marginals(build_state_space(t), x)
        worst = max(worst, np.max(np.abs(got.values - expected)), abs(got.log_partition - log_z))
    report("c02 marginal oracle", worst <= 1e-9, f"max abs error {worst:.2e}")


def test_c03_marginal_invariants():
    rng = np.random.default_rng(303)
    worst_norm = worst_edge = worst_split = 0.0
    for _ in range(1000):
        t = random_taxonomy(int(rng.integers(1, 40)), rng)
        ss = build_state_space(t)
        x = rng.uniform(size=(t.n, 1))
        if rng.random() < 0.2:
            x = rng.choice([0.0, 1.0], size=(t.n, 1))
        probs, _ = batch_row_probs(ss, x)
        probs = probs[:, 0]
        marg = accumulate_marginals(ss, probs[:, None])[:, 0]
        worst_norm = max(worst_norm, abs(probs.sum() - 1.0))
        for v in range(t.n):
            kids = list(t.children(v))
            if kids:
                worst_edge = max(worst_edge, max(marg[kids]) - marg[v])
            split = probs[ss.row_of(v)] + marg[kids].sum()
            worst_split = max(worst_split, abs(marg[v] - split))
    ok = worst_norm <= 1e-12 and worst_edge <= 1e-12 and worst_split <= 1e-12
    report(
        "c03 marginal invariants",
        ok,
        f"normalization {worst_norm:.1e}, child-parent {worst_edge:.1e}, split {worst_split:.1e}",
    )


def test_c04_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = {"hier_loss": 0.0, "ce_loss": 0.0, "total_loss": 0.0, "hrnet": 0.0}
    for i in range(50):
        t = random_taxonomy(int(rng.integers(2, 13)), rng)
        ss = build_state_space(t)
        x = rng.uniform(0.05, 0.95, size=t.n)
        g = int(rng.integers(t.n))
        _, grad = hier_loss(ss, x, g)
        fd = central_difference(lambda v: hier_loss(ss, v, g)[0], x)
        worst["hier_loss"] = max(worst["hier_loss"], max_relative_error(grad, fd))

        z = rng.normal(size=len(ss.leaves))
        target = int(rng.integers(len(ss.leaves)))
        _, grad = ce_loss(z, target)
        fd = central_difference(lambda v: ce_loss(v, target)[0], z)
        worst["ce_loss"] = max(worst["ce_loss"], max_relative_error(grad, fd))

        k = 3
        outs = rng.uniform(0.05, 0.95, size=(k, t.n))
        logits = rng.normal(size=(k, len(ss.leaves)))
        observed = rng.integers(t.n, size=k)
        lv = total_loss(ss, outs, logits, observed)
        fd_x = central_difference(lambda v: total_loss(ss, v, logits, observed).total, outs)
        fd_z = central_difference(lambda v: total_loss(ss, outs, v, observed).total, logits)
        worst["total_loss"] = max(
            worst["total_loss"],
            max_relative_error(lv.grad_hier, fd_x),
            max_relative_error(lv.grad_ce, fd_z),
        )

    seven = Taxonomy.from_parents([None, 0, 0, 1, 1, 2, 2])
    for i in range(50):
        cfg = HrnConfig(4, 3, (5,), 5, seed=i)
        worst["hrnet"] = max(worst["hrnet"], network_gradient_error(seven, cfg, i))
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    report("c04 gradient checks", max(worst.values()) < 1e-4 and elapsed < 60, detail)


def test_c05_hand_case(toy, toy_ss):
    x = np.array([0.5, 0.5, 0.5])
    m = marginals(toy_ss, x).values
    brute, _ = brute_force_marginals(toy, x)
    l_hier, _ = hier_loss(toy_ss, x, 1)
    l_com = combinatorial_loss(toy_ss, x, np.zeros(2), 1).total
    checks = [
        abs(m[0] - 0.87632) <= 1e-5,
        abs(m[1] - 0.33621) <= 1e-5,
        abs(l_hier - 1.0901) <= 1e-4,
        abs(l_com - 1.7832) <= 1e-4,
        np.allclose(m, brute, rtol=0, atol=1e-15),
        abs(l_hier + np.log(brute[1])) <= 1e-12,
    ]
    detail = f"Pr(A)={m[0]:.6f} Pr(B)={m[1]:.6f} L_hier={l_hier:.6f} L_com={l_com:.6f}"
    report("c05 hand-case regression", all(checks), detail)


def test_c06_metric_fixtures(toy, seven):
    truth = [3, 4, 5, 6, 3]
    perfect = np.zeros((5, seven.n))
    for j, leaf in enumerate(truth):
        perfect[j, seven.path_to(leaf)] = 1.0
    area = average_prc(perfect, truth, seven).area
    curve = average_prc([[0.9, 0.6, 0.3]], [[0, 1]], toy)
    expected = np.array([[1.0, 0.5], [1.0, 1.0], [2 / 3, 1.0]])
    points_ok = curve.points.shape == expected.shape and np.array_equal(curve.points, expected)
    tie = per_level_oa([[1.0, 0.5, 0.5], [1.0, 0.5, 0.5]], [1, 2], toy)
    ok = area == 1.0 and points_ok and curve.area == 1.0 and tie == [1.0, 0.5]
    report("c06 metric fixtures", ok, f"perfect={area}, hand points={curve.points.tolist()}, tie={tie}")


def _violations(scores, t):
    """Count (record, edge, threshold) triples predicting a child without its parent."""
    taus = np.unique(np.concatenate([scores.ravel(), [0.0, 1.0]]))
    child = np.array([v for v in range(t.n) if t.parents[v] is not None])
    parent = np.array([t.parents[v] for v in child])
    count = 0
    for chunk in np.array_split(taus, max(1, len(taus) // 256)):
        pred = scores[:, :, None] >= chunk[None, None, :]
        count += int(np.sum(pred[:, child] & ~pred[:, parent]))
    return count, len(taus)


def test_c07_no_hierarchy_violation():
    spec = SyntheticSpec(branching=(3, 3), input_dim=8, separations=(1.0, 1.0),
                         noise_sigma=0.25, samples_per_leaf=20, test_samples_per_leaf=112, seed=7)
    t, train, test = generate(spec)
    ss = build_state_space(t)
    counts = {}
    for variant in ("combinatorial", "hier_only"):
        model = init_model(HrnConfig(8, 2, (32,), 16, seed=7), t)
        fit(model, relabel(train, t, 0.5, seed=7), t, ss,
            TrainConfig(epochs=10, variant=variant, val_fraction=0.0, seed=7))
        outputs, _, _ = forward(model, test.features[:1000])
        scores = marginal_matrix(ss, outputs)
        counts[variant] = _violations(scores, t)
    ok = all(c == 0 for c, _ in counts.values())
    detail = "; ".join(f"{v}: {c} violations over {n} thresholds" for v, (c, n) in counts.items())
    report("c07 no hierarchy violation (1000 outputs)", ok, detail)


@pytest.mark.slow
def test_c08_relabeling_sweep(capsys):
    cfg = ExperimentConfig(seeds=(0, 1, 2))  # [4, 4, 4] tree, 5 proportions, 2 variants
    t0 = time.perf_counter()
    rows = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    grid = leaf_grid(cfg, rows)
    coarse = {
        (s["variant"], s["proportion"]): s["level_0_oa"] for s in summarize(rows)
    }
    props = cfg.proportions
    a = all(grid["combinatorial"][p] >= grid["hier_only"][p] for p in props if p >= 0.3)
    b = all(
        grid[v][p] >= grid[v][q] for v in cfg.variants for p, q in zip(props, props[1:])
    )
    c = all(abs(coarse[(v, 0.9)] - coarse[(v, 0.0)]) <= 0.10 for v in cfg.variants)
    with capsys.disabled():
        print("\nleaf-level OA, median over seeds 0-2:")
        print("variant        " + "".join(f"{round(100 * p):>8}%" for p in props))
        for v in cfg.variants:
            print(f"{v:<15}" + "".join(f"{100 * grid[v][p]:>9.2f}" for p in props))
        print("coarse OA 0% -> 90%: " + ", ".join(
            f"{v} {100 * coarse[(v, 0.0)]:.2f} -> {100 * coarse[(v, 0.9)]:.2f}" for v in cfg.variants
        ))
        print(f"sweep time {elapsed:.0f}s")
    report("c08 relabeling sweep", a and b and c and elapsed < 600,
           f"(a) {a}, (b) {b}, (c) {c}, {elapsed:.0f}s")


def test_c09_relabeling_exactness():
    failures = []
    for seed in range(5):
        t, train, _ = generate(SyntheticSpec(branching=(4, 4, 4), separations=(1, 1, 1),
                                             samples_per_leaf=20, seed=seed))
        half = relabel(train, t, 0.5, seed=seed)
        moved = half.observed != train.observed
        per_class = np.bincount(train.truth_leaf[moved], minlength=t.n)[list(t.leaves)]
        if not np.all(per_class == 10):
            failures.append(f"seed {seed}: counts {sorted(set(per_class.tolist()))}")
        if not np.all(half.observed[moved] == [t.parents[v] for v in train.truth_leaf[moved]]):
            failures.append(f"seed {seed}: relabeled to a non-parent")
        same = relabel(train, t, 0.0, seed=seed)
        if not np.array_equal(same.observed, train.observed):
            failures.append(f"seed {seed}: proportion 0 changed labels")
        for p in (0.0, 0.3, 0.5, 0.7, 0.9, 1.0):
            out = relabel(train, t, p, seed=seed)
            if not np.array_equal(out.truth_leaf, train.truth_leaf):
                failures.append(f"seed {seed}: truth changed at {p}")
    report("c09 relabeling exactness", not failures, "; ".join(failures))


def test_c10_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["gen", "--out-dir", str(data), "--seed", "3"]) == 0
    args = ["train", "--taxonomy", str(data / "taxonomy.tsv"), "--data", str(data / "train.csv"),
            "--seed", "3"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    same = {
        name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("train_log.csv", "checkpoint.bin")
    }
    report("c10 determinism", all(same.values()), ", ".join(f"{k} identical={v}" for k, v in same.items()))
