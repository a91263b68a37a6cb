"""Acceptance criteria, one test per criterion.

A PASS/FAIL line per criterion is printed at the end of the session (see
conftest.py). Criterion 7 and 9 read real CIFAR-10 from CIFAR10_DIR when it is
set and otherwise fall back to the synthetic stand-in and a format fixture.
"""

import csv
import importlib.util
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hybridtrain.cli import main, render_tables
from hybridtrain.data import SplitSpec, load_cifar10, make_synthetic, split_indices, stratified_split
from hybridtrain.evolution import (EvolutionConfig, Individual, Population, block_bounds, crossover,
                                   evaluate_members, init_population, make_offspring, mutate_per_value,
                                   run_generation)
from hybridtrain.nn import build_model, small_conv_net
from hybridtrain.tensor import RngStream
from hybridtrain.trainer import TrainConfig, run_single

from gradcheck import check_gradients_per_layer

ROOT = Path(__file__).resolve().parents[1]
CIFAR10_DIR = os.environ.get("CIFAR10_DIR")

TITLES = {
    1: "Table I/II report schemas",
    2: "elitism invariants over 200 randomized runs (< 60 s)",
    3: "block crossover vs. slicing oracle, l <= 30, m <= 5",
    4: "operator statistics (per-value fraction, offspring frequencies)",
    5: "gradient check on SmallConvNet 3x16x16 (< 2 min)",
    6: "post-event validation accuracy never drops (3 seeds)",
    7: "desk-scale replication: hybrid val >= regular, hybrid wall > regular",
    8: "determinism of metrics CSV incl. parallel fitness",
    9: "CIFAR-10 loader histogram and 4/1/1 split counts",
}
NOTES: dict[int, str] = {}


def _load_script(name):
    spec = importlib.util.spec_from_file_location(name, ROOT / "scripts" / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


# 1 --------------------------------------------------------------------------------

def _reference_report():
    """Report dict holding the published VGG16 numbers, as fractions."""
    table1 = {50: ([88.09, 88.12, 88.18, 88.18, 88.21], [.25, .23, .21, .21, .19], (87.88, .32)),
              100: ([88.63, 88.65, 88.67, 88.70, 88.71], [.13, .13, .12, .11, .12], (88.00, .64))}
    hybrid, regular = [], []
    for epoch, (means, stds, reg) in table1.items():
        gens = [[m / 100, s / 100] for m, s in zip(means, stds)]
        hybrid.append({"epoch": epoch, "val_acc": gens[-1], "generations": gens})
        regular.append({"epoch": epoch, "val_acc": [reg[0] / 100, reg[1] / 100]})
    summary = {"hybrid": {"val_acc": [.8877, .0040], "test_acc": [.8841, .0043], "wall_s": [9780.98, 0.0],
                          "n_runs": 3},
               "regular": {"val_acc": [.8845, .0015], "test_acc": [.8780, .0004], "wall_s": [2363.78, 0.0],
                           "n_runs": 3}}
    return {"seeds": [1, 2, 3], "generations": 5, "complete": True, "errors": [], "summary": summary,
            "per_epoch": {"hybrid": hybrid, "regular": regular}}


def test_criterion_1_report_schemas():
    lines = render_tables(_reference_report()).splitlines()
    assert lines[0].startswith("Table I")
    assert lines[1] == "Epoch | Hybrid gen 1 | Hybrid gen 2 | Hybrid gen 3 | Hybrid gen 4 | Hybrid gen 5 | Regular"
    assert lines[2] == ("50 | 88.09 ± 0.25 | 88.12 ± 0.23 | 88.18 ± 0.21 | 88.18 ± 0.21 | 88.21 ± 0.19 | "
                        "87.88 ± 0.32")
    assert lines[3].startswith("100 | 88.63 ± 0.13") and lines[3].endswith("88.00 ± 0.64")
    assert lines[5].startswith("Table II")
    assert lines[6] == "Method | Validation Accuracy (%) | Test Accuracy (%) | Time Cost (s)"
    assert lines[7] == "Hybrid Method | 88.77 ± 0.40 | 88.41 ± 0.43 | 9780.98"
    assert lines[8] == "Regular Method | 88.45 ± 0.15 | 87.80 ± 0.04 | 2363.78"
    NOTES[1] = "published full-scale values re-rendered exactly; the full-scale numbers themselves are not reproduced"


# 2 --------------------------------------------------------------------------------

def _random_setup(rng):
    length = int(rng.integers(1, 201))
    pop = int(rng.integers(2, 31))
    frac = float(rng.uniform(0.1, 1.0))
    cfg = EvolutionConfig(pop_size=pop, generations=int(rng.integers(1, 6)), parent_fraction=frac)
    if cfg.pool_size < 2:
        cfg.parent_fraction = 1.0
    cfg.parents = int(rng.integers(2, cfg.pool_size + 1))
    mix = rng.dirichlet(np.ones(3))
    cfg.p_per_value, cfg.p_block = float(mix[0]), float(mix[1])
    cfg.p_full_array = 1.0 - cfg.p_per_value - cfg.p_block
    cfg.p_crossover, cfg.p_mutation = float(rng.uniform()), float(rng.uniform())
    cfg.mag_op, cfg.mag_init = float(rng.uniform()), float(rng.uniform())
    cfg.p_value = float(rng.uniform(0, 0.5))
    cfg.blocks = int(rng.integers(1, 20))
    cfg.full_array_uses_init_mag = bool(rng.integers(2))
    cfg.validate()
    target = rng.normal(size=length)

    def distance(w):
        return -float(np.sum((w - target) ** 2))

    def sign_agreement(w):  # coarse, so ties are common
        return float(np.mean(np.sign(w) == np.sign(target)))

    def flat(w):
        return 0.0

    fitness = (distance, sign_agreement, flat)[int(rng.integers(3))]
    return rng.normal(size=length), fitness, cfg


def test_criterion_2_elitism_invariants():
    t0 = time.perf_counter()
    violations = 0
    master = np.random.default_rng(2024)
    for run in range(200):
        w0, fitness, cfg = _random_setup(master)
        rng = RngStream(run)
        pop = init_population(w0, cfg, rng)
        evaluate_members(pop.members, fitness)
        for _ in range(cfg.generations):
            elite = pop.best()
            nxt = run_generation(pop, fitness, cfg, rng)
            if nxt.best().fitness < elite.fitness:
                violations += 1
            if not any(m.genome.tobytes() == elite.genome.tobytes() for m in nxt.members):
                violations += 1
            pop = nxt
    elapsed = time.perf_counter() - t0
    NOTES[2] = f"{violations} violations, {elapsed:.1f}s"
    assert violations == 0
    assert elapsed < 60


# 3 --------------------------------------------------------------------------------

def test_criterion_3_crossover_oracle():
    t0 = time.perf_counter()
    mismatches = cases = 0
    for length in range(1, 31):
        for m in range(1, min(5, length) + 1):
            parents = [np.full(length, float(p)) + np.arange(length) / 1000 for p in range(m)]
            child = crossover(parents)
            # brute force: position i belongs to block min(i // (l // m), m - 1)
            k = length // m
            expected = np.array([parents[min(i // k, m - 1)][i] for i in range(length)])
            cases += 1
            mismatches += int(not np.array_equal(child, expected))
            bounds = block_bounds(length, m)
            mismatches += int(bounds[0][0] != 0 or bounds[-1][1] != length
                              or any(a[1] != b[0] for a, b in zip(bounds, bounds[1:])))
    NOTES[3] = f"{cases} (l, m) cases, {mismatches} mismatches, {time.perf_counter() - t0:.2f}s"
    assert mismatches == 0


# 4 --------------------------------------------------------------------------------

def test_criterion_4_operator_statistics():
    fractions = []
    for seed in (0, 1, 2):
        w = RngStream(100 + seed).normal(100_000) + 3.0  # bounded away from 0 so every hit is visible
        out = mutate_per_value(w, 0.05, 0.05, RngStream(seed))
        fractions.append(np.mean(out != w))
    assert all(abs(f - 0.05) <= 0.005 for f in fractions), fractions

    cfg = EvolutionConfig(pop_size=10)
    members = [Individual(np.arange(20.0) + k, fitness=float(k), birth=k) for k in range(10)]
    pop = Population(members, 0)
    log = []
    rng = RngStream(7)
    for j in range(10_000):
        make_offspring(pop, cfg, rng.substream(1, j), log)
    first_cx = np.mean([e["first_crossover"] for e in log])
    first_mut = np.mean([e["first_mutation"] for e in log])
    muts = [e["mutation"] for e in log if e["mutation"]]
    mix = {name: muts.count(name) / len(muts) for name in ("per_value", "block", "full_array")}
    NOTES[4] = (f"per-value fractions {', '.join(f'{f:.5f}' for f in fractions)}; crossover {first_cx:.4f}, "
                f"mutation {first_mut:.4f}, mix " + ", ".join(f"{k} {v:.4f}" for k, v in mix.items()))
    tol = 0.015
    assert abs(first_cx - cfg.p_crossover) <= tol
    assert abs(first_mut - cfg.p_mutation) <= tol
    for name, p in zip(("per_value", "block", "full_array"), cfg.mutation_mix):
        assert abs(mix[name] - p) <= tol


# 5 --------------------------------------------------------------------------------

def test_criterion_5_gradient_check():
    t0 = time.perf_counter()
    model = build_model(small_conv_net((3, 16, 16), 10), RngStream(5))
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, size=(4, 3, 16, 16))
    y = rng.integers(0, 10, 4)
    checked, failed, worst, exempt = check_gradients_per_layer(model, x, y, per_layer=100, step=1e-5,
                                                               rel_tol=1e-4, abs_floor=1e-6)
    elapsed = time.perf_counter() - t0
    NOTES[5] = (f"{checked} entries ({exempt} below the 1e-6 magnitude floor), {failed} failed, "
                f"worst relative error {worst:.2e}, {elapsed:.1f}s")
    assert checked == 300 and failed == 0
    assert elapsed < 120


# 6 --------------------------------------------------------------------------------

def test_criterion_6_post_event_non_degradation():
    data = stratified_split(make_synthetic(5, 60, 8, seed=1, noise=0.8, contrast=0.5),
                            SplitSpec.from_ratios(4, 1, 1))
    events = violations = 0
    for seed in (1, 2, 3):
        cfg = TrainConfig(warmup_epochs=2, evolve_every=2, max_epochs=12, learning_rate=0.05, batch_size=16,
                          seed=seed, evolution=EvolutionConfig(pop_size=12, generations=3))
        _, result = run_single("hybrid", data, cfg)
        for rec in result.records:
            if rec.evolution_trace is not None:
                events += 1
                violations += rec.val_acc < rec.pre_evolution_val_acc
    NOTES[6] = f"{events} events over 3 seeds, {violations} drops"
    assert events == 18 and violations == 0


# 7 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_desk_replication(tmp_path):
    desk = _load_script("run_desk_replication")
    t0 = time.perf_counter()
    code, report = desk.replicate(tmp_path / "desk", CIFAR10_DIR)
    elapsed = time.perf_counter() - t0
    assert code == 0 and report["complete"]
    v = desk.verdict(report)
    source = "CIFAR-10 subset" if CIFAR10_DIR else "synthetic fallback"
    NOTES[7] = (f"{source}: val hybrid {v['hybrid_val']:.4f} vs regular {v['regular_val']:.4f}; "
                f"wall hybrid {v['hybrid_wall']:.1f}s vs regular {v['regular_wall']:.1f}s; total {elapsed / 60:.1f} min")
    for method in ("regular", "hybrid"):
        assert report["summary"][method]["n_runs"] == 3
    for row in report["per_epoch"]["hybrid"]:
        assert ("generations" in row) == (row["epoch"] in (10, 15, 20, 25, 30))
    assert v["accuracy_ok"], NOTES[7]
    assert v["cost_ok"], NOTES[7]


# 8 --------------------------------------------------------------------------------

def _metrics_without_wall(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("wall_s")
    return [r[:col] + r[col + 1:] for r in rows]


def test_criterion_8_determinism(tmp_path):
    args = ["train", "--method", "hybrid", "--data", "synthetic:classes=4,per_class=30,image_size=8,noise=0.7",
            "--epochs", "8", "--n", "2", "--y", "2", "--pop", "12", "--gens", "3", "--lr", "0.05",
            "--batch-size", "8", "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    assert main(args + ["--fitness-workers", "4", "--out", str(tmp_path / "c")]) == 0
    a = _metrics_without_wall(tmp_path / "a" / "metrics.csv")
    same = [a == _metrics_without_wall(tmp_path / d / "metrics.csv") for d in ("b", "c")]
    NOTES[8] = f"manifest rerun identical: {same[0]}, 4 fitness workers identical: {same[1]}"
    assert all(same)


# 9 --------------------------------------------------------------------------------

def _full_size_fixture(directory):
    fixture = _load_script("make_cifar_fixture")
    return fixture.make_fixture(directory, per_class_per_file=1000, seed=0)


@pytest.mark.slow
def test_criterion_9_cifar_loader(tmp_path):
    directory = Path(CIFAR10_DIR) if CIFAR10_DIR else _full_size_fixture(tmp_path)
    ds = load_cifar10(directory)
    hist = ds.histogram().tolist()
    labels = ds.labels.copy()
    shape = ds.images.shape
    del ds
    parts = split_indices(labels, SplitSpec.from_ratios(4, 1, 1, seed=0), 10)
    per_split = [np.bincount(labels[p], minlength=10).tolist() for p in parts]
    source = "CIFAR-10 at CIFAR10_DIR" if CIFAR10_DIR else "full-size format fixture (no CIFAR-10 available)"
    NOTES[9] = f"{source}: {shape[0]} images, per class {sorted(set(hist))}, split per class " \
               f"{[sorted(set(c)) for c in per_split]}"
    assert shape == (60_000, 3, 32, 32)
    assert hist == [6000] * 10
    assert per_split == [[4000] * 10, [1000] * 10, [1000] * 10]
    assert [len(p) for p in parts] == [40_000, 10_000, 10_000]
