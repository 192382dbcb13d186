"""The twelve acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the
terminal summary at the end of the pytest run.
"""

import csv
import time

import numpy as np
import pytest

from lemda import gradcore as gc
from lemda.augnet import MlpVae, augment
from lemda.baselines import manifold_mixup, mixgen_style, mixup_extended
from lemda.datagen import gen_complementary, gen_figure3_scenario
from lemda.fusionnet import CONTINUOUS, PAD, TOKENS, ModalitySpec, MultimodalBatch, TaskNetwork
from lemda.harness import ExperimentConfig, ablation_suite, measure_throughput, render_figure3, run
from lemda.trainer import LossWeights, consistency_mask, f_update, g_update, train, TrainConfig
from gradcases import NETWORK_CASES, OP_CASES, TOL, worst_error
from probes import single_modality_accuracy

SEEDS = [0, 1, 2, 3, 4]


def test_01_gradient_oracle(verdict):
    t0 = time.perf_counter()
    worst = {}
    for name, build in {**OP_CASES, **NETWORK_CASES}.items():
        worst[name] = max(worst_error(build, seed) for seed in range(20))
    elapsed = time.perf_counter() - t0
    bad = [k for k, v in worst.items() if not v <= TOL]
    ok = not bad and elapsed <= 120
    verdict(1, ok, f"{len(worst)} cases x 20 seeds, worst rel err {max(worst.values()):.1e} "
                   f"({max(worst, key=worst.get)}), {elapsed:.0f}s; failing: {bad or 'none'}")
    assert ok


def _small_setup(seed):
    d = gen_complementary(64, 0.8, seed=seed, split=(32, 16, 16))
    rng = np.random.default_rng(seed)
    f = TaskNetwork(d.specs, 2, rng, hidden=16)
    g = MlpVae(f.feature_dims, rng, hidden=16)
    return d, f, g


def _params(m):
    return [p.data.copy() for p in m.parameters()]


def _equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def test_02_update_isolation(verdict):
    t0 = time.perf_counter()
    d, f, g = _small_setup(0)
    opt_f, opt_g = gc.Adam(f.parameters(), 1e-2), gc.Adam(g.parameters(), 1e-2)
    rng = np.random.default_rng(0)
    chooser = np.random.default_rng(1)
    violations = 0
    for _ in range(100):
        batch = d.batch(chooser.choice(d.train_idx, 16, replace=False))
        f0, g0 = _params(f), _params(g)
        if chooser.random() < 0.5:
            g_update(f, g, batch, LossWeights(), opt_g, rng)
            violations += not _equal(f0, _params(f))
        else:
            f_update(f, g, batch, opt_f, rng)
            violations += not _equal(g0, _params(g))
    zero = gc.Adam(g.parameters(), 1e-2)
    g0 = _params(g)
    for _ in range(10):
        g_update(f, g, d.split("train"), LossWeights(0.0, 0.0, 0.0), zero, rng)
    fixed = _equal(g0, _params(g))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and fixed and elapsed <= 60
    verdict(2, ok, f"100 random steps, {violations} isolation violations; zero-weight G fixed point: "
                   f"{fixed}; {elapsed:.1f}s")
    assert ok


def _ce_aug(f, g, batch, seed):
    with gc.no_grad():
        aug, _ = augment(g, f.forward_before(batch), np.random.default_rng(seed), "train")
        return gc.cross_entropy(f.forward_after(aug), batch.labels).item()


def test_03_adversarial_direction(verdict):
    ascents = 0
    for seed in range(20):
        d, f, g = _small_setup(seed)
        batch = d.split("train")
        before = _ce_aug(f, g, batch, 100 + seed)
        # the same seed replays the same dropout masks and latent draws
        g_update(f, g, batch, LossWeights(1.0, 0.0, 0.0), gc.Adam(g.parameters(), 1e-3),
                 np.random.default_rng(100 + seed))
        ascents += _ce_aug(f, g, batch, 100 + seed) >= before
    ok = ascents >= 18
    verdict(3, ok, f"augmented cross-entropy did not decrease in {ascents}/20 trials (need >= 18)")
    assert ok


def test_04_figure3_certificate(verdict, tmp_path):
    t0 = time.perf_counter()
    _, probe = gen_figure3_scenario(0)
    svg, sidecar, drawn = render_figure3(tmp_path / "figure3.svg", seed=0)
    with open(sidecar) as fh:
        rows = {r["point"]: r for r in csv.DictReader(fh)}
    c1, c2 = float(rows["D1"]["consistency"]), float(rows["D2"]["consistency"])
    l1, l2 = float(rows["D1"]["task_loss"]), float(rows["D2"]["task_loss"])
    dist_gap = abs(np.linalg.norm(probe.d1 - probe.src) - np.linalg.norm(probe.d2 - probe.src))
    loss_gap = abs(l1 - l2) / max(l1, l2)
    same_scenario = np.array_equal(drawn.d1, probe.d1) and np.array_equal(drawn.d2, probe.d2)
    elapsed = time.perf_counter() - t0
    ok = c2 > c1 and dist_gap <= 1e-9 and loss_gap <= 0.05 and same_scenario and elapsed <= 60
    verdict(4, ok, f"consistency D1={c1:.4g} D2={c2:.4g}; |dist gap|={dist_gap:.1e}; "
                   f"task-loss gap {100 * loss_gap:.2g}%; {elapsed:.1f}s")
    assert ok


def test_05_confidence_mask(verdict):
    d, f, g = _small_setup(5)
    fractions = []
    for seed in range(10):
        batch = d.batch(np.random.default_rng(seed).choice(d.train_idx, 8, replace=False))
        rep = g_update(f, g, batch, LossWeights(alpha_conf=0.0), gc.Adam(g.parameters()),
                       np.random.default_rng(seed))
        fractions.append(rep.mask_fraction)
    all_in = all(x == 1.0 for x in fractions)
    row_out = not consistency_mask(np.array([[0.4, 0.35, 0.25]]), 0.5)[0]
    ok = all_in and row_out
    verdict(5, ok, f"alpha=0 mask fractions {sorted(set(fractions))}; max-prob-0.4 row excluded at "
                   f"alpha=0.5: {row_out}")
    assert ok


@pytest.fixture(scope="module")
def complementary_runs(tmp_path_factory):
    """Baseline and LeMDA on the complementary task, plus the regularizer grid."""
    out = tmp_path_factory.mktemp("complementary")
    base = ExperimentConfig(seeds=SEEDS, output_dir=str(out / "none"))
    t0 = time.perf_counter()
    none = run(base)
    lemda = run(base.replace(augmentation="lemda_mlp_vae", output_dir=str(out / "lemda")))
    elapsed = time.perf_counter() - t0
    rows = ablation_suite(base.replace(augmentation="lemda_mlp_vae", output_dir=str(out / "abl")),
                          "regularizer")
    return none, lemda, elapsed, {r["variant"]: r for r in rows}


def test_06_complementary_gain(verdict, complementary_runs):
    none, lemda, elapsed, _ = complementary_runs
    a0, a1 = none.accuracies, lemda.accuracies
    gains = a1 - a0
    wins = int((gains >= 0.01 - 1e-12).sum())
    in_band = 0.75 <= a0.mean() <= 0.90
    ok = in_band and a1.mean() >= a0.mean() and wins >= 3 and elapsed <= 600
    verdict(6, ok, f"baseline {a0.mean():.4f} (band 0.75-0.90: {in_band}), LeMDA {a1.mean():.4f}; "
                   f"per-seed gain {np.round(100 * gains, 1).tolist()} points, {wins}/5 >= +1; "
                   f"{elapsed:.0f}s")
    assert ok


def test_07_regularizer_ablation(verdict, complementary_runs):
    _, _, _, rows = complementary_runs
    cells = {k: rows[k]["mean_accuracy"] for k in ("none", "consistency", "l2", "consistency+l2")}
    ok = cells["consistency"] >= cells["none"]
    verdict(7, ok, "mean accuracy " + ", ".join(f"{k}={v:.4f}" for k, v in cells.items()))
    assert ok


def test_08_single_modality_insufficiency(verdict):
    t0 = time.perf_counter()
    d = gen_complementary(2400, 0.8, seed=0, split=(200, 200, 2000))
    probes = [single_modality_accuracy(d, m) for m in range(len(d.specs))]
    f = TaskNetwork(d.specs, 2, np.random.default_rng(1000), hidden=64)
    train(f, None, d, TrainConfig(epochs=100, lr_f=3e-3))
    test = d.split("test")
    fusion = float((f.predict(test)[0] == test.labels).mean())
    elapsed = time.perf_counter() - t0
    ok = all(0.45 <= p <= 0.55 for p in probes) and fusion > 0.70 and elapsed <= 120
    verdict(8, ok, f"single-modality probes {[round(p, 4) for p in probes]}, fusion {fusion:.4f}; "
                   f"{elapsed:.0f}s")
    assert ok


def test_09_throughput_ordering(verdict, tmp_path):
    cfg = ExperimentConfig(output_dir=str(tmp_path))
    plain = measure_throughput(cfg, 5, 30)
    lemda = measure_throughput(cfg.replace(augmentation="lemda_mlp_vae"), 5, 30)
    ok = lemda["steps_per_second"] < plain["steps_per_second"]
    verdict(9, ok, f"none {plain['steps_per_second']:.1f} steps/s, "
                   f"LeMDA {lemda['steps_per_second']:.1f} steps/s")
    assert ok


def test_10_determinism(verdict, tmp_path):
    cfg = ExperimentConfig(augmentation="lemda_mlp_vae", epochs=5, seeds=[0, 1],
                           output_dir=str(tmp_path / "a"))
    run(cfg)
    run(cfg.replace(output_dir=str(tmp_path / "b")))
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    ok = a == b
    verdict(10, ok, f"two runs of the same config, metrics.csv byte-identical: {ok} ({len(a)} bytes)")
    assert ok


def test_11_vae_kl_closed_form(verdict):
    one = gc.gaussian_kl(gc.Tensor(np.ones((1, 8))), gc.Tensor(np.zeros((1, 8)))).item()
    zero = gc.gaussian_kl(gc.Tensor(np.zeros((1, 8))), gc.Tensor(np.zeros((1, 8)))).item()
    ok = abs(one - 4.0) <= 1e-9 and zero == 0.0
    verdict(11, ok, f"KL(mu=1, log_var=0, dim=8) = {one!r}; KL(mu=0, log_var=0) = {zero!r}")
    assert ok


def test_12_baseline_units(verdict):
    specs = (ModalitySpec("vec", CONTINUOUS, 4, dim=1),
             ModalitySpec("text", TOKENS, 4, vocab_size=10, max_len=5))
    a = MultimodalBatch(specs, (np.array([[2.0]]), np.array([[1, 2, 3, PAD, PAD]])), [0])
    b = MultimodalBatch(specs, (np.array([[4.0]]), np.array([[4, 5, 6, 7, PAD]])), [1])
    rng = np.random.default_rng(0)
    checks = {}
    end = mixup_extended(a, b, 0.8, rng, 2, lam=1.0, j=0.0)
    checks["mixup lambda=1 -> a"] = np.array_equal(end.values[0], a.values[0]) and \
        np.array_equal(end.soft_labels, [[1.0, 0.0]])
    end0 = mixup_extended(a, b, 0.8, rng, 2, lam=0.0, j=0.0)
    checks["mixup lambda=0 -> b"] = np.array_equal(end0.values[0], b.values[0])
    checks["mixup soft label 0.5"] = np.array_equal(
        mixup_extended(a, b, 0.8, rng, 2, lam=0.5, j=0.0).soft_labels, [[0.5, 0.5]])
    checks["j=0.9 > alpha=0.8 picks b"] = np.array_equal(
        mixup_extended(a, b, 0.8, rng, 2, lam=0.5, j=0.9).values[1], b.values[1])
    checks["j=0.7 < alpha=0.8 picks a"] = np.array_equal(
        mixup_extended(a, b, 0.8, rng, 2, lam=0.5, j=0.7).values[1], a.values[1])
    mixed, soft = manifold_mixup([gc.Tensor([[0.0]])], [gc.Tensor([[2.0]])], [0], [1], 0.8, rng, 2, lam=0.5)
    checks["manifold 0,2 at 0.5 -> 1"] = mixed[0].data[0, 0] == 1.0 and soft.sum() == 1.0
    mixed, soft = manifold_mixup([gc.Tensor([[0.0]])], [gc.Tensor([[2.0]])], [0], [1], 0.8, rng, 2, lam=1.0)
    checks["manifold lambda=1 -> a"] = mixed[0].data[0, 0] == 0.0 and np.array_equal(soft, [[1.0, 0.0]])
    mg = mixgen_style(a, b, 0.5)
    checks["mixgen 2,4 -> 3"] = mg.values[0][0, 0] == 3.0
    checks["mixgen concat len 3+4 -> first 5"] = np.array_equal(mg.values[1], [[1, 2, 3, 4, 5]])
    mg1 = mixgen_style(a, b, 1.0)
    checks["mixgen lambda=1 keeps a, still concatenates"] = mg1.values[0][0, 0] == 2.0 and \
        np.array_equal(mg1.values[1], [[1, 2, 3, 4, 5]])
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    verdict(12, ok, f"{len(checks) - len(failed)}/{len(checks)} exact checks; failing: {failed or 'none'}")
    assert ok
