"""Seed sweeps, ablation grids and throughput measurement."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import rankdata

from .. import baselines
from .. import gradcore as gc
from ..augnet import AttentionVae, MlpVae
from ..datagen import (DatasetHandle, IngestSchema, gen_complementary, gen_perfect_correlation,
                       ingest_tabular_text)
from ..fusionnet import TaskNetwork
from ..trainer import (EPOCH_COLUMNS, DivergenceError, LossWeights, TrainConfig, _baseline_step,
                       lemda_step, train)
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("seed", "test_accuracy", "test_roc_auc", "val_accuracy", "best_epoch", "epochs_run")


@dataclass
class SeedResult:
    seed: int
    test_accuracy: float
    test_roc_auc: float
    val_accuracy: float
    best_epoch: int
    epochs_run: int
    steps: int
    train_seconds: float
    curves: list = field(default_factory=list, repr=False)

    @property
    def steps_per_second(self) -> float:
        return self.steps / self.train_seconds if self.train_seconds > 0 else float("inf")


@dataclass
class RunResult:
    config: ExperimentConfig
    seeds: List[SeedResult] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([s.test_accuracy for s in self.seeds])

    @property
    def mean_accuracy(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std_accuracy(self) -> float:
        return float(self.accuracies.std())

    @property
    def mean_throughput(self) -> float:
        return float(np.mean([s.steps_per_second for s in self.seeds]))

    def summary(self) -> str:
        auc = [s.test_roc_auc for s in self.seeds]
        lines = [
            f"augmentation={self.config.augmentation} dataset={self.config.dataset} seeds={len(self.seeds)}",
            f"  test accuracy  {self.mean_accuracy:.4f} +/- {self.std_accuracy:.4f}",
        ]
        if not np.isnan(auc).all():
            lines.append(f"  test ROC-AUC   {np.nanmean(auc):.4f} +/- {np.nanstd(auc):.4f}")
        lines.append(f"  throughput     {self.mean_throughput:.1f} steps/s")
        return "\n".join(lines)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney estimate: P(score of a positive > score of a negative), ties count half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)  # average ranks for ties
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# -- assembly ------------------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig, seed: int) -> DatasetHandle:
    data_seed = seed if cfg.data_seed < 0 else cfg.data_seed
    if cfg.dataset == "ingest":
        schema = IngestSchema(label=cfg.ingest_label, numeric=list(cfg.ingest_numeric),
                              categorical=list(cfg.ingest_categorical), text=list(cfg.ingest_text),
                              seed=data_seed, feature_dim=cfg.feature_dim)
        return ingest_tabular_text(cfg.ingest_path, schema)
    split = (cfg.n_train, cfg.n_val, cfg.n_test)
    n = sum(split)
    if cfg.dataset == "complementary":
        tn = None if cfg.token_noise < 0 else cfg.token_noise
        return gen_complementary(n, cfg.noise, data_seed, token_noise=tn, split=split,
                                 feature_dim=cfg.feature_dim)
    return gen_perfect_correlation(n, cfg.num_classes, cfg.noise, data_seed, split=split,
                                   feature_dim=cfg.feature_dim)


def build_networks(cfg: ExperimentConfig, handle: DatasetHandle, seed: int):
    # init stream is separate from the data seed and the training streams
    rng = np.random.default_rng(1000 + seed)
    f = TaskNetwork(handle.specs, handle.num_classes, rng, hidden=cfg.hidden)
    g = None
    if cfg.augmentation == "lemda_mlp_vae":
        g = MlpVae(f.feature_dims, rng, latent_dim=cfg.latent_dim, hidden=cfg.vae_hidden,
                   dropout=cfg.vae_dropout, residual=cfg.vae_residual, out_scale=cfg.vae_out_scale)
    elif cfg.augmentation == "lemda_attention_vae":
        g = AttentionVae(f.feature_dims, rng, latent_dim=cfg.latent_dim, width=cfg.attn_width,
                         layers=cfg.attn_layers, heads=cfg.attn_heads, dropout=cfg.attn_dropout,
                         residual=cfg.vae_residual, out_scale=cfg.vae_out_scale)
    return f, g


def train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    mods = frozenset(cfg.augment_modalities) or None
    kind = "lemda" if cfg.is_lemda else cfg.augmentation
    spec = baselines.BaselineSpec(cfg.augmentation if not cfg.is_lemda else "none",
                                  cfg.mixup_alpha, cfg.mixgen_lambda, mods)
    return TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr_f=cfg.lr_f, lr_g=cfg.lr_g,
        optimizer=cfg.optimizer, augmentation=kind,
        weights=LossWeights(cfg.w1, cfg.w2, cfg.w3, cfg.alpha_conf),
        regularizer=cfg.regularizer, kl_direction=cfg.kl_direction, baseline=spec,
        patience=cfg.patience, restore_best=cfg.restore_best,
        g_update_every=cfg.g_update_every, seed=seed,
    )


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Optional[Path] = None) -> SeedResult:
    handle = build_dataset(cfg, seed)
    f, g = build_networks(cfg, handle, seed)
    t0 = time.perf_counter()
    history = train(f, g, handle, train_config(cfg, seed))
    elapsed = time.perf_counter() - t0
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history.to_csv(out_dir / "history.csv", verbose=cfg.verbose)
    test = handle.split("test")
    probs = f.predict_proba(test)
    acc = float((probs.argmax(axis=1) == test.labels).mean())
    auc = roc_auc(probs[:, 1], test.labels) if handle.num_classes == 2 else float("nan")
    return SeedResult(seed, acc, auc, history.final_val_accuracy, history.best_epoch,
                      len(history.epochs), len(history.steps), elapsed,
                      [(seed,) + tuple(vars(e).values()) for e in history.epochs])


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def _write_outputs(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for s in result.seeds:
            w.writerow([_fmt(getattr(s, c)) for c in METRIC_COLUMNS])
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed",) + EPOCH_COLUMNS)
        for s in result.seeds:
            for row in s.curves:
                w.writerow([_fmt(v) for v in row])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "steps", "train_seconds", "steps_per_second"))
        for s in result.seeds:
            w.writerow([s.seed, s.steps, f"{s.train_seconds:.6f}", f"{s.steps_per_second:.3f}"])


def run(cfg: ExperimentConfig) -> RunResult:
    """Train once per seed and write metrics.csv, curves.csv, timing.csv and config.echo.

    On divergence the outputs of completed seeds are still written before the
    error propagates.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.dumps())
    result = RunResult(cfg)
    t0 = time.perf_counter()
    try:
        for seed in cfg.seeds:
            log.info("seed %d: %s on %s", seed, cfg.augmentation, cfg.dataset)
            result.seeds.append(run_seed(cfg, seed, out / f"seed_{seed}"))
    except DivergenceError:
        result.wall_clock = time.perf_counter() - t0
        _write_outputs(result, out)
        raise
    result.wall_clock = time.perf_counter() - t0
    _write_outputs(result, out)
    print(result.summary())
    return result


# -- ablations -----------------------------------------------------------------------

WEIGHT_GRID = (
    (1e-4, 0.1, 0.1),
    (1e-4, 0.01, 0.01),
    (5e-3, 0.1, 0.1),
    (5e-3, 0.01, 0.01),
    (1e-3, 0.1, 0.1),
    (1e-3, 0.01, 0.01),
)
ALPHA_GRID = (0.0, 0.3, 0.5, 0.8)
SUITES = ("regularizer", "architecture", "confidence", "weights", "single_modality")


def _lemda(cfg: ExperimentConfig) -> str:
    return cfg.augmentation if cfg.is_lemda else "lemda_mlp_vae"


def suite_cells(base: ExperimentConfig, suite: str) -> List[tuple]:
    """(variant label, extra columns, config) for every cell of an ablation table."""
    arch = _lemda(base)
    cells = []
    if suite == "regularizer":
        for reg in ("none", "consistency", "l2", "consistency+l2"):
            cells.append((reg, {"regularizer": reg}, base.replace(augmentation=arch, regularizer=reg)))
    elif suite == "architecture":
        for aug in ("none", "lemda_mlp_vae", "lemda_attention_vae"):
            cells.append((aug, {"augmentation": aug}, base.replace(augmentation=aug)))
    elif suite == "confidence":
        for a in ALPHA_GRID:
            cells.append((f"alpha={a}", {"alpha_conf": a}, base.replace(augmentation=arch, alpha_conf=a)))
    elif suite == "weights":
        for w1, w2, w3 in WEIGHT_GRID:
            cells.append((f"w=({w1},{w2},{w3})", {"w1": w1, "w2": w2, "w3": w3},
                          base.replace(augmentation=arch, w1=w1, w2=w2, w3=w3)))
    elif suite == "single_modality":
        specs = build_dataset(base, base.seeds[0]).specs
        targets = [[s.name] for s in specs] + [[s.name for s in specs]]
        for method in ("input_aug", "mixup", "manifold_mixup", "mixgen"):
            for t in targets:
                label = "+".join(t)
                cells.append((f"{method}:{label}", {"method": method, "modalities": label},
                              base.replace(augmentation=method, augment_modalities=t)))
    else:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    return cells


def ablation_suite(base: ExperimentConfig, suite: str) -> List[dict]:
    """Run every cell of ``suite`` and write ``ablation_<suite>.csv`` into the base output dir."""
    cells = suite_cells(base, suite)
    out = Path(base.output_dir)
    rows = []
    for i, (label, extra, cfg) in enumerate(cells):
        cell_dir = out / suite / f"cell_{i:02d}"
        try:
            res = run(cfg.replace(output_dir=str(cell_dir)))
        except baselines.ApplicabilityError as exc:
            log.warning("skipping %s: %s", label, exc)
            continue
        row = {"suite": suite, "variant": label, "dataset": base.dataset, **extra,
               "mean_accuracy": res.mean_accuracy, "std_accuracy": res.std_accuracy,
               "n_seeds": len(res.seeds)}
        rows.append(row)
    if rows:
        columns = list(rows[0].keys())
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"ablation_{suite}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, columns, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


# -- throughput ----------------------------------------------------------------------

def measure_throughput(cfg: ExperimentConfig, warmup_steps: int = 5, timed_steps: int = 30) -> Dict[str, float]:
    """Median optimizer steps per second (and examples per second) for one seed."""
    if timed_steps < 10:
        raise ValueError("timed_steps must be at least 10")
    seed = cfg.seeds[0]
    handle = build_dataset(cfg, seed)
    f, g = build_networks(cfg, handle, seed)
    tc = train_config(cfg, seed)
    rng = np.random.default_rng(seed)
    opt_f = gc.make_optimizer(tc.optimizer, f.parameters(), tc.lr_f)
    opt_g = gc.make_optimizer(tc.optimizer, g.parameters(), tc.lr_g) if g is not None else None
    idx = handle.train_idx
    bs = min(cfg.batch_size, len(idx))
    times = []
    for step in range(warmup_steps + timed_steps):
        start = (step * bs) % max(len(idx) - bs + 1, 1)
        batch = handle.batch(idx[start:start + bs])
        t0 = time.perf_counter()
        if g is not None:
            lemda_step(f, g, batch, tc.weights, opt_f, opt_g, rng, step, tc.regularizer, tc.kl_direction)
        else:
            _baseline_step(f, batch, tc.baseline, opt_f, rng, step)
        if step >= warmup_steps:
            times.append(time.perf_counter() - t0)
    sps = 1.0 / float(np.median(times))
    return {"augmentation": cfg.augmentation, "batch_size": bs, "steps_per_second": sps,
            "examples_per_second": sps * bs}
