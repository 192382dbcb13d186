"""Joint training of a task network and an augmentation network.

Each iteration runs two phases on the same mini-batch:

1. augmentation update: the task network is frozen; the augmentation
   network ascends the task loss on augmented features while a
   confidence-masked consistency term (KL between the output distributions on
   original and augmented features) and the encoder KL keep it in check;
2. task update: the augmentation network is frozen; a fresh forward pass
   trains the task network on original and augmented features.

Baseline augmentations are trained through the same loop so that every
method shares batching, evaluation and bookkeeping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import baselines
from . import gradcore as gc
from .augnet import augment
from .datagen import DatasetHandle
from .fusionnet import MultimodalBatch, TaskNetwork

REGULARIZERS = ("consistency", "l2", "consistency+l2", "none")
AUGMENTATIONS = ("lemda",) + baselines.KINDS


class DivergenceError(RuntimeError):
    def __init__(self, message: str, report: "StepReport" = None):
        super().__init__(message)
        self.report = report


@dataclass
class LossWeights:
    w1: float = 1e-4  # adversarial task loss
    w2: float = 0.1  # consistency
    w3: float = 0.1  # encoder KL
    alpha_conf: float = 0.5

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.alpha_conf <= 1.0:
            raise ValueError(f"alpha_conf must lie in [0, 1], got {self.alpha_conf}")


@dataclass
class StepReport:
    step_index: int
    task_loss_orig: float = 0.0
    task_loss_aug: float = 0.0
    consistency_loss: float = 0.0
    vae_kl: float = 0.0
    mask_fraction: float = 0.0

    def check_finite(self) -> None:
        vals = (self.task_loss_orig, self.task_loss_aug, self.consistency_loss, self.vae_kl)
        if not all(math.isfinite(v) for v in vals):
            raise DivergenceError(f"non-finite loss at step {self.step_index}: {self}", self)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_f: float = 1e-3
    lr_g: float = 1e-3
    optimizer: str = "adam"
    augmentation: str = "none"
    weights: LossWeights = field(default_factory=LossWeights)
    regularizer: str = "consistency"
    kl_direction: str = "forward"
    baseline: baselines.BaselineSpec = field(default_factory=baselines.BaselineSpec)
    patience: int = 0
    restore_best: bool = False
    g_update_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {self.augmentation!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.kl_direction not in ("forward", "reverse"):
            raise ValueError(f"kl_direction must be forward or reverse, got {self.kl_direction!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.g_update_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and g_update_every >= 1 required")


# -- loss pieces -------------------------------------------------------------------

def consistency_mask(probs, alpha: float) -> np.ndarray:
    """Rows whose largest probability is strictly above ``alpha``."""
    probs = probs.data if isinstance(probs, gc.Tensor) else np.asarray(probs)
    return probs.max(axis=1) > alpha


def reverse_kl(p_logits, q_logits: gc.Tensor, mask) -> gc.Tensor:
    """Masked mean of KL(softmax(q) || softmax(p)), gradient into ``q_logits`` only."""
    p = p_logits.data if isinstance(p_logits, gc.Tensor) else np.asarray(p_logits)
    mask = np.asarray(mask, dtype=bool)
    k = int(mask.sum())
    lp = p - p.max(axis=1, keepdims=True)
    lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
    rows = gc.sum_(gc.softmax(q_logits) * (gc.log_softmax(q_logits) - gc.Tensor(lp)), axis=1)
    return gc.sum_(rows * gc.Tensor(mask / max(k, 1)))


def l2_regularizer_variant(z: Sequence[gc.Tensor], augmented: Sequence[gc.Tensor]) -> gc.Tensor:
    """Batch mean of the squared L2 distance between concatenated features.

    The original features are treated as constants.
    """
    if len(z) != len(augmented):
        raise gc.DimensionError(f"{len(z)} original vs {len(augmented)} augmented tensors")
    for a, b in zip(z, augmented):
        if a.shape != b.shape:
            raise gc.DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    orig = np.concatenate([t.data for t in z], axis=1)
    diff = gc.concat(augmented, axis=1) - gc.Tensor(orig)
    return gc.mean(gc.sum_(gc.square(diff), axis=1))


def _require_batch(batch: MultimodalBatch) -> None:
    if len(batch) == 0:
        raise gc.ContractError("empty batch")


# -- the two update phases -------------------------------------------------------

def g_update(f: TaskNetwork, g, batch: MultimodalBatch, weights: LossWeights, opt_g, rng,
             regularizer: str = "consistency", kl_direction: str = "forward",
             report: Optional[StepReport] = None) -> StepReport:
    """One step of the augmentation network; the task network is not modified."""
    _require_batch(batch)
    report = report or StepReport(0)
    y = batch.labels
    with gc.frozen(f.parameters()):
        z = f.forward_before(batch)
        logits = f.forward_after(z)
        aug, kl_vae = augment(g, z, rng, "train")
        logits_g = f.forward_after(aug)

        mask = consistency_mask(gc.softmax(logits), weights.alpha_conf)
        ce_aug = gc.cross_entropy(logits_g, y)
        loss = gc.mul(ce_aug, -weights.w1) + gc.mul(kl_vae, weights.w3)
        if regularizer in ("consistency", "consistency+l2"):
            if kl_direction == "forward":
                cons = gc.kl_divergence(logits, logits_g, mask)
            else:
                cons = reverse_kl(logits, logits_g, mask)
            loss = loss + gc.mul(cons, weights.w2)
            report.consistency_loss = cons.item()
        if regularizer in ("l2", "consistency+l2"):
            loss = loss + gc.mul(l2_regularizer_variant(z, aug), weights.w2)

        report.task_loss_aug = ce_aug.item()
        report.vae_kl = kl_vae.item()
        report.mask_fraction = float(mask.mean())
        if not math.isfinite(loss.item()):
            raise DivergenceError(f"non-finite augmentation loss at step {report.step_index}", report)
        gc.backward(loss)
    opt_g.step()
    return report


def f_update(f: TaskNetwork, g, batch: MultimodalBatch, opt_f, rng,
             report: Optional[StepReport] = None) -> StepReport:
    """One step of the task network on original plus augmented features; ``g`` is frozen."""
    _require_batch(batch)
    report = report or StepReport(0)
    y = batch.labels
    with gc.frozen(g.parameters()):
        z = f.forward_before(batch)
        logits = f.forward_after(z)
        aug, _ = augment(g, z, rng, "train")
        logits_g = f.forward_after(aug)
        l_orig = gc.cross_entropy(logits, y)
        l_aug = gc.cross_entropy(logits_g, y)
        report.task_loss_orig = l_orig.item()
        report.task_loss_aug = l_aug.item()
        report.check_finite()
        gc.backward(l_orig + l_aug)
    opt_f.step()
    return report


def lemda_step(f: TaskNetwork, g, batch: MultimodalBatch, weights: LossWeights, opt_f, opt_g, rng,
               step_index: int = 0, regularizer: str = "consistency", kl_direction: str = "forward",
               update_g: bool = True) -> StepReport:
    """Augmentation update followed by task update on one mini-batch."""
    report = StepReport(step_index)
    if update_g:
        g_update(f, g, batch, weights, opt_g, rng, regularizer, kl_direction, report)
    f_update(f, g, batch, opt_f, rng, report)
    return report


# -- baseline steps -----------------------------------------------------------------

def _baseline_step(f: TaskNetwork, batch: MultimodalBatch, spec: baselines.BaselineSpec, opt_f, rng,
                   step_index: int) -> StepReport:
    _require_batch(batch)
    report = StepReport(step_index)
    toggles = {s.name for s in batch.specs if spec.applies_to(s.name)}
    c = f.num_classes
    kind = spec.kind
    if kind == "none":
        loss = gc.cross_entropy(f(batch), batch.labels)
        report.task_loss_orig = loss.item()
    elif kind == "input_aug":
        loss = gc.cross_entropy(f(baselines.input_augment(batch, toggles, rng)), batch.labels)
        report.task_loss_orig = loss.item()
    elif kind == "mixup":
        partner = batch.take(rng.permutation(len(batch)))
        mixed = baselines.mixup_extended(batch, partner, spec.alpha, rng, c, toggles=toggles)
        loss = gc.soft_cross_entropy(f(mixed), mixed.soft_labels)
        report.task_loss_aug = loss.item()
    elif kind == "manifold_mixup":
        perm = rng.permutation(len(batch))
        z = f.forward_before(batch)
        z_b = [gc.index(t, perm) for t in z]
        mask = [s.name in toggles for s in batch.specs]
        mixed, soft = baselines.manifold_mixup(z, z_b, batch.labels, batch.labels[perm], spec.alpha,
                                               rng, c, mix_mask=mask)
        loss = gc.soft_cross_entropy(f.forward_after(mixed), soft)
        report.task_loss_aug = loss.item()
    elif kind == "mixgen":
        partner = batch.take(rng.permutation(len(batch)))
        mixed = baselines.mixgen_style(batch, partner, spec.lam, toggles=toggles)
        l_orig = gc.cross_entropy(f(batch), batch.labels)
        l_aug = gc.cross_entropy(f(mixed), mixed.labels)
        report.task_loss_orig, report.task_loss_aug = l_orig.item(), l_aug.item()
        loss = l_orig + l_aug
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    report.check_finite()
    gc.backward(loss)
    opt_f.step()
    return report


# -- outer loop ------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_task_loss: float
    consistency: float
    vae_kl: float
    mask_fraction: float
    val_accuracy: float


EPOCH_COLUMNS = ("epoch", "train_task_loss", "consistency", "vae_kl", "mask_fraction", "val_accuracy")
STEP_COLUMNS = ("step_index", "task_loss_orig", "task_loss_aug", "consistency_loss", "vae_kl",
                "mask_fraction")


@dataclass
class TrainingHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    steps: List[StepReport] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def final_val_accuracy(self) -> float:
        return self.epochs[-1].val_accuracy if self.epochs else float("nan")

    def to_csv(self, path, verbose: bool = False) -> None:
        """One row per epoch; ``verbose`` appends one row per step.

        In verbose mode a leading ``row`` column holds ``epoch`` or ``step``
        and step rows use the step columns.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not verbose:
                w.writerow(EPOCH_COLUMNS)
                for e in self.epochs:
                    w.writerow([_fmt(v) for v in asdict(e).values()])
                return
            w.writerow(("row",) + EPOCH_COLUMNS)
            for e in self.epochs:
                w.writerow(["epoch"] + [_fmt(v) for v in asdict(e).values()])
            w.writerow(("row",) + STEP_COLUMNS)
            for s in self.steps:
                w.writerow(["step"] + [_fmt(v) for v in asdict(s).values()])


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def accuracy(f: TaskNetwork, batch: MultimodalBatch) -> float:
    if len(batch) == 0:
        return float("nan")
    labels, _ = f.predict(batch)
    return float((labels == batch.labels).mean())


def train(f: TaskNetwork, g, dataset: DatasetHandle, config: TrainConfig) -> TrainingHistory:
    """Mini-batch training with per-epoch validation on un-augmented inputs."""
    if len(dataset.train_idx) == 0:
        raise gc.ContractError("empty training split")
    if config.augmentation == "lemda" and g is None:
        raise ValueError("lemda training needs an augmentation network")
    shuffle_rng, aug_rng = (np.random.default_rng(s) for s in
                            np.random.SeedSequence(config.seed).spawn(2))
    opt_f = gc.make_optimizer(config.optimizer, f.parameters(), config.lr_f,
                              [n for n, _ in f.named_parameters()])
    opt_g = None
    if config.augmentation == "lemda":
        opt_g = gc.make_optimizer(config.optimizer, g.parameters(), config.lr_g,
                                  [n for n, _ in g.named_parameters()])
    val = dataset.split("val")
    history = TrainingHistory()
    best_acc, best_state, stale = -1.0, None, 0
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(dataset.train_idx)
        reports = []
        for start in range(0, len(order), config.batch_size):
            batch = dataset.batch(order[start:start + config.batch_size])
            if config.augmentation == "lemda":
                rep = lemda_step(f, g, batch, config.weights, opt_f, opt_g, aug_rng, step,
                                 config.regularizer, config.kl_direction,
                                 update_g=(step % config.g_update_every == 0))
            else:
                rep = _baseline_step(f, batch, config.baseline, opt_f, aug_rng, step)
            reports.append(rep)
            step += 1
        history.steps.extend(reports)
        if not all(np.isfinite(p.data).all() for p in f.parameters()):
            raise DivergenceError(f"non-finite task-network parameters after epoch {epoch}", reports[-1])
        acc = accuracy(f, val)
        history.epochs.append(EpochRecord(
            epoch=epoch,
            train_task_loss=float(np.mean([r.task_loss_orig for r in reports])),
            consistency=float(np.mean([r.consistency_loss for r in reports])),
            vae_kl=float(np.mean([r.vae_kl for r in reports])),
            mask_fraction=float(np.mean([r.mask_fraction for r in reports])),
            val_accuracy=acc,
        ))
        if acc > best_acc:
            best_acc, stale, history.best_epoch = acc, 0, epoch
            if config.restore_best:
                best_state = [p.data.copy() for p in f.parameters()]
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    if config.restore_best and best_state is not None:
        for p, data in zip(f.parameters(), best_state):
            p.data[...] = data
    return history
