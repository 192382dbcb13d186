"""Comparison augmentations: per-modality input augmentation, Mixup, Manifold Mixup, MixGen.

The input-space transforms are small structure-preserving analogues of the
image and text policies used for real data: noise / scaling / feature dropout
for continuous vectors and swap / delete / duplicate for token sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Sequence

import numpy as np

from . import gradcore as gc
from .fusionnet import CATEGORICAL, CONTINUOUS, PAD, TOKENS, MultimodalBatch

KINDS = ("none", "input_aug", "mixup", "manifold_mixup", "mixgen")


class ApplicabilityError(ValueError):
    """The augmentation does not apply to this combination of modalities."""


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "none"
    alpha: float = 0.8
    lam: float = 0.5
    modalities: Optional[FrozenSet[str]] = None  # None = every modality

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")

    def applies_to(self, name: str) -> bool:
        return self.modalities is None or name in self.modalities


def one_hot_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(labels, dtype=np.int64)]


# -- input augmentation ----------------------------------------------------------

CONTINUOUS_OPS = ("noise", "scale", "dropout")
TOKEN_OPS = ("swap", "delete", "duplicate")


def _augment_continuous(x: np.ndarray, rng: np.random.Generator, ops=CONTINUOUS_OPS) -> np.ndarray:
    out = x.copy()
    std = x.std(axis=0)
    choice = rng.integers(0, len(ops), len(x))
    magnitude = rng.random(len(x))
    for i in range(len(x)):
        op = ops[choice[i]]
        if op == "noise":
            # sigma uniform in [0, 0.1 * feature std]
            out[i] += rng.standard_normal(x.shape[1]) * magnitude[i] * 0.1 * std
        elif op == "scale":
            out[i] *= 0.9 + 0.2 * magnitude[i]
        else:
            out[i] *= rng.random(x.shape[1]) >= 0.1
    return out


def _unpad(row: np.ndarray) -> list:
    return [int(t) for t in row if t != PAD]


def _pad(tokens: list, max_len: int) -> np.ndarray:
    out = np.full(max_len, PAD, dtype=np.int64)
    tokens = tokens[:max_len]
    out[:len(tokens)] = tokens
    return out


def _augment_tokens(ids: np.ndarray, rng: np.random.Generator, ops=TOKEN_OPS) -> np.ndarray:
    out = ids.copy()
    max_len = ids.shape[1]
    for i in range(len(ids)):
        toks = _unpad(ids[i])
        op = ops[rng.integers(0, len(ops))]
        if len(toks) >= 2 and op == "swap":
            a, b = rng.choice(len(toks), 2, replace=False)
            toks[a], toks[b] = toks[b], toks[a]
        elif len(toks) >= 2 and op == "delete":
            del toks[rng.integers(len(toks))]
        elif len(toks) >= 1 and op == "duplicate":
            k = rng.integers(len(toks))
            toks.insert(k + 1, toks[k])
        out[i] = _pad(toks, max_len)
    return out


def input_augment(batch: MultimodalBatch, toggles, rng: np.random.Generator,
                  continuous_ops=CONTINUOUS_OPS, token_ops=TOKEN_OPS) -> MultimodalBatch:
    """One randomly chosen transform, with random magnitude, per example and toggled modality.

    Categorical modalities are never changed.
    """
    values = list(batch.values)
    for m, spec in enumerate(batch.specs):
        if spec.name not in toggles:
            continue
        if spec.kind == CONTINUOUS:
            values[m] = _augment_continuous(values[m], rng, continuous_ops)
        elif spec.kind == TOKENS:
            values[m] = _augment_tokens(values[m], rng, token_ops)
    return batch.replace(values=tuple(values))


# -- mixup -----------------------------------------------------------------------

def mixup_extended(batch_a: MultimodalBatch, batch_b: MultimodalBatch, alpha: float,
                   rng: np.random.Generator, num_classes: Optional[int] = None, lam=None, j=None,
                   toggles=None) -> MultimodalBatch:
    """Mixup with a selection rule for discrete modalities.

    Continuous modalities and one-hot labels are interpolated with a per-pair
    weight drawn from Beta(alpha, alpha). Token and categorical modalities
    take the element of ``batch_a`` when a uniform draw is below ``alpha`` and
    the element of ``batch_b`` otherwise. ``lam`` and ``j`` override the draws.
    The returned batch carries ``soft_labels``; its hard ``labels`` are those of
    ``batch_a``.
    """
    n = len(batch_a)
    if len(batch_b) != n:
        raise gc.ContractError(f"mixup needs equal batch sizes, got {n} and {len(batch_b)}")
    num_classes = num_classes or int(max(batch_a.labels.max(), batch_b.labels.max())) + 1
    lam = rng.beta(alpha, alpha, n) if lam is None else np.broadcast_to(np.asarray(lam, float), (n,))
    values = []
    for m, spec in enumerate(batch_a.specs):
        a, b = batch_a.values[m], batch_b.values[m]
        if toggles is not None and spec.name not in toggles:
            values.append(a)
        elif spec.kind == CONTINUOUS:
            values.append(lam[:, None] * a + (1.0 - lam[:, None]) * b)
        else:
            jj = rng.random(n) if j is None else np.broadcast_to(np.asarray(j, float), (n,))
            values.append(np.where((jj < alpha)[:, None], a, b))
    soft_a = batch_a.soft_labels if batch_a.soft_labels is not None else one_hot_labels(batch_a.labels, num_classes)
    soft_b = batch_b.soft_labels if batch_b.soft_labels is not None else one_hot_labels(batch_b.labels, num_classes)
    soft = lam[:, None] * soft_a + (1.0 - lam[:, None]) * soft_b
    return batch_a.replace(values=tuple(values), soft_labels=soft)


def manifold_mixup(features_a: Sequence[gc.Tensor], features_b: Sequence[gc.Tensor], labels_a,
                   labels_b, alpha: float, rng: np.random.Generator, num_classes: Optional[int] = None,
                   lam=None, mix_mask: Optional[Sequence[bool]] = None):
    """Interpolate fusion-boundary features and one-hot labels with lam ~ Beta(alpha, alpha).

    A single lam is shared by the whole batch. Features whose ``mix_mask``
    entry is False pass through from ``features_a`` untouched.
    """
    if len(features_a) != len(features_b):
        raise gc.ContractError("feature lists differ in length")
    for fa, fb in zip(features_a, features_b):
        if fa.shape != fb.shape:
            raise gc.ContractError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
    lam = float(rng.beta(alpha, alpha)) if lam is None else float(lam)
    labels_a, labels_b = np.asarray(labels_a), np.asarray(labels_b)
    num_classes = num_classes or int(max(labels_a.max(), labels_b.max())) + 1
    mix_mask = [True] * len(features_a) if mix_mask is None else list(mix_mask)
    mixed = [
        gc.add(gc.mul(fa, lam), gc.mul(fb, 1.0 - lam)) if on else fa
        for fa, fb, on in zip(features_a, features_b, mix_mask)
    ]
    soft = lam * one_hot_labels(labels_a, num_classes) + (1.0 - lam) * one_hot_labels(labels_b, num_classes)
    return mixed, soft


# -- mixgen ----------------------------------------------------------------------

def mixgen_style(batch_a: MultimodalBatch, batch_b: MultimodalBatch, lam: float,
                 toggles=None) -> MultimodalBatch:
    """Interpolate continuous modalities, concatenate token sequences; labels of ``batch_a``."""
    kinds = {s.kind for s in batch_a.specs}
    if CONTINUOUS not in kinds or TOKENS not in kinds:
        raise ApplicabilityError("mixgen needs at least one continuous and one token modality")
    if len(batch_a) != len(batch_b):
        raise gc.ContractError("mixgen needs equal batch sizes")
    values = []
    for m, spec in enumerate(batch_a.specs):
        a, b = batch_a.values[m], batch_b.values[m]
        if toggles is not None and spec.name not in toggles:
            values.append(a)
        elif spec.kind == CONTINUOUS:
            values.append(lam * a + (1.0 - lam) * b)
        elif spec.kind == TOKENS:
            max_len = a.shape[1]
            values.append(np.stack([_pad(_unpad(ra) + _unpad(rb), max_len) for ra, rb in zip(a, b)]))
        else:
            values.append(a)
    return batch_a.replace(values=tuple(values))
