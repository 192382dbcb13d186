"""Late-fusion task network split at the fusion boundary.

Each modality has its own encoder; the fusion head sees the encoder outputs
concatenated in spec order. ``forward_before`` stops at the fusion boundary
and ``forward_after`` runs the head, so augmented features can be routed
through the head alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import gradcore as gc
from .gradcore import MLP, EmbeddingMean, Module, Tensor

CONTINUOUS = "continuous"
TOKENS = "tokens"
CATEGORICAL = "categorical"
PAD = -1


@dataclass(frozen=True)
class ModalitySpec:
    """One input modality.

    ``dim`` is the vector width for continuous inputs; ``vocab_size`` and
    ``max_len`` describe token sequences (padded with -1); ``cardinalities``
    lists the number of codes per categorical column.
    """

    name: str
    kind: str
    feature_dim: int
    dim: int = 0
    vocab_size: int = 0
    max_len: int = 0
    cardinalities: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ValueError(f"{self.name}: feature_dim must be positive")
        if self.kind == CONTINUOUS and self.dim <= 0:
            raise ValueError(f"{self.name}: continuous modality needs dim > 0")
        elif self.kind == TOKENS and (self.vocab_size <= 0 or self.max_len <= 0):
            raise ValueError(f"{self.name}: token modality needs vocab_size and max_len")
        elif self.kind == CATEGORICAL and (
            not self.cardinalities or min(self.cardinalities) <= 0
        ):
            raise ValueError(f"{self.name}: categorical modality needs cardinalities")
        elif self.kind not in (CONTINUOUS, TOKENS, CATEGORICAL):
            raise ValueError(f"{self.name}: unknown modality kind {self.kind!r}")

    def with_feature_dim(self, feature_dim: int) -> "ModalitySpec":
        return ModalitySpec(self.name, self.kind, feature_dim, self.dim, self.vocab_size,
                            self.max_len, tuple(self.cardinalities))

    def validate(self, values: np.ndarray) -> None:
        if self.kind == CONTINUOUS:
            ok = values.ndim == 2 and values.shape[1] == self.dim
        elif self.kind == TOKENS:
            ok = values.ndim == 2 and values.shape[1] == self.max_len
            ok = ok and values.max(initial=-1) < self.vocab_size
        else:
            ok = values.ndim == 2 and values.shape[1] == len(self.cardinalities)
            ok = ok and bool(np.all(values < np.asarray(self.cardinalities))) and values.min(initial=0) >= 0
        if not ok:
            raise gc.DimensionError(
                f"modality {self.name!r} ({self.kind}) got values of shape {values.shape}"
            )


@dataclass
class MultimodalBatch:
    """Per-modality arrays (spec order) plus integer labels."""

    specs: Tuple[ModalitySpec, ...]
    values: Tuple[np.ndarray, ...]
    labels: np.ndarray
    soft_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        self.values = tuple(self.values)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.specs) != len(self.values):
            raise ValueError(f"{len(self.values)} value arrays for {len(self.specs)} modalities")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        for i, s in enumerate(self.specs):
            if s.name == name:
                return i
        raise KeyError(name)

    def replace(self, values=None, labels=None, soft_labels=None) -> "MultimodalBatch":
        return MultimodalBatch(
            self.specs,
            self.values if values is None else values,
            self.labels if labels is None else labels,
            soft_labels,
        )

    def take(self, idx) -> "MultimodalBatch":
        soft = None if self.soft_labels is None else self.soft_labels[idx]
        return MultimodalBatch(self.specs, tuple(v[idx] for v in self.values), self.labels[idx], soft)


def one_hot(codes: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    blocks = [np.eye(c)[codes[:, j]] for j, c in enumerate(cardinalities)]
    return np.concatenate(blocks, axis=1)


class TaskNetwork(Module):
    """Per-modality encoders followed by an MLP over their concatenation."""

    def __init__(self, specs: Sequence[ModalitySpec], num_classes: int, rng: np.random.Generator,
                 hidden: int = 64):
        if num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not specs:
            raise ValueError("need at least one modality")
        self.specs = tuple(specs)
        self.num_classes = num_classes
        self.encoders = [self._make_encoder(s, hidden, rng) for s in self.specs]
        self.head = MLP([self.fusion_width, hidden, num_classes], rng)

    @staticmethod
    def _make_encoder(spec: ModalitySpec, hidden: int, rng):
        if spec.kind == TOKENS:
            return EmbeddingMean(spec.vocab_size, spec.feature_dim, rng)
        in_dim = spec.dim if spec.kind == CONTINUOUS else int(sum(spec.cardinalities))
        return MLP([in_dim, hidden, spec.feature_dim], rng)

    @property
    def feature_dims(self) -> list:
        return [s.feature_dim for s in self.specs]

    @property
    def fusion_width(self) -> int:
        return sum(self.feature_dims)

    def forward_before(self, batch: MultimodalBatch) -> list:
        if len(batch.values) != len(self.specs):
            raise ValueError(
                f"batch has {len(batch.values)} modalities, network expects {len(self.specs)}"
            )
        feats = []
        for spec, enc, values in zip(self.specs, self.encoders, batch.values):
            spec.validate(values)
            if spec.kind == TOKENS:
                feats.append(enc(values))
            elif spec.kind == CATEGORICAL:
                feats.append(enc(Tensor(one_hot(values, spec.cardinalities))))
            else:
                feats.append(enc(Tensor(values)))
        return feats

    def forward_after(self, features: Sequence[Tensor]) -> Tensor:
        if len(features) != len(self.specs):
            raise gc.DimensionError(f"{len(features)} feature tensors for {len(self.specs)} modalities")
        batch = features[0].shape[0]
        for spec, f in zip(self.specs, features):
            if f.ndim != 2 or f.shape != (batch, spec.feature_dim):
                raise gc.DimensionError(
                    f"feature for {spec.name!r} has shape {f.shape}, expected ({batch}, {spec.feature_dim})"
                )
        return self.head(gc.concat(features, axis=-1))

    def __call__(self, batch: MultimodalBatch) -> Tensor:
        return self.forward_after(self.forward_before(batch))

    def predict_proba(self, batch: MultimodalBatch) -> np.ndarray:
        with gc.no_grad():
            return gc.softmax(self(batch)).data

    def predict(self, batch: MultimodalBatch) -> Tuple[np.ndarray, np.ndarray]:
        """Argmax class (lowest index on ties) and its softmax probability."""
        probs = self.predict_proba(batch)
        labels = probs.argmax(axis=1)
        return labels, probs[np.arange(len(labels)), labels]


def forward_before(net: TaskNetwork, batch: MultimodalBatch) -> list:
    return net.forward_before(batch)


def forward_after(net: TaskNetwork, features: Sequence[Tensor]) -> Tensor:
    return net.forward_after(features)


def predict(net: TaskNetwork, batch: MultimodalBatch):
    return net.predict(batch)
