"""Synthetic multimodal datasets and ingestion of small CSV / JSON-lines files.

The two synthetic generators cover opposite ends of the cross-modal
spectrum: in ``gen_perfect_correlation`` either modality alone determines the
label, while in ``gen_complementary`` the label is the XOR of one latent bit
per modality, so neither modality alone carries any information about it.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import gradcore as gc
from .fusionnet import CATEGORICAL, CONTINUOUS, PAD, TOKENS, ModalitySpec, MultimodalBatch, TaskNetwork

DEFAULT_SEQ_LEN = 8
DEFAULT_VOCAB = 50
DEFAULT_FEATURE_DIM = 16


class SchemaError(ValueError):
    pass


class IngestError(ValueError):
    """Row-level problems found while parsing; ``rows`` lists 1-based data row numbers."""

    def __init__(self, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.rows = list(rows)


@dataclass
class DatasetHandle:
    specs: Tuple[ModalitySpec, ...]
    values: Tuple[np.ndarray, ...]
    labels: np.ndarray
    num_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        parts = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if len(parts) != n or not np.array_equal(np.sort(parts), np.arange(n)):
            raise ValueError("splits must be disjoint and cover every example")

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx) -> MultimodalBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return MultimodalBatch(self.specs, tuple(v[idx] for v in self.values), self.labels[idx])

    def split(self, name: str) -> MultimodalBatch:
        return self.batch({"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name])

    def with_feature_dim(self, feature_dim: int) -> "DatasetHandle":
        specs = tuple(s.with_feature_dim(feature_dim) for s in self.specs)
        return DatasetHandle(specs, self.values, self.labels, self.num_classes, self.train_idx,
                             self.val_idx, self.test_idx, dict(self.params))


def _split_counts(n: int, split) -> Tuple[int, int, int]:
    if split is None:
        split = (0.8, 0.1, 0.1)
    if all(isinstance(s, (int, np.integer)) for s in split):
        counts = tuple(int(s) for s in split)
        if sum(counts) != n:
            raise ValueError(f"split counts {counts} do not sum to n={n}")
        return counts
    total = float(sum(split))
    n_train = int(round(n * split[0] / total))
    n_val = int(round(n * split[1] / total))
    return n_train, n_val, n - n_train - n_val


def _index_split(n: int, split, rng: np.random.Generator):
    a, b, _ = _split_counts(n, split)
    perm = rng.permutation(n)
    return np.sort(perm[:a]), np.sort(perm[a:a + b]), np.sort(perm[a + b:])


def _token_sequences(rng, groups: np.ndarray, n_groups: int, mix: float, seq_len: int,
                     vocab_size: int) -> np.ndarray:
    """Each group owns a contiguous block of ids 1..vocab-1; with prob ``mix`` a token
    is drawn uniformly from the whole vocabulary instead."""
    block = (vocab_size - 1) // n_groups
    if block < 1:
        raise ValueError("vocabulary too small for the number of groups")
    n = len(groups)
    own = 1 + groups[:, None] * block + rng.integers(0, block, (n, seq_len))
    anywhere = rng.integers(1, vocab_size, (n, seq_len))
    return np.where(rng.random((n, seq_len)) < mix, anywhere, own)


def gen_perfect_correlation(n: int, num_classes: int = 2, noise: float = 0.0, seed: int = 0,
                            dim: int = 8, seq_len: int = DEFAULT_SEQ_LEN,
                            vocab_size: int = DEFAULT_VOCAB, split=None,
                            feature_dim: int = DEFAULT_FEATURE_DIM) -> DatasetHandle:
    """Either modality alone determines the label.

    Modality ``vector`` is a Gaussian cluster around a per-class centroid with
    standard deviation ``noise``; modality ``tokens`` draws from a per-class
    unigram block, with a fraction ``min(noise, 1)`` of tokens replaced by
    uniform draws.
    """
    if num_classes < 2 or n < num_classes or noise < 0:
        raise ValueError(f"invalid parameters n={n} num_classes={num_classes} noise={noise}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    centroids = rng.normal(size=(num_classes, dim))
    centroids *= 2.0 / np.linalg.norm(centroids, axis=1, keepdims=True)
    vec = centroids[labels] + noise * rng.standard_normal((n, dim))
    toks = _token_sequences(rng, labels, num_classes, min(noise, 1.0), seq_len, vocab_size)
    specs = (
        ModalitySpec("vector", CONTINUOUS, feature_dim, dim=dim),
        ModalitySpec("tokens", TOKENS, feature_dim, vocab_size=vocab_size, max_len=seq_len),
    )
    tr, va, te = _index_split(n, split, rng)
    params = dict(generator="perfect_correlation", n=n, num_classes=num_classes, noise=noise,
                  seed=seed, centroids=centroids)
    return DatasetHandle(specs, (vec, toks), labels, num_classes, tr, va, te, params)


def gen_complementary(n: int, noise: float = 0.5, seed: int = 0, dim: int = 8,
                      seq_len: int = DEFAULT_SEQ_LEN, vocab_size: int = DEFAULT_VOCAB,
                      token_noise: Optional[float] = None, split=None,
                      feature_dim: int = DEFAULT_FEATURE_DIM) -> DatasetHandle:
    """Binary XOR task: label = b1 xor b2 with b1 only in ``vector`` and b2 only in ``tokens``.

    ``vector`` is +/- a random unit direction (by b1) plus isotropic Gaussian
    noise of scale ``noise``; the other directions carry no signal.
    ``tokens`` come from one of two unigram blocks (by b2), each token being
    replaced by a uniform draw with probability ``token_noise`` (default
    ``0.4 * noise``, capped at 1).
    """
    if n < 4 or noise < 0:
        raise ValueError(f"invalid parameters n={n} noise={noise}")
    rng = np.random.default_rng(seed)
    b1 = rng.integers(0, 2, n)
    b2 = rng.integers(0, 2, n)
    labels = b1 ^ b2
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    vec = (2.0 * b1 - 1.0)[:, None] * direction + noise * rng.standard_normal((n, dim))
    mix = min(0.4 * noise if token_noise is None else token_noise, 1.0)
    toks = _token_sequences(rng, b2, 2, mix, seq_len, vocab_size)
    specs = (
        ModalitySpec("vector", CONTINUOUS, feature_dim, dim=dim),
        ModalitySpec("tokens", TOKENS, feature_dim, vocab_size=vocab_size, max_len=seq_len),
    )
    tr, va, te = _index_split(n, split, rng)
    params = dict(generator="complementary", n=n, noise=noise, token_noise=mix, seed=seed,
                  bits=np.stack([b1, b2], axis=1), direction=direction)
    return DatasetHandle(specs, (vec, toks), labels, 2, tr, va, te, params)


# -- the two-point consistency scenario ---------------------------------------

@dataclass
class Figure3Probe:
    """A trained 2-D classifier, a source point, and two equidistant probes.

    ``d1`` stays on the source's side of the model boundary, ``d2`` crosses
    it; both lie at the same signed distance from the ground-truth line, so
    the ground-truth task loss is identical at both.
    """

    model: TaskNetwork
    normal: np.ndarray
    offset: float
    src: np.ndarray
    src_label: int
    d1: np.ndarray
    d2: np.ndarray
    seed: int
    loss_sharpness: float = 3.0

    def _batch(self, points: np.ndarray) -> MultimodalBatch:
        points = np.atleast_2d(points)
        return MultimodalBatch(self.model.specs, (points,), np.full(len(points), self.src_label))

    def probs(self, points) -> np.ndarray:
        return self.model.predict_proba(self._batch(points))

    def logits(self, points) -> np.ndarray:
        with gc.no_grad():
            return self.model(self._batch(points)).data

    def predicted(self, points) -> np.ndarray:
        return self.probs(points).argmax(axis=1)

    def signed_distance(self, points) -> np.ndarray:
        return np.atleast_2d(points) @ self.normal - self.offset

    def task_loss(self, points) -> np.ndarray:
        """Cross-entropy of the source label under the ground-truth logistic scorer."""
        z = self.loss_sharpness * self.signed_distance(points)
        z = z if self.src_label == 1 else -z
        return np.logaddexp(0.0, -z)

    def model_task_loss(self, points) -> np.ndarray:
        p = self.probs(points)[:, self.src_label]
        return -np.log(p)

    def consistency(self, points) -> np.ndarray:
        """KL(p(src) || p(point)) under the trained model, one value per point."""
        ref = self.logits(self.src)
        out = self.logits(points)
        return np.array([
            gc.kl_divergence(ref, gc.Tensor(row[None, :])).item() for row in out
        ])


def _train_probe(handle: DatasetHandle, seed: int, epochs: int = 300) -> TaskNetwork:
    rng = np.random.default_rng(seed)
    net = TaskNetwork(handle.specs, 2, rng, hidden=16)
    opt = gc.Adam(net.parameters(), lr=1e-2)
    batch = handle.split("train")
    for _ in range(epochs):
        gc.backward(gc.cross_entropy(net(batch), batch.labels))
        opt.step()
    return net


def _find_probes(probe_model: TaskNetwork, normal, offset, points, labels):
    tangent = np.array([-normal[1], normal[0]])
    best = None
    proto = Figure3Probe(probe_model, normal, offset, np.zeros(2), 0, np.zeros(2), np.zeros(2), 0)
    probs_all = proto.probs(points)
    for i in range(len(points)):
        src, y = points[i], int(labels[i])
        if probs_all[i, y] < 0.8:
            continue
        side = np.sign(points[i] @ normal - offset)
        for r in (0.5, 0.75, 1.0, 1.25):
            for a in (0.2, 0.4, 0.6, 0.8):
                step_n = -side * a * normal
                step_t = np.sqrt(1.0 - a * a) * tangent
                cand = np.stack([src + r * (step_n + step_t), src + r * (step_n - step_t)])
                dist = cand @ normal - offset
                if np.any(np.sign(dist) != side):
                    continue
                p = proto.probs(cand)[:, y]
                keep = p > 0.5
                if keep.sum() != 1:
                    continue
                margin = min(abs(p[0] - 0.5), abs(p[1] - 0.5))
                if best is None or margin > best[0]:
                    d1, d2 = (cand[0], cand[1]) if keep[0] else (cand[1], cand[0])
                    best = (margin, src, y, d1, d2)
    return best


def gen_figure3_scenario(seed: int = 0, n: int = 60, label_noise: float = 0.15,
                         max_tries: int = 100):
    """Build the 2-D scenario and return ``(DatasetHandle, Figure3Probe)``.

    Seeds ``seed, seed + 1, ...`` are tried until the probe construction
    succeeds; raises ``RuntimeError`` after ``max_tries`` failures.
    """
    for attempt in range(max_tries):
        s = seed + attempt
        rng = np.random.default_rng(s)
        angle = 0.3
        normal = np.array([np.cos(angle), np.sin(angle)])
        offset = 0.0
        x = rng.uniform(-2.0, 2.0, (n, 2))
        labels = (x @ normal - offset > 0).astype(np.int64)
        flip = rng.random(n) < label_noise
        labels = np.where(flip, 1 - labels, labels)
        specs = (ModalitySpec("point", CONTINUOUS, 8, dim=2),)
        tr, va, te = _index_split(n, (0.8, 0.1, 0.1), rng)
        handle = DatasetHandle(specs, (x,), labels, 2, tr, va, te,
                               dict(generator="figure3", seed=s, normal=normal, offset=offset))
        model = _train_probe(handle, s)
        clean = (x @ normal - offset > 0).astype(np.int64)
        found = _find_probes(model, normal, offset, x[tr], clean[tr])
        if found is None:
            continue
        _, src, y, d1, d2 = found
        probe = Figure3Probe(model, normal, offset, src, y, d1, d2, s)
        pred = probe.predicted(np.stack([src, d1, d2]))
        same_dist = abs(np.linalg.norm(d1 - src) - np.linalg.norm(d2 - src)) <= 1e-9
        if same_dist and pred[0] == y and pred[1] == y and pred[2] != y:
            return handle, probe
    raise RuntimeError(f"figure-3 construction failed for seeds {seed}..{seed + max_tries - 1}")


# -- ingestion -----------------------------------------------------------------

@dataclass
class IngestSchema:
    label: str
    numeric: List[str] = field(default_factory=list)
    categorical: List[str] = field(default_factory=list)
    text: List[str] = field(default_factory=list)
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    max_len: int = 32
    feature_dim: int = DEFAULT_FEATURE_DIM


def _read_rows(path: Path) -> Tuple[List[str], List[dict]]:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise IngestError(f"{path}: empty file")
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        columns = list(rows[0].keys()) if rows else []
        rows = [{k: ("" if v is None else str(v)) for k, v in r.items()} for r in rows]
    else:
        reader = csv.DictReader(text.splitlines())
        columns = list(reader.fieldnames or [])
        rows = list(reader)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return columns, rows


def _hash_order(n: int, seed: int) -> np.ndarray:
    keys = [hashlib.sha256(f"{seed}:{i}".encode()).hexdigest() for i in range(n)]
    return np.array(sorted(range(n), key=lambda i: keys[i]), dtype=np.int64)


def ingest_tabular_text(path, schema: IngestSchema) -> DatasetHandle:
    """Load a CSV (header row, comma separated, UTF-8) or JSON-lines file.

    Statistics (z-score moments, category codes, vocabulary) come from the
    train split only. Unknown categories map to code 0, unknown words to id 0.
    """
    path = Path(path)
    columns, rows = _read_rows(path)
    needed = [schema.label, *schema.numeric, *schema.categorical, *schema.text]
    missing = [c for c in needed if c not in columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")

    n = len(rows)
    n_train, n_val, _ = _split_counts(n, schema.split)
    order = _hash_order(n, schema.seed)
    train = np.sort(order[:n_train])
    val = np.sort(order[n_train:n_train + n_val])
    test = np.sort(order[n_train + n_val:])

    label_values = sorted({r[schema.label] for r in rows})
    label_code = {v: i for i, v in enumerate(label_values)}
    labels = np.array([label_code[r[schema.label]] for r in rows], dtype=np.int64)
    if len(label_values) < 2:
        raise IngestError(f"{path}: label column has fewer than two classes")

    specs, values = [], []
    if schema.numeric:
        num = np.empty((n, len(schema.numeric)))
        bad = []
        for i, r in enumerate(rows):
            for j, c in enumerate(schema.numeric):
                try:
                    num[i, j] = float(r[c])
                except (TypeError, ValueError):
                    bad.append(i + 1)
        if bad:
            rows_txt = ", ".join(str(b) for b in sorted(set(bad)))
            raise IngestError(f"{path}: unparsable numeric value in rows {rows_txt}", sorted(set(bad)))
        mu = num[train].mean(axis=0)
        sd = num[train].std(axis=0)
        sd[sd == 0] = 1.0
        values.append((num - mu) / sd)
        specs.append(ModalitySpec("numeric", CONTINUOUS, schema.feature_dim, dim=len(schema.numeric)))
    if schema.categorical:
        codes = np.zeros((n, len(schema.categorical)), dtype=np.int64)
        cards = []
        for j, c in enumerate(schema.categorical):
            seen = sorted({rows[i][c] for i in train})
            table = {v: k + 1 for k, v in enumerate(seen)}
            codes[:, j] = [table.get(r[c], 0) for r in rows]
            cards.append(len(seen) + 1)
        values.append(codes)
        specs.append(ModalitySpec("categorical", CATEGORICAL, schema.feature_dim,
                                  cardinalities=tuple(cards)))
    for c in schema.text:
        tokens = [r[c].split() for r in rows]
        vocab = sorted({w for i in train for w in tokens[i]})
        table = {w: k + 1 for k, w in enumerate(vocab)}
        max_len = max(1, min(schema.max_len, max((len(tokens[i]) for i in train), default=1)))
        ids = np.full((n, max_len), PAD, dtype=np.int64)
        for i, toks in enumerate(tokens):
            row = [table.get(w, 0) for w in toks[:max_len]]
            ids[i, :len(row)] = row
        values.append(ids)
        specs.append(ModalitySpec(c, TOKENS, schema.feature_dim, vocab_size=len(vocab) + 1,
                                  max_len=max_len))
    if not specs:
        raise SchemaError("schema names no input columns")
    params = dict(generator="ingest", path=str(path), seed=schema.seed, classes=label_values)
    return DatasetHandle(tuple(specs), tuple(values), labels, len(label_values), train, val, test, params)


def export_csv(handle: DatasetHandle, path) -> IngestSchema:
    """Write ``handle`` in the ingestible CSV layout and return the matching schema.

    Continuous modalities become ``<name>_<j>`` numeric columns, categorical
    ones ``<name>_<j>`` columns of code strings, token modalities a single
    space-joined column of ``t<id>`` words.
    """
    header, blocks = ["label"], []
    schema = IngestSchema(label="label")
    for spec, vals in zip(handle.specs, handle.values):
        if spec.kind == CONTINUOUS:
            cols = [f"{spec.name}_{j}" for j in range(spec.dim)]
            schema.numeric += cols
            blocks.append(lambda i, v=vals: [repr(float(x)) for x in v[i]])
        elif spec.kind == CATEGORICAL:
            cols = [f"{spec.name}_{j}" for j in range(len(spec.cardinalities))]
            schema.categorical += cols
            blocks.append(lambda i, v=vals: [f"c{int(x)}" for x in v[i]])
        else:
            cols = [spec.name]
            schema.text.append(spec.name)
            blocks.append(lambda i, v=vals: [" ".join(f"t{int(x)}" for x in v[i] if x >= 0)])
        header += cols
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(handle)):
            row = [str(int(handle.labels[i]))]
            for block in blocks:
                row += block(i)
            w.writerow(row)
    return schema
