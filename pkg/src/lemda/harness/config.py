"""Flat, typed ``key = value`` experiment configs.

Grammar, one entry per line::

    # comment
    key = value

Blank lines and ``#`` comments are ignored. Values are parsed by the type of
the field: integers, floats, booleans (``true``/``false``), strings, or
comma-separated lists. An empty right-hand side gives an empty list. Unknown
keys and duplicate keys are errors.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List

from ..baselines import KINDS as BASELINE_KINDS
from ..trainer import REGULARIZERS

AUGMENTATIONS = ("lemda_mlp_vae", "lemda_attention_vae") + BASELINE_KINDS
DATASETS = ("complementary", "perfect_correlation", "ingest")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # dataset
    dataset: str = "complementary"
    n_train: int = 200
    n_val: int = 200
    n_test: int = 2000
    noise: float = 0.8
    token_noise: float = -1.0  # negative: derived from noise
    num_classes: int = 2
    data_seed: int = -1  # negative: use the run seed
    ingest_path: str = ""
    ingest_label: str = ""
    ingest_numeric: List[str] = field(default_factory=list)
    ingest_categorical: List[str] = field(default_factory=list)
    ingest_text: List[str] = field(default_factory=list)
    # task network
    feature_dim: int = 16
    hidden: int = 64
    # augmentation
    augmentation: str = "none"
    regularizer: str = "consistency"
    kl_direction: str = "forward"
    w1: float = 1e-4
    w2: float = 0.1
    w3: float = 0.1
    alpha_conf: float = 0.5
    mixup_alpha: float = 0.8
    mixgen_lambda: float = 0.5
    augment_modalities: List[str] = field(default_factory=list)  # empty: all
    latent_dim: int = 8
    vae_hidden: int = 256
    vae_dropout: float = 0.5
    vae_residual: bool = True
    vae_out_scale: float = 0.3
    attn_width: int = 64
    attn_layers: int = 4
    attn_heads: int = 8
    attn_dropout: float = 0.1
    # optimization
    optimizer: str = "adam"
    lr_f: float = 3e-3
    lr_g: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    patience: int = 0
    restore_best: bool = False
    g_update_every: int = 1
    # run
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"
    verbose: bool = False

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        need(self.augmentation in AUGMENTATIONS, f"augmentation must be one of {AUGMENTATIONS}")
        need(self.regularizer in REGULARIZERS, f"regularizer must be one of {REGULARIZERS}")
        need(self.kl_direction in ("forward", "reverse"), "kl_direction must be forward or reverse")
        need(self.optimizer in ("adam", "sgd"), "optimizer must be adam or sgd")
        need(min(self.w1, self.w2, self.w3) >= 0, "loss weights must be >= 0")
        need(0 <= self.alpha_conf <= 1, "alpha_conf must be in [0, 1]")
        need(0 < self.mixup_alpha <= 1, "mixup_alpha must be in (0, 1]")
        need(0 <= self.mixgen_lambda <= 1, "mixgen_lambda must be in [0, 1]")
        need(self.lr_f > 0 and self.lr_g > 0, "learning rates must be positive")
        need(self.epochs >= 0 and self.batch_size >= 1, "epochs >= 0 and batch_size >= 1")
        need(self.g_update_every >= 1, "g_update_every must be >= 1")
        need(len(self.seeds) >= 1, "at least one seed")
        need(self.feature_dim > 0 and self.hidden > 0, "network widths must be positive")
        need(self.noise >= 0, "noise must be >= 0")
        if self.dataset == "ingest":
            need(bool(self.ingest_path) and bool(self.ingest_label),
                 "ingest needs ingest_path and ingest_label")
        else:
            need(min(self.n_train, self.n_test) >= 1 and self.n_val >= 0, "split sizes must be positive")
        return self

    @property
    def is_lemda(self) -> bool:
        return self.augmentation.startswith("lemda_")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse_value(raw: str, kind, name: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == List[int]:
            return [int(x) for x in raw.split(",") if x.strip()]
        if kind == List[str]:
            return [x.strip() for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    raise ConfigError(f"{name}: unsupported field type")


_TYPES = {"int": int, "float": float, "str": str, "bool": bool,
          "List[int]": List[int], "List[str]": List[str]}


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    kinds = {f.name: _TYPES[f.type] for f in fields(ExperimentConfig)}
    values, seen = {}, set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        values[key] = _parse_value(raw, kinds[key], key)
    return ExperimentConfig(**values).validate()


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = loads(text, str(path))
    override = os.environ.get("LEMDA_OUT")
    if override:
        cfg.output_dir = override
    return cfg
