"""Augmentation networks that map fusion-boundary features to augmented features.

Both variants are VAEs trained without a reconstruction loss: the only
VAE-specific term is the KL of the encoder distribution from N(0, I).
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from . import gradcore as gc
from .gradcore import MLP, Linear, Module, Tensor, TransformerBlock

LOG_VAR_INIT = -2.0


def _init_log_var_head(layer: Linear, latent_dim: int) -> None:
    # columns [latent_dim:] produce log_var
    layer.weight.data[:, latent_dim:] *= 0.01
    layer.bias.data[latent_dim:] = LOG_VAR_INIT


def _scale_layer(layer: Linear, scale: float) -> None:
    layer.weight.data *= scale
    layer.bias.data *= scale


def _check_features(features: Sequence[Tensor], dims: Sequence[int]) -> None:
    if len(features) != len(dims):
        raise gc.DimensionError(f"expected {len(dims)} feature tensors, got {len(features)}")
    b = features[0].shape[0]
    for i, (f, d) in enumerate(zip(features, dims)):
        if f.shape != (b, d):
            raise gc.DimensionError(f"feature {i} has shape {f.shape}, expected ({b}, {d})")


class MlpVae(Module):
    """Concatenate all modality features, encode to a small Gaussian latent, decode, split.

    With ``residual`` the decoder output is added to the input features and the
    decoder's last layer starts scaled by ``out_scale``, so early augmentations
    are small perturbations of the originals.
    """

    kind = "mlp_vae"

    def __init__(self, feature_dims: Sequence[int], rng: np.random.Generator, latent_dim: int = 8,
                 hidden: int = 256, dropout: float = 0.5, residual: bool = True,
                 out_scale: float = 0.3):
        self.feature_dims = [int(d) for d in feature_dims]
        self.latent_dim = latent_dim
        self.residual = residual
        width = sum(self.feature_dims)
        self.encoder = MLP([width, hidden], rng, dropout=dropout, final_activation=True)
        self.to_stats = Linear(hidden, 2 * latent_dim, rng)
        self.decoder = MLP([latent_dim, hidden, width], rng, dropout=dropout)
        _init_log_var_head(self.to_stats, latent_dim)
        if residual:
            _scale_layer(self.decoder.layers[-1], out_scale)

    def encode(self, features, rng=None, train=False) -> Tuple[Tensor, Tensor]:
        h = self.encoder(gc.concat(features, axis=-1), rng, train)
        mu, log_var = gc.split(self.to_stats(h), [self.latent_dim, self.latent_dim])
        return mu, log_var

    def __call__(self, features: Sequence[Tensor], rng: Optional[np.random.Generator] = None,
                 train: bool = False):
        _check_features(features, self.feature_dims)
        mu, log_var = self.encode(features, rng, train)
        latent = gc.gaussian_sample(mu, log_var, rng) if train else mu
        out = self.decoder(latent, rng, train)
        if self.residual:
            out = out + gc.concat(features, axis=-1)
        return gc.split(out, self.feature_dims), gc.gaussian_kl(mu, log_var)


class AttentionVae(Module):
    """Treat the N modality features as N tokens of a small transformer VAE.

    Each modality has its own input and output projection; these carry the
    modality identity, so no positional encoding is added.
    """

    kind = "attention_vae"

    def __init__(self, feature_dims: Sequence[int], rng: np.random.Generator, latent_dim: int = 8,
                 width: int = 64, layers: int = 4, heads: int = 8, dropout: float = 0.1,
                 residual: bool = True, out_scale: float = 0.3):
        self.feature_dims = [int(d) for d in feature_dims]
        self.latent_dim = latent_dim
        self.dropout = dropout
        self.residual = residual
        self.in_proj = [Linear(d, width, rng) for d in self.feature_dims]
        self.encoder = [TransformerBlock(width, heads, rng, dropout=dropout) for _ in range(layers)]
        self.to_stats = Linear(width, 2 * latent_dim, rng)
        self.from_latent = Linear(latent_dim, width, rng)
        self.decoder = [TransformerBlock(width, heads, rng, dropout=dropout) for _ in range(layers)]
        self.out_proj = [Linear(width, d, rng) for d in self.feature_dims]
        _init_log_var_head(self.to_stats, latent_dim)
        if residual:
            for proj in self.out_proj:
                _scale_layer(proj, out_scale)

    def __call__(self, features: Sequence[Tensor], rng: Optional[np.random.Generator] = None,
                 train: bool = False):
        _check_features(features, self.feature_dims)
        x = gc.stack([proj(f) for proj, f in zip(self.in_proj, features)], axis=1)
        for block in self.encoder:
            x = block(x, rng, train)
        mu, log_var = gc.split(self.to_stats(x), [self.latent_dim, self.latent_dim])
        latent = gc.gaussian_sample(mu, log_var, rng) if train else mu
        y = self.from_latent(latent)
        for block in self.decoder:
            y = block(y, rng, train)
        outs = [proj(y[:, i, :]) for i, proj in enumerate(self.out_proj)]
        if self.residual:
            outs = [o + f for o, f in zip(outs, features)]
        return outs, gc.gaussian_kl(mu, log_var)


def build_augmenter(kind: str, feature_dims: Sequence[int], rng: np.random.Generator, **kwargs):
    if kind in ("mlp_vae", "mlp"):
        return MlpVae(feature_dims, rng, **kwargs)
    if kind in ("attention_vae", "attention"):
        return AttentionVae(feature_dims, rng, **kwargs)
    raise ValueError(f"unknown augmentation network {kind!r}")


def augment(g, features: Sequence[Tensor], rng: Optional[np.random.Generator], mode: str = "train"):
    """Run ``g`` on fusion-boundary features; returns (augmented list, encoder KL)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return g(features, rng, train=(mode == "train"))


def vae_param_set(g) -> list:
    return g.parameters()
