import numpy as np
import pytest

from lemda import gradcore as gc
from lemda.augnet import AttentionVae, MlpVae, augment, build_augmenter, vae_param_set
from lemda.fusionnet import TaskNetwork
from gradcases import small_specs


def _features(rng, dims, b=5):
    return [gc.Tensor(rng.standard_normal((b, d))) for d in dims]


@pytest.mark.parametrize("kind", ["mlp_vae", "attention_vae"])
@pytest.mark.parametrize("mode", ["train", "eval"])
def test_shapes_preserved(kind, mode):
    rng = np.random.default_rng(0)
    kw = dict(width=16, layers=1, heads=2) if kind == "attention_vae" else {}
    g = build_augmenter(kind, [16, 8], rng, **kw)
    out, kl = augment(g, _features(rng, [16, 8]), rng, mode)
    assert [o.shape for o in out] == [(5, 16), (5, 8)]
    assert kl.ndim == 0 and kl.item() >= 0


def test_eval_mode_is_deterministic():
    rng = np.random.default_rng(1)
    g = MlpVae([4, 4], rng)
    feats = _features(rng, [4, 4])
    a, _ = augment(g, feats, np.random.default_rng(0), "eval")
    b, _ = augment(g, feats, np.random.default_rng(99), "eval")
    np.testing.assert_array_equal(a[0].data, b[0].data)


def test_bad_mode_and_bad_shapes():
    rng = np.random.default_rng(2)
    g = MlpVae([4, 3], rng)
    with pytest.raises(ValueError):
        augment(g, _features(rng, [4, 3]), rng, "test")
    with pytest.raises(gc.DimensionError):
        g(_features(rng, [4, 4]), rng)


def test_parameter_count_by_hand():
    # encoder 24 -> 32 -> (8, 8), decoder 8 -> 32 -> 24
    g = MlpVae([16, 8], np.random.default_rng(0), latent_dim=8, hidden=32)
    expected = (24 * 32 + 32) + (32 * 16 + 16) + (8 * 32 + 32) + (32 * 24 + 24)
    assert g.num_parameters() == expected == 2408


def test_param_sets_are_disjoint():
    rng = np.random.default_rng(3)
    f = TaskNetwork(small_specs(), 2, rng)
    for g in (MlpVae(f.feature_dims, rng), AttentionVae(f.feature_dims, rng, width=8, layers=1, heads=2)):
        ids_g = {id(p) for p in vae_param_set(g)}
        assert ids_g.isdisjoint(id(p) for p in f.parameters())
        assert len(ids_g) == len(vae_param_set(g))


def test_residual_starts_near_identity():
    rng = np.random.default_rng(4)
    feats = _features(rng, [6, 6], b=50)
    near = MlpVae([6, 6], np.random.default_rng(0), out_scale=0.01)
    out, _ = near(feats, train=False)
    assert np.abs(out[0].data - feats[0].data).max() < 0.05


def test_log_var_head_starts_small():
    g = MlpVae([4], np.random.default_rng(5), latent_dim=3)
    _, log_var = g.encode([gc.Tensor(np.random.default_rng(0).standard_normal((6, 4)))])
    np.testing.assert_allclose(log_var.data, -2.0, atol=0.05)


def test_attention_vae_token_count_and_widths():
    rng = np.random.default_rng(6)
    g = AttentionVae([5, 3, 7], rng, width=8, layers=2, heads=4)
    out, _ = g(_features(rng, [5, 3, 7], b=2), rng, train=True)
    assert [o.shape for o in out] == [(2, 5), (2, 3), (2, 7)]
