import numpy as np
import pytest

from lemda.datagen import (IngestError, IngestSchema, SchemaError, export_csv, gen_complementary,
                           gen_figure3_scenario, gen_perfect_correlation, ingest_tabular_text)
from lemda.fusionnet import PAD, TaskNetwork
from lemda.trainer import TrainConfig, accuracy, train
from probes import nearest_centroid_accuracy, single_modality_accuracy


def test_perfect_correlation_centroid_oracle():
    d = gen_perfect_correlation(200, 3, noise=0.0, seed=1)
    tr = d.split("train")
    assert nearest_centroid_accuracy(tr.values[0], tr.labels) == 1.0


def test_perfect_correlation_is_stratified_and_seeded():
    d = gen_perfect_correlation(301, 4, noise=0.3, seed=2)
    counts = np.bincount(d.labels, minlength=4)
    assert counts.max() - counts.min() <= 1
    again = gen_perfect_correlation(301, 4, noise=0.3, seed=2)
    for a, b in zip(d.values, again.values):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(d.train_idx, again.train_idx)


def test_splits_disjoint_and_covering():
    d = gen_complementary(100, seed=0, split=(60, 20, 20))
    allidx = np.concatenate([d.train_idx, d.val_idx, d.test_idx])
    np.testing.assert_array_equal(np.sort(allidx), np.arange(100))
    assert (len(d.train_idx), len(d.val_idx), len(d.test_idx)) == (60, 20, 20)


def test_complementary_label_balance():
    d = gen_complementary(2000, noise=0.8, seed=3)
    assert abs(d.labels.mean() - 0.5) <= 0.03
    bits = d.params["bits"]
    np.testing.assert_array_equal(d.labels, bits[:, 0] ^ bits[:, 1])


@pytest.mark.parametrize("m", [0, 1])
def test_single_modality_probe_is_chance(m):
    d = gen_complementary(2200, noise=0.8, seed=4, split=(200, 0, 2000))
    assert 0.45 <= single_modality_accuracy(d, m) <= 0.55


def test_noise_free_fusion_is_perfect():
    d = gen_complementary(600, noise=0.0, seed=5, split=(300, 100, 200))
    f = TaskNetwork(d.specs, 2, np.random.default_rng(0), hidden=32)
    train(f, None, d, TrainConfig(epochs=30, lr_f=3e-3))
    assert accuracy(f, d.split("test")) == 1.0


def test_figure3_scenario_geometry():
    _, probe = gen_figure3_scenario(0)
    d1 = np.linalg.norm(probe.d1 - probe.src)
    d2 = np.linalg.norm(probe.d2 - probe.src)
    assert abs(d1 - d2) <= 1e-9
    pred = probe.predicted(np.stack([probe.src, probe.d1, probe.d2]))
    assert pred[0] == probe.src_label == pred[1] and pred[2] != probe.src_label
    loss = probe.task_loss(np.stack([probe.d1, probe.d2]))
    assert abs(loss[0] - loss[1]) <= 0.05 * max(loss)
    cons = probe.consistency(np.stack([probe.d1, probe.d2]))
    assert cons[1] > cons[0]


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ingest_split_counts(tmp_path):
    rows = "\n".join(f"{i % 2},{i * 1.5},red,w{i} common" for i in range(10))
    p = _write(tmp_path / "d.csv", "y,x,colour,txt\n" + rows + "\n")
    d = ingest_tabular_text(p, IngestSchema("y", ["x"], ["colour"], ["txt"]))
    assert (len(d.train_idx), len(d.val_idx), len(d.test_idx)) == (8, 1, 1)


def test_ingest_unknown_category_and_word(tmp_path):
    lines = ["y,colour,txt"] + [f"{i % 2},{'red' if i % 2 else 'blue'},hello there" for i in range(10)]
    p = _write(tmp_path / "d.csv", "\n".join(lines) + "\n")
    schema = IngestSchema("y", categorical=["colour"], text=["txt"])
    d = ingest_tabular_text(p, schema)
    test_row = d.test_idx[0]
    lines[1 + test_row] = f"{test_row % 2},purple,unseenword there"
    _write(p, "\n".join(lines) + "\n")
    d = ingest_tabular_text(p, schema)
    assert d.values[0][test_row, 0] == 0
    assert d.values[1][test_row, 0] == 0 and d.values[1][test_row, 1] > 0
    assert d.values[0][d.train_idx].min() >= 1


def test_ingest_zscore_uses_train(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["y,a,b"] + [f"{i % 2},{rng.normal(5, 3)!r},{rng.normal(-2, 0.5)!r}" for i in range(40)]
    d = ingest_tabular_text(_write(tmp_path / "d.csv", "\n".join(lines)), IngestSchema("y", ["a", "b"]))
    x = d.values[0][d.train_idx]
    np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(x.std(axis=0), 1.0, atol=1e-9)


def test_ingest_errors(tmp_path):
    p = _write(tmp_path / "d.csv", "y,a\n0,1\n1,oops\n0,2\n1,x\n")
    with pytest.raises(IngestError) as info:
        ingest_tabular_text(p, IngestSchema("y", ["a"]))
    assert info.value.rows == [2, 4]
    with pytest.raises(SchemaError):
        ingest_tabular_text(p, IngestSchema("y", ["missing"]))


def test_ingest_jsonl(tmp_path):
    lines = [f'{{"y": {i % 2}, "a": {i}, "t": "w{i % 3}"}}' for i in range(10)]
    d = ingest_tabular_text(_write(tmp_path / "d.jsonl", "\n".join(lines)), IngestSchema("y", ["a"], text=["t"]))
    assert d.num_classes == 2 and len(d.specs) == 2


def test_export_round_trip(tmp_path):
    d = gen_complementary(50, noise=0.5, seed=6)
    schema = export_csv(d, tmp_path / "e.csv")
    back = ingest_tabular_text(tmp_path / "e.csv", schema)
    np.testing.assert_array_equal(back.labels, d.labels)
    assert back.values[1].shape[0] == 50 and np.all(back.values[1][:, 0] != PAD)
