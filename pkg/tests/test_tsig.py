import json

import numpy as np
import pytest

from saga.errors import ConfigError, ShapeError
from saga.model import Model, ModelConfig, build_model
from saga.tensor import Prng
from saga.tsig import (AVERAGED, TSig, class_signatures, compute_signature, export_heatmap, extract_attention,
                       normalize_signature, read_heatmap_csv, read_pgm, signature_distance,
                       signature_from_attention, split_half_stability, unseen_signature_probe)

CFG = ModelConfig(d_t=64, l_t=16, L_max=16, n_heads=4, depth=3, mlp_hidden=64, n_classes=6)


@pytest.fixture(scope="module")
def model():
    return build_model(CFG, Prng(0))


def test_default_source_block():
    assert ModelConfig().tsig_block == 4


class TestExtraction:
    def test_rows_stochastic_and_deterministic(self, model, small_index):
        frames = small_index.frames(np.arange(5))
        a = extract_attention(model, frames)
        assert a.shape == (5, CFG.n_heads, 8, 8)
        assert np.abs(a.sum(axis=-1) - 1).max() < 1e-5
        assert np.array_equal(a, extract_attention(model, frames))

    def test_single_video(self, model, small_index):
        a = extract_attention(model, small_index.item(0))
        assert a.shape == (CFG.n_heads, 8, 8)

    def test_restores_training_mode(self, model, small_index):
        model.train(seed=1)
        extract_attention(model, small_index.frames(np.arange(2)))
        assert model.training
        model.eval()

    def test_shallow_model_rejected(self):
        shallow = Model(ModelConfig(depth=1), {})
        with pytest.raises(ConfigError):
            extract_attention(shallow, np.zeros((1, 4, 16, 64)))

    def test_mixed_lengths_rejected(self, model):
        with pytest.raises(ShapeError):
            compute_signature(model, [np.zeros((4, 16, 64)), np.zeros((5, 16, 64))])


class TestSignature:
    def test_identical_videos(self):
        A = np.random.default_rng(0).dirichlet(np.ones(6), size=(2, 6))
        sig = signature_from_attention(np.stack([A, A, A]))
        expect, _ = normalize_signature(A.mean(axis=0))
        assert np.allclose(sig.matrix, expect, atol=1e-15)
        assert sig.n_videos == 3 and sig.head_mode == AVERAGED

    def test_constant_attention_is_degenerate(self):
        sig = signature_from_attention(np.full((2, 2, 5, 5), 0.2))
        assert sig.degenerate and np.all(sig.matrix == 0)

    def test_range(self, model, small_index):
        sig = compute_signature(model, small_index.frames(np.arange(10)), class_id="x")
        assert sig.matrix.min() == 0.0 and sig.matrix.max() == 1.0
        assert sig.source_block == CFG.tsig_block and sig.L == 8

    def test_per_head(self, model, small_index):
        sig = compute_signature(model, small_index.frames(np.arange(4)), head=2)
        assert sig.head == 2 and sig.head_mode == "PER_HEAD(2)"
        with pytest.raises(ConfigError):
            compute_signature(model, small_index.frames(np.arange(4)), head=CFG.n_heads)

    def test_split_half_needs_two(self):
        with pytest.raises(ShapeError):
            split_half_stability(np.ones((1, 2, 3, 3)) / 3, seed=0)


class TestDistance:
    def test_self(self):
        s = np.random.default_rng(1).random((4, 4))
        cos, fro = signature_distance(s, s)
        assert abs(cos - 1.0) < 1e-12 and fro == 0.0

    def test_orthogonal(self):
        a, b = np.zeros((3, 3)), np.zeros((3, 3))
        a[0, 0], b[1, 2] = 1.0, 1.0
        assert signature_distance(a, b)[0] == 0.0

    def test_zero_signature(self):
        assert signature_distance(np.zeros((2, 2)), np.eye(2)) == (0.0, pytest.approx(np.sqrt(2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            signature_distance(np.eye(2), np.eye(3))


class TestExport:
    def test_zero_signature(self, tmp_path):
        sig = TSig(np.zeros((4, 4)), "z", 1, 0, degenerate=True)
        pgm, csv_path = export_heatmap(sig, tmp_path / "z")
        assert pgm.read_bytes() == b"P5\n4 4\n255\n" + bytes(16)
        assert np.all(read_heatmap_csv(csv_path) == 0)

    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(2).random((6, 6))
        m, _ = normalize_signature(m)
        pgm, csv_path = export_heatmap(TSig(m, "r", 3, 4), tmp_path / "r")
        assert pgm.read_bytes().startswith(b"P5\n6 6\n255\n")
        assert np.abs(read_heatmap_csv(csv_path) - m).max() < 1e-6
        assert np.array_equal(read_pgm(pgm), np.floor(255 * m + 0.5).astype(np.uint8))


class TestClassSignatures:
    def test_report(self, model, small_index, tmp_path):
        sigs, rep = class_signatures(model, small_index, seed=0)
        names = small_index.manifest.classes_at_level("GEN").names
        assert list(sigs) == list(names)
        assert rep.cosine.shape == (6, 6) and np.allclose(np.diag(rep.cosine), 1.0)
        assert set(rep.stability) == set(names)
        rep.save(tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["max_inter"] == rep.max_inter and d["min_intra"] == rep.min_intra

    def test_unknown_class(self, model, small_index):
        with pytest.raises(ConfigError):
            class_signatures(model, small_index, classes=["Nope"])

    def test_probe(self, model, small_index):
        sigs, _ = class_signatures(model, small_index, classes=["Real", "GenB"])
        labels = small_index.labels_at("GEN")
        pos = np.flatnonzero(labels == 2)
        sig, probe = unseen_signature_probe(model, small_index.frames(pos), sigs, "probe")
        assert probe["nearest"] == "GenB" and abs(probe["similarity"]["GenB"] - 1.0) < 1e-12
        single, info = unseen_signature_probe(model, small_index.frames(pos[:1]), sigs)
        assert single.n_videos == 1 and info["n_videos"] == 1
