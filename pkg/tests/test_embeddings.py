import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saga.embeddings import (TEST, TRAIN, VAL, ClassArtifacts, DatasetIndex, EmbeddingStore, default_spec,
                             pk_batches, read_embedding_file, split_dataset, stratified_subsample,
                             synth_generate, write_embedding_file)
from saga.errors import ConfigError, FormatError, ParameterError, SamplerError, ShapeError, UnknownLabelError
from saga.labels import GeneratorManifest


def lag1_autocorrelation(frames):
    """Circular lag-1 autocorrelation of each video's per-frame mean."""
    x = frames.astype(np.float64).mean(axis=(2, 3))
    x = x - x.mean(axis=1, keepdims=True)
    return (x * np.roll(x, -1, axis=1)).sum(axis=1) / (x * x).sum(axis=1)


def autocorrelation_oracle(store, classes, L):
    """Assign each video to the class whose closed-form lag-1 value cos(2 pi f / L) is nearest."""
    names = [c.name for c in classes]
    y = np.array([names.index(g) for g in store.generator_ids])
    targets = np.array([math.cos(2 * math.pi * c.base_motion_freq / L) for c in classes])
    r = lag1_autocorrelation(store.frames)
    pred = np.argmin(np.abs(r[:, None] - targets[None, :]), axis=1)
    return float((pred == y).mean())


def toy_index(counts, seed=0, L=2, l_t=1, d_t=8):
    """Index with ``counts[c]`` items of generator ``c`` (generator 0 is Real)."""
    gens = [{"id": "Real", "task": "REAL", "sd": "NONE", "team": "Real"}]
    gens += [{"id": f"G{c}", "task": "T2V", "sd": "SD15", "team": f"T{c}"} for c in range(1, len(counts))]
    manifest = GeneratorManifest.from_dict({"generators": gens})
    gids = [g["id"] for g, n in zip(gens, counts) for _ in range(n)]
    vids = [f"v{i}" for i in range(len(gids))]
    frames = np.random.default_rng(seed).normal(size=(len(gids), L, l_t, d_t)).astype(np.float32)
    return DatasetIndex.build(EmbeddingStore(tuple(vids), tuple(gids), frames), manifest)


class TestFileFormat:
    def test_round_trip_bitwise(self, tmp_path):
        frames = np.random.default_rng(0).normal(size=(10, 3, 2, 8)).astype(np.float32)
        vids, gids = [f"vid-{i}" for i in range(10)], ["Real"] * 5 + ["Gén"] * 5
        p = tmp_path / "x.semb"
        write_embedding_file(p, vids, gids, frames)
        v2, g2, f2 = read_embedding_file(p)
        assert (v2, g2) == (vids, gids)
        assert f2.tobytes() == frames.tobytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.semb"
        write_embedding_file(p, ["a"], ["Real"], np.ones((1, 2, 1, 8), np.float32))
        p.write_bytes(b"XXXX" + p.read_bytes()[4:])
        with pytest.raises(FormatError, match="magic"):
            read_embedding_file(p)

    def test_truncated_payload_names_lengths(self, tmp_path):
        p = tmp_path / "x.semb"
        write_embedding_file(p, ["a"], ["Real"], np.ones((1, 2, 1, 8), np.float32))
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(FormatError, match="expected 64 bytes, got 59"):
            read_embedding_file(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "x.semb"
        write_embedding_file(p, ["a"], ["Real"], np.ones((1, 2, 1, 8), np.float32))
        p.write_bytes(p.read_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            read_embedding_file(p)

    def test_store_dims_checked(self):
        with pytest.raises(ShapeError):
            EmbeddingStore(("a",), ("Real",), np.ones((1, 1, 1, 8), np.float32))


class TestIndex:
    def test_unknown_generator_skipped_or_strict(self):
        idx = toy_index([2, 2])
        store = EmbeddingStore(idx.store.video_ids + ("x",), idx.store.generator_ids + ("Other",),
                               np.concatenate([idx.store.frames, idx.store.frames[:1]]))
        assert len(DatasetIndex.build(store, idx.manifest)) == 4
        with pytest.raises(UnknownLabelError):
            DatasetIndex.build(store, idx.manifest, strict=True)

    def test_split_index_round_trip(self, tmp_path):
        idx = split_dataset(toy_index([10, 10]), (0.6, 0.2, 0.2), seed=0)
        idx.save_index(tmp_path / "s.json")
        again = idx.with_splits(np.zeros(len(idx), np.int8)).load_splits(tmp_path / "s.json")
        assert np.array_equal(again.splits, idx.splits)


class TestSplit:
    def test_exact_counts(self):
        idx = split_dataset(toy_index([100] * 3), (0.8, 0.1, 0.1), seed=0)
        y = idx.labels_at("GEN")
        for c in range(3):
            assert [int(((y == c) & (idx.splits == s)).sum()) for s in (TRAIN, VAL, TEST)] == [80, 10, 10]

    def test_seed_changes_membership_not_counts(self):
        a = split_dataset(toy_index([100] * 3), (0.8, 0.1, 0.1), seed=0)
        b = split_dataset(toy_index([100] * 3), (0.8, 0.1, 0.1), seed=1)
        assert not np.array_equal(a.splits, b.splits)
        assert np.array_equal(np.bincount(a.splits), np.bincount(b.splits))

    def test_bad_fractions(self):
        with pytest.raises(ParameterError):
            split_dataset(toy_index([10, 10]), (0.5, 0.5, 0.1), seed=0)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(3, 60), seed=st.integers(0, 1000))
    def test_every_item_assigned_once(self, n, seed):
        idx = split_dataset(toy_index([n, n]), (0.7, 0.15, 0.15), seed=seed)
        assert sum(len(idx.split(s)) for s in (TRAIN, VAL, TEST)) == 2 * n


class TestSubsample:
    def test_floor_binds(self):
        sub = stratified_subsample(toy_index([100] * 3), 0.005, floor=2, seed=0)
        assert sub.class_counts().tolist() == [2, 2, 2]

    def test_full_fraction_is_identity(self):
        idx = toy_index([7, 9])
        assert np.array_equal(stratified_subsample(idx, 1.0, seed=4).rows, idx.rows)

    def test_bad_fraction(self):
        with pytest.raises(ParameterError):
            stratified_subsample(toy_index([5, 5]), 0.0)


class TestPKBatches:
    def test_shape_and_classes(self):
        y = np.repeat(np.arange(6), 20)
        for batch in pk_batches(y, P=4, K=4, seed=0):
            assert batch.size == 16
            assert np.unique(y[batch]).size == 4
            assert all((y[batch] == c).sum() == 4 for c in np.unique(y[batch]))

    def test_k1_rejected(self):
        with pytest.raises(SamplerError):
            next(pk_batches(np.repeat(np.arange(3), 5), P=2, K=1, seed=0))

    def test_too_few_classes(self):
        with pytest.raises(SamplerError):
            next(pk_batches(np.repeat(np.arange(2), 5), P=3, K=2, seed=0))

    def test_deterministic_per_epoch(self):
        y = np.repeat(np.arange(4), 9)
        a = [b.tolist() for b in pk_batches(y, 2, 3, seed=5, epoch=1)]
        b = [b.tolist() for b in pk_batches(y, 2, 3, seed=5, epoch=1)]
        c = [b.tolist() for b in pk_batches(y, 2, 3, seed=5, epoch=2)]
        assert a == b and a != c

    @settings(max_examples=40, deadline=None)
    @given(n_classes=st.integers(2, 6), per_k=st.integers(1, 5), K=st.integers(2, 4),
           P=st.integers(2, 6), seed=st.integers(0, 10_000))
    def test_epoch_covers_every_item(self, n_classes, per_k, K, P, seed):
        P = min(P, n_classes)
        y = np.repeat(np.arange(n_classes), per_k * K)
        seen = np.concatenate(list(pk_batches(y, P, K, seed)))
        assert set(seen.tolist()) == set(range(y.size))


class TestSynthetic:
    def test_deterministic_files(self, tmp_path):
        spec = default_spec(videos_per_class=5, seed=2)
        for name in ("a", "b"):
            store, _ = synth_generate(spec)
            write_embedding_file(tmp_path / name, store.video_ids, store.generator_ids, store.frames)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_items_regenerate_in_isolation(self):
        big, _ = synth_generate(default_spec(videos_per_class=6, seed=2))
        small, _ = synth_generate(default_spec(videos_per_class=3, seed=2))
        # first three items of the first class share their lanes
        assert np.array_equal(big.frames[:3], small.frames[:3])

    def test_default_contract(self):
        spec = default_spec()
        assert spec.videos_per_class == 2000 and len(spec.classes) == 6
        groups = [c.overlap_group for c in spec.classes]
        assert groups[4] == groups[5] is not None and groups.count(groups[4]) == 2
        assert spec.held_out and all(c.name not in spec.manifest() for c in spec.held_out)

    def test_overlap_group_validation(self):
        spec = default_spec(videos_per_class=2)
        a, b = spec.classes[4], spec.classes[5]
        with pytest.raises(ConfigError):
            replace(spec, classes=spec.classes[:5] + (replace(b, drift_rate=a.drift_rate + 0.1),)).validate()
        with pytest.raises(ConfigError):
            replace(spec, classes=spec.classes[:5] + (replace(b, noise_scale=a.noise_scale * 1.5),)).validate()

    def test_spec_dict_round_trip(self):
        spec = default_spec(videos_per_class=3)
        assert type(spec).from_dict(spec.to_dict()) == spec

    def test_autocorrelation_separates_frequencies(self):
        base = default_spec(videos_per_class=100, seed=0)
        ref = base.classes[1]
        classes = (replace(base.classes[0], base_motion_freq=1.0, drift_rate=0.0, blend_factor=0.0,
                           noise_scale=ref.noise_scale),
                   replace(ref, base_motion_freq=3.0, drift_rate=0.0, blend_factor=0.0, overlap_group=None))
        store, _ = synth_generate(replace(base, classes=classes, held_out=()))
        assert autocorrelation_oracle(store, classes, base.L) > 0.99

    def test_autocorrelation_cannot_split_overlap_pair(self):
        base = default_spec(videos_per_class=100, seed=0)
        pair = tuple(c for c in base.classes if c.overlap_group is not None)
        real = base.classes[0]
        store, _ = synth_generate(replace(base, classes=(real,) + pair, held_out=()))
        keep = [i for i, g in enumerate(store.generator_ids) if g != real.name]
        sub = EmbeddingStore(tuple(store.video_ids[i] for i in keep), tuple(store.generator_ids[i] for i in keep),
                             store.frames[keep])
        assert autocorrelation_oracle(sub, pair, base.L) <= 0.60


@pytest.mark.parametrize("spread", [-0.1, 1.5])
def test_phase_spread_out_of_range(spread):
    with pytest.raises(ParameterError):
        synth_generate(default_spec(videos_per_class=2, phase_spread=spread))


def test_narrow_phase_spread_makes_class_means_consistent():
    def mean_frame_spread(spread):
        spec = default_spec(videos_per_class=200, n_classes=2, overlap_pair=None, phase_spread=spread,
                            held_out=())
        store, _ = synth_generate(spec)
        curves = store.frames[:200].mean(axis=(2, 3))
        return curves.std(axis=0).mean()

    assert mean_frame_spread(0.1) < 0.5 * mean_frame_spread(1.0)
