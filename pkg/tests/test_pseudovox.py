import numpy as np
import pytest

from bioscene.core import AudioBuffer
from bioscene.pseudovox import (
    amplitude_envelope,
    build_library,
    cluster_levels,
    cluster_multilevel,
    embed,
    extract_segments,
    fit_quality_filter,
    kmeans_fit,
    load_library,
    read_embedding_file,
    save_library,
)

SR = 16000


def brute_force_envelope(samples, sr):
    win = int(round(0.025 * sr))
    hop = int(round(0.010 * sr))
    count = max(1, int(np.ceil(len(samples) / hop)))
    env = []
    for i in range(count):
        seg = samples[i * hop : i * hop + win]
        env.append(np.sqrt(np.mean(seg**2)) if len(seg) else 0.0)
    return np.array(env)


class TestEnvelope:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(3 * SR) * np.linspace(0, 1, 3 * SR)
        fast = amplitude_envelope(AudioBuffer(x, SR))
        slow = brute_force_envelope(x, SR)
        assert fast.shape == slow.shape
        assert np.allclose(fast, slow)


class TestExtractSegments:
    def test_single_burst(self):
        x = np.zeros(4 * SR)
        burst = 0.9 * np.sin(2 * np.pi * 700 * np.arange(SR // 2) / SR)
        x[2 * SR : 2 * SR + SR // 2] = burst
        segs = extract_segments(AudioBuffer(x, SR))
        assert len(segs) == 1
        _, iv = segs[0]
        assert iv.onset == pytest.approx(2.0, abs=0.04)
        assert iv.offset == pytest.approx(2.5, abs=0.04)

    def test_constant_tone_whole_file(self):
        x = 0.8 * np.sin(2 * np.pi * 500 * np.arange(2 * SR) / SR)
        segs = extract_segments(AudioBuffer(x, SR))
        assert len(segs) == 1
        _, iv = segs[0]
        assert iv.onset == 0.0
        assert iv.offset == pytest.approx(2.0, abs=0.03)

    def test_long_tone_split_at_max_dur(self):
        x = 0.8 * np.sin(2 * np.pi * 500 * np.arange(5 * SR) / SR)
        segs = extract_segments(AudioBuffer(x, SR), max_dur=2.0)
        assert len(segs) >= 2
        for _, iv in segs:
            assert iv.duration <= 2.0 + 0.03

    def test_quiet_burst_excluded(self):
        x = np.zeros(4 * SR)
        x[SR : SR + SR // 2] = 1.0  # dominant burst
        x[3 * SR : 3 * SR + SR // 2] = 0.20  # 20% of max < 25% threshold
        segs = extract_segments(AudioBuffer(x, SR))
        assert len(segs) == 1
        _, iv = segs[0]
        assert iv.onset == pytest.approx(1.0, abs=0.04)

    def test_silence_empty(self):
        assert extract_segments(AudioBuffer(np.zeros(SR), SR)) == []

    def test_segments_within_and_above_threshold(self):
        rng = np.random.default_rng(1)
        x = 0.01 * rng.standard_normal(6 * SR)
        for start in (0.5, 2.0, 4.5):
            i = int(start * SR)
            x[i : i + SR // 4] += 0.7 * np.sin(2 * np.pi * 900 * np.arange(SR // 4) / SR)
        audio = AudioBuffer(x, SR)
        env = amplitude_envelope(audio)
        thr = 0.25 * env.max()
        segs = extract_segments(audio)
        assert segs
        prev_end = -1.0
        for clip, iv in segs:
            assert 0.0 <= iv.onset < iv.offset <= audio.duration + 1e-9
            assert iv.onset >= prev_end  # non-overlapping
            prev_end = iv.offset
            seg_env = brute_force_envelope(clip.samples, SR)
            assert seg_env.max() > thr


class TestEmbed:
    def test_deterministic(self):
        rng = np.random.default_rng(2)
        clip = AudioBuffer(0.3 * rng.standard_normal(SR), SR)
        assert np.array_equal(embed(clip), embed(clip))

    def test_dimension_and_norm(self):
        clip = AudioBuffer(0.5 * np.sin(2 * np.pi * 600 * np.arange(SR) / SR), SR)
        v = embed(clip)
        assert v.shape == (512,)
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_amplitude_near_invariance(self):
        rng = np.random.default_rng(3)
        clip = AudioBuffer(0.4 * rng.standard_normal(SR), SR)
        half = AudioBuffer(clip.samples * 0.5, SR)
        cos = float(embed(clip) @ embed(half))
        assert cos > 0.99

    def test_noise_vs_tone_distinct(self):
        rng = np.random.default_rng(4)
        noise = AudioBuffer(0.3 * rng.standard_normal(SR), SR)
        pure = AudioBuffer(0.3 * np.sin(2 * np.pi * 1000 * np.arange(SR) / SR), SR)
        cos = float(embed(noise) @ embed(pure))
        assert cos < 0.9

    def test_short_clip_padded(self):
        clip = AudioBuffer(0.5 * np.ones(300), SR)
        assert embed(clip).shape == (512,)


class TestQualityFilter:
    def test_separable_toy_set(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [4.0, 0.0], [4.0, 1.0]])
        y = np.array([0, 0, 1, 1])
        clf = fit_quality_filter(X, y)
        assert np.array_equal(clf.predict(X), y.astype(bool))

    def test_label_flip_symmetry(self):
        rng = np.random.default_rng(5)
        X = np.r_[rng.normal(0, 1, (30, 3)), rng.normal(3, 1, (30, 3))]
        y = np.r_[np.zeros(30), np.ones(30)]
        a = fit_quality_filter(X, y)
        b = fit_quality_filter(X, 1 - y)
        assert np.allclose(a.weights, -b.weights, atol=1e-3)
        assert a.bias == pytest.approx(-b.bias, abs=1e-3)

    def test_gaussian_blobs_holdout(self):
        rng = np.random.default_rng(6)
        X_tr = np.r_[rng.normal(0, 1, (100, 4)), rng.normal(4, 1, (100, 4))]
        y_tr = np.r_[np.zeros(100), np.ones(100)]
        X_te = np.r_[rng.normal(0, 1, (100, 4)), rng.normal(4, 1, (100, 4))]
        y_te = np.r_[np.zeros(100), np.ones(100)]
        clf = fit_quality_filter(X_tr, y_tr)
        acc = np.mean(clf.predict(X_te) == y_te.astype(bool))
        assert acc > 0.95

    def test_training_accuracy_beats_constant(self):
        rng = np.random.default_rng(7)
        X = rng.normal(0, 1, (40, 2))
        y = (X[:, 0] + 0.3 * rng.normal(size=40) > 0).astype(int)
        clf = fit_quality_filter(X, y)
        acc = np.mean(clf.predict(X) == y.astype(bool))
        assert acc >= max(np.mean(y), 1 - np.mean(y))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fit_quality_filter(np.zeros((4, 2)), np.zeros(4))


class TestKMeans:
    def test_inertia_non_increasing_and_fixed_point(self):
        rng = np.random.default_rng(8)
        X = rng.normal(0, 1, (200, 5))
        labels, centers, history = kmeans_fit(X, 7, seed=0)
        assert all(history[i] >= history[i + 1] - 1e-9 for i in range(len(history) - 1))
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assert np.array_equal(labels, np.argmin(d2, axis=1))

    def test_identical_points_zero_inertia(self):
        X = np.ones((50, 3))
        labels, centers, history = kmeans_fit(X, 4, seed=0)
        assert history[-1] == pytest.approx(0.0)
        assert len(labels) == 50

    def test_separated_blobs_recovered(self):
        rng = np.random.default_rng(9)
        blobs = [rng.normal(c, 0.2, (40, 2)) for c in ((0, 0), (10, 0), (0, 10))]
        X = np.concatenate(blobs)
        truth = np.repeat([0, 1, 2], 40)
        labels, _, _ = kmeans_fit(X, 3, seed=1)
        # partition must equal blob identity up to relabeling
        for b in range(3):
            ids = labels[truth == b]
            assert len(np.unique(ids)) == 1
        assert len(np.unique(labels)) == 3


class TestClusterLevels:
    def test_level_arithmetic(self):
        assert cluster_levels(1024) == [8, 16, 32, 64, 128]

    def test_small_library_rejected(self):
        with pytest.raises(ValueError, match="divisor"):
            cluster_levels(100)

    def test_multilevel_assigns_everyone(self):
        rng = np.random.default_rng(10)
        X = rng.normal(0, 1, (256, 4))
        levels = cluster_multilevel(X, seed=0)
        assert sorted(levels) == [2, 4, 8, 16, 32]
        for k, labels in levels.items():
            assert labels.shape == (256,)
            assert labels.min() >= 0 and labels.max() < k


class TestLibraryPersistence:
    def _toy_library(self):
        rng = np.random.default_rng(11)
        clips = []
        for i in range(140):
            freq = 400 + 50 * (i % 4)
            t = np.arange(int(0.2 * SR)) / SR
            clips.append(AudioBuffer(0.5 * np.sin(2 * np.pi * freq * t)
                                     + 0.01 * rng.standard_normal(len(t)), SR))
        return build_library(clips, divisors=(16, 8), seed=0)

    def test_roundtrip(self, tmp_path):
        lib = self._toy_library()
        save_library(lib, tmp_path / "lib")
        loaded = load_library(tmp_path / "lib", preload_audio=True)
        assert len(loaded) == len(lib)
        assert np.allclose(loaded.embeddings, lib.embeddings)
        assert loaded.levels == lib.levels
        for k in lib.levels:
            assert np.array_equal(loaded.cluster_assignments[k],
                                  lib.cluster_assignments[k])
        a = lib.clip_audio(3)
        b = loaded.clip_audio(3)
        assert np.allclose(a.samples, b.samples, atol=1e-6)

    def test_quality_filter_applied_in_build(self):
        rng = np.random.default_rng(12)
        good = [AudioBuffer(0.5 * np.sin(2 * np.pi * 500 * np.arange(SR) / SR)
                            + 0.01 * rng.standard_normal(SR), SR) for _ in range(80)]
        bad = [AudioBuffer(0.3 * rng.standard_normal(SR), SR) for _ in range(80)]
        X = np.stack([embed(c) for c in good + bad])
        y = np.r_[np.ones(80), np.zeros(80)]
        clf = fit_quality_filter(X, y)
        lib = build_library(good + bad, quality_filter=clf, divisors=(8, 4), seed=0)
        assert 60 <= len(lib) <= 100  # most of the noise filtered out

    def test_embedding_file_ingestion(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("1.0 2.0 3.0\n4.0 5.0 6.0\n", encoding="utf-8")
        emb = read_embedding_file(path)
        assert emb.shape == (2, 3)
        assert emb[1, 2] == 6.0
