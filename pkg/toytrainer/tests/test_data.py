import numpy as np
import pytest

from toytrainer.config import ToyModelConfig
from toytrainer.data import (
    CurriculumSampler,
    collate,
    load_shard,
    rasterize_events,
    read_wav,
)
from toytrainer.windows import mask_runs, out_frames, query_windows, support_windows

from tests.conftest import SR, write_wav_f32


class TestWavReader:
    def test_float32_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = (0.3 * rng.standard_normal(1000)).astype(np.float32)
        write_wav_f32(tmp_path / "t.wav", x)
        samples, sr = read_wav(tmp_path / "t.wav")
        assert sr == SR
        assert np.allclose(samples, x.astype(np.float64))

    def test_rejects_non_wav(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"not a wav file....")
        with pytest.raises(ValueError):
            read_wav(tmp_path / "bad.wav")


class TestRasterize:
    def test_frame_center_rule(self):
        bits = rasterize_events([(0.02, 0.06)], 50.0, 100)
        assert set(np.flatnonzero(bits)) == {1, 2}

    def test_empty(self):
        assert not rasterize_events([], 50.0, 50).any()


class TestShard:
    def test_load_shard(self, mini_shard):
        shard = load_shard(mini_shard)
        assert shard.snr_floor == -10.0
        assert len(shard) == 3
        rec = shard.records[0]
        assert rec.support_events == ((0.5, 1.0), (2.0, 2.4))
        assert rec.min_target_snr == -3.0

    def test_collate_shapes(self, mini_shard):
        cfg = ToyModelConfig(dur_s=4.0, dur_q=2.0, batch_size=2)
        shard = load_shard(mini_shard)
        support, mask, query, labels = collate(list(shard.records[:2]), cfg)
        assert support.shape == (2, 4 * SR)
        assert query.shape == (2, 2 * SR)
        assert mask.shape == (2, 200)
        assert labels.shape == (2, 100)
        assert mask[0].sum() > 0 and labels[0].sum() > 0


class TestCurriculum:
    def _sampler(self, mini_shard, tmp_path):
        from tests.conftest import write_pair_dataset

        easy = load_shard(mini_shard)
        # a second, harder shard
        import json, shutil

        hard_root = tmp_path / "hard"
        shutil.copytree(mini_shard, hard_root)
        manifest = json.loads((hard_root / "manifest.json").read_text())
        manifest["config"]["snr_floor"] = -20.0
        (hard_root / "manifest.json").write_text(json.dumps(manifest))
        hard = load_shard(hard_root)
        cfg = ToyModelConfig(curriculum_steps=100, snr_start_db=-10.0,
                             snr_floor_db=-20.0, batch_size=2)
        return CurriculumSampler([easy, hard], cfg), cfg

    def test_floor_schedule_non_increasing(self):
        cfg = ToyModelConfig(curriculum_steps=50)
        floors = [cfg.curriculum_floor(t) for t in range(80)]
        assert floors[0] == cfg.snr_start_db
        assert floors[-1] == cfg.snr_floor_db
        assert all(a >= b for a, b in zip(floors, floors[1:]))

    def test_hard_shard_unlocks_later(self, mini_shard, tmp_path):
        sampler, cfg = self._sampler(mini_shard, tmp_path)
        assert [s.snr_floor for s in sampler.eligible(0)] == [-10.0]
        assert [s.snr_floor for s in sampler.eligible(100)] == [-10.0, -20.0]

    def test_sampled_records_respect_floor(self, mini_shard, tmp_path):
        sampler, cfg = self._sampler(mini_shard, tmp_path)
        rng = np.random.default_rng(1)
        for step in (0, 10, 99):
            floor = cfg.curriculum_floor(step)
            for shard in sampler.eligible(step):
                assert shard.snr_floor >= floor - 1e-9
            records = sampler.sample(step, rng)
            assert len(records) == cfg.batch_size


class TestWindows:
    def test_mask_runs(self):
        bits = np.array([0, 1, 1, 0, 0, 1], dtype=np.float32)
        assert mask_runs(bits) == [(1, 3), (5, 6)]

    def test_support_windows_centered(self):
        wave = np.zeros(20 * SR)
        mask = np.zeros(1000, dtype=np.float32)
        mask[500:520] = 1.0  # event at 10.0-10.4 s
        wins = support_windows(wave, mask, 4.0, SR)
        assert len(wins) == 1
        w, bits = wins[0]
        assert len(w) == 4 * SR
        assert len(bits) == 200
        assert bits.sum() == 20  # the event stays inside the window

    def test_support_window_whole_file_when_short(self):
        wave = np.zeros(2 * SR)
        mask = np.zeros(100, dtype=np.float32)
        mask[10:20] = 1.0
        wins = support_windows(wave, mask, 10.0, SR)
        assert len(wins[0][0]) == 2 * SR

    def test_query_tiling(self):
        wave = np.ones(int(2.5 * SR))
        wins = query_windows(wave, 1.0, SR)
        assert len(wins) == 3
        assert all(len(w) == SR for w in wins)
        assert np.all(wins[2][SR // 2 :] == 0.0)

    def test_out_frames(self):
        assert out_frames(10 * SR, SR) == 500
        assert out_frames(SR, SR) == 50
