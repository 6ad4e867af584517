"""Reading the scene-generator's dataset layout and curriculum scheduling.

A training corpus is one or more generated pair datasets ("shards"), each
carrying its generation config in manifest.json. Shards generated with a
higher SNR floor become eligible first; as the curriculum floor decays,
harder shards join the sampling pool.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ToyModelConfig


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Minimal RIFF/WAVE reader: PCM16 and float32, mono or mixed-down."""
    raw = Path(path).read_bytes()
    if raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path} is not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        size = struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        body = raw[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif audio_format == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raise ValueError(f"{path}: unsupported wav format {audio_format}/{bits}")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples, sample_rate


def rasterize_events(events: list[tuple[float, float]], frame_rate: float,
                     n_frames: int) -> np.ndarray:
    """Frame i is 1 iff its center (i + 0.5)/frame_rate lies in some event."""
    bits = np.zeros(n_frames, dtype=np.float32)
    centers = (np.arange(n_frames) + 0.5) / frame_rate
    for onset, offset in events:
        bits[(centers >= onset) & (centers < offset)] = 1.0
    return bits


@dataclass(frozen=True)
class PairRecord:
    item_id: str
    support_wav: Path
    query_wav: Path
    support_events: tuple[tuple[float, float], ...]
    query_events: tuple[tuple[float, float], ...]
    min_target_snr: float


@dataclass(frozen=True)
class Shard:
    root: Path
    snr_floor: float
    records: tuple[PairRecord, ...]

    def __len__(self) -> int:
        return len(self.records)


def load_shard(root: str | Path) -> Shard:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("kind") != "scene-pairs":
        raise ValueError(f"{root} is not a generated pair dataset")
    records = []
    for item_id in manifest["ids"]:
        payload = json.loads((root / "scenes" / f"{item_id}.json").read_text())
        target_snrs = [
            ev["snr_db"]
            for side in ("support", "query")
            for ev in payload[side]["provenance"]["events"]
            if ev["group"] == "target"
        ]
        records.append(PairRecord(
            item_id=item_id,
            support_wav=root / payload["support"]["wav"],
            query_wav=root / payload["query"]["wav"],
            support_events=tuple(tuple(e) for e in payload["support"]["events"]),
            query_events=tuple(tuple(e) for e in payload["query"]["events"]),
            min_target_snr=min(target_snrs) if target_snrs else 0.0,
        ))
    return Shard(root=root, snr_floor=float(manifest["config"]["snr_floor"]),
                 records=tuple(records))


class CurriculumSampler:
    """Samples pairs from shards whose SNR floor the schedule has unlocked."""

    def __init__(self, shards: list[Shard], cfg: ToyModelConfig):
        if not shards:
            raise ValueError("no training shards")
        self.shards = sorted(shards, key=lambda s: -s.snr_floor)
        self.cfg = cfg

    def eligible(self, step: int) -> list[Shard]:
        floor = self.cfg.curriculum_floor(step)
        pool = [s for s in self.shards if s.snr_floor >= floor - 1e-9]
        return pool or [self.shards[0]]

    def sample(self, step: int, rng: np.random.Generator) -> list[PairRecord]:
        pool = self.eligible(step)
        counts = np.array([len(s) for s in pool], dtype=np.float64)
        out = []
        for _ in range(self.cfg.batch_size):
            shard = pool[rng.choice(len(pool), p=counts / counts.sum())]
            out.append(shard.records[rng.integers(len(shard))])
        return out


def _fix_length(samples: np.ndarray, n: int) -> np.ndarray:
    if len(samples) >= n:
        return samples[:n]
    return np.concatenate([samples, np.zeros(n - len(samples))])


def collate(records: list[PairRecord], cfg: ToyModelConfig):
    """Batch tensors: support wave, support mask (50 Hz), query wave, labels."""
    import torch

    sr = cfg.sample_rate
    n_s, n_q = int(cfg.dur_s * sr), int(cfg.dur_q * sr)
    t_s = n_s // (cfg.hop * cfg.temporal_pool)
    t_q = n_q // (cfg.hop * cfg.temporal_pool)
    sup, qry, masks, labels = [], [], [], []
    for rec in records:
        s, rate = read_wav(rec.support_wav)
        if rate != sr:
            raise ValueError(f"{rec.support_wav}: rate {rate} != {sr}")
        q, _ = read_wav(rec.query_wav)
        sup.append(_fix_length(s, n_s))
        qry.append(_fix_length(q, n_q))
        masks.append(rasterize_events(list(rec.support_events), cfg.frame_rate, t_s))
        labels.append(rasterize_events(list(rec.query_events), cfg.frame_rate, t_q))
    to = lambda arr: torch.from_numpy(np.stack(arr)).float()
    return to(sup), to(masks), to(qry), to(labels)
