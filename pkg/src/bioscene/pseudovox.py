"""Pseudovox library construction: turn unlabeled recordings into a
collection of candidate event clips with pseudo-labels.

Pipeline: envelope segmentation -> embedding -> optional binary quality
filter -> multi-level k-means. The finished library is immutable and is
persisted as a clips/ directory plus a JSON-Lines index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .audio_io import atomic_write_text, read_wav, write_wav
from .core import AudioBuffer, EventInterval
from .dsp import WIN, log_mel

ENVELOPE_WIN_S = 0.025
ENVELOPE_HOP_S = 0.010
DEFAULT_MIN_DUR = 0.05
DEFAULT_MAX_DUR = 10.0
DEFAULT_DIVISORS = (128, 64, 32, 16, 8)


def amplitude_envelope(audio: AudioBuffer) -> np.ndarray:
    """RMS envelope over 25 ms windows at a 10 ms hop."""
    win = int(round(ENVELOPE_WIN_S * audio.sample_rate))
    hop = int(round(ENVELOPE_HOP_S * audio.sample_rate))
    n = len(audio)
    count = max(1, math.ceil(n / hop))
    sq = np.concatenate([np.square(audio.samples), np.zeros(win)])
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    starts = np.arange(count) * hop
    stops = np.minimum(starts + win, n)
    lengths = np.maximum(stops - starts, 1)
    return np.sqrt((csum[stops] - csum[starts]) / lengths)


def _split_long_runs(env: np.ndarray, i0: int, i1: int, max_frames: int) -> list[tuple[int, int]]:
    """Recursively split [i0, i1) at interior envelope minima."""
    if i1 - i0 <= max_frames:
        return [(i0, i1)]
    interior = env[i0 + 1 : i1 - 1]
    if len(interior) == 0:
        return [(i0, i1)]
    cut = i0 + 1 + int(np.argmin(interior))
    return _split_long_runs(env, i0, cut, max_frames) + _split_long_runs(env, cut, i1, max_frames)


def extract_segments(
    audio: AudioBuffer,
    threshold_ratio: float = 0.25,
    min_dur: float = DEFAULT_MIN_DUR,
    max_dur: float = DEFAULT_MAX_DUR,
) -> list[tuple[AudioBuffer, EventInterval]]:
    """Isolate segments where the amplitude envelope exceeds
    threshold_ratio * max(envelope).

    Runs shorter than min_dur are dropped; runs longer than max_dur are split
    at envelope minima. A silent recording yields an empty list.
    """
    if not (0.0 < threshold_ratio < 1.0):
        raise ValueError("threshold_ratio must be in (0, 1)")
    env = amplitude_envelope(audio)
    peak = env.max()
    if peak == 0.0:
        return []
    active = env > threshold_ratio * peak
    padded = np.concatenate(([False], active, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)

    hop = ENVELOPE_HOP_S
    max_frames = max(1, int(round(max_dur / hop)))
    sr = audio.sample_rate
    duration = audio.duration
    out: list[tuple[AudioBuffer, EventInterval]] = []
    for s, e in zip(starts, ends):
        for i0, i1 in _split_long_runs(env, int(s), int(e), max_frames):
            onset = i0 * hop
            offset = min((i1 - 1) * hop + ENVELOPE_WIN_S, duration)
            if offset - onset < min_dur:
                continue
            a = int(math.floor(onset * sr))
            b = int(math.floor(offset * sr))
            clip = AudioBuffer(samples=audio.samples[a:b], sample_rate=sr)
            out.append((clip, EventInterval(onset=onset, offset=offset)))
    return out


def embed(clip: AudioBuffer) -> np.ndarray:
    """Default spectral-statistics embedding: per-mel mean and standard
    deviation of the log-mel frames, L2-normalized (d = 512).

    The mean vector is centered across mel bins, which cancels the additive
    log-gain offset and makes the embedding amplitude-invariant.
    """
    if len(clip) == 0:
        raise ValueError("empty clip")
    samples = clip.samples
    if len(samples) < WIN:
        samples = np.concatenate([samples, np.zeros(WIN - len(samples))])
        clip = AudioBuffer(samples=samples, sample_rate=clip.sample_rate)
    frames = log_mel(clip).frames
    mean_part = frames.mean(axis=0)
    mean_part = mean_part - mean_part.mean()
    vec = np.concatenate([mean_part, frames.std(axis=0)])
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass(frozen=True)
class LinearClassifier:
    """Logistic-loss linear model; apply() returns P(label == 1)."""

    weights: np.ndarray
    bias: float

    def apply(self, embeddings: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(embeddings) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        return self.apply(embeddings) >= 0.5


def fit_quality_filter(embeddings: np.ndarray, labels: np.ndarray) -> LinearClassifier:
    """Train the binary segment-quality filter."""
    from sklearn.linear_model import LogisticRegression

    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if len(np.unique(labels)) < 2:
        raise ValueError("need at least one example of each class")
    model = LogisticRegression(C=1e4, max_iter=5000, tol=1e-8)
    model.fit(embeddings, labels)
    return LinearClassifier(weights=model.coef_[0].copy(), bias=float(model.intercept_[0]))


def kmeans_fit(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 100,
    rtol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Plain Lloyd k-means with k-means++ init and a fixed seed.

    Returns (labels, centers, inertia_history). The final labels are an
    assignment to the final centers, so the result is a fixed point.
    """
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    if not (1 <= k <= m):
        raise ValueError(f"k={k} out of range for {m} points")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(m)]
    closest = np.full(m, np.inf)
    for i in range(1, k):
        d = np.sum(np.square(points - centers[i - 1]), axis=1)
        closest = np.minimum(closest, d)
        total = closest.sum()
        if total <= 0:
            centers[i:] = points[rng.integers(m, size=k - i)]
            break
        centers[i] = points[rng.choice(m, p=closest / total)]

    history: list[float] = []
    labels = np.zeros(m, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(m), labels].sum())
        history.append(inertia)
        for j in range(k):
            sel = labels == j
            if sel.any():
                centers[j] = points[sel].mean(axis=0)
            else:  # re-seed an empty cluster on the worst-fit point
                worst = int(np.argmax(d2[np.arange(m), labels]))
                centers[j] = points[worst]
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if prev - cur <= rtol * max(prev, 1e-12):
                break
    d2 = _sq_dists(points, centers)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(m), labels].sum()))
    return labels, centers, history


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    p2 = np.sum(np.square(points), axis=1)[:, None]
    c2 = np.sum(np.square(centers), axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centers.T, 0.0)


def cluster_levels(m: int, divisors: Sequence[int] = DEFAULT_DIVISORS) -> list[int]:
    """Cluster counts {floor(M/d)} for the configured divisor set."""
    biggest = max(divisors)
    if m < biggest:
        raise ValueError(
            f"{m} clips is fewer than the largest divisor {biggest}; "
            f"lower the divisor set (cluster_divisors) in the config"
        )
    ks = sorted({m // d for d in divisors})
    return [k for k in ks if k >= 1]


def cluster_multilevel(
    embeddings: np.ndarray,
    divisors: Sequence[int] = DEFAULT_DIVISORS,
    seed: int = 0,
) -> dict[int, np.ndarray]:
    """k-means assignments at every homogeneity level k = floor(M/d)."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    assignments: dict[int, np.ndarray] = {}
    for k in cluster_levels(len(embeddings), divisors):
        labels, _, _ = kmeans_fit(embeddings, k, seed=seed)
        assignments[k] = labels
    return assignments


@dataclass(frozen=True)
class ClipEntry:
    path: Optional[str]  # relative to the library root; None if in-memory only
    source: str
    duration: float


@dataclass
class PseudovoxLibrary:
    """Quality-passing clips with embeddings and per-level cluster ids."""

    entries: list[ClipEntry]
    embeddings: np.ndarray
    cluster_assignments: dict[int, np.ndarray] = field(default_factory=dict)
    quality: np.ndarray | None = None
    root: Optional[Path] = None
    _audio: list[AudioBuffer] | None = None

    def __post_init__(self):
        if self.quality is None:
            self.quality = np.ones(len(self.entries), dtype=bool)
        if len(self.entries) != len(self.embeddings):
            raise ValueError("entries and embeddings length mismatch")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def levels(self) -> list[int]:
        return sorted(self.cluster_assignments)

    def clip_audio(self, index: int) -> AudioBuffer:
        if self._audio is not None:
            return self._audio[index]
        entry = self.entries[index]
        if entry.path is None or self.root is None:
            raise ValueError(f"clip {index} has no audio on disk")
        return read_wav(self.root / entry.path)

    def preload(self) -> None:
        if self._audio is None:
            self._audio = [self.clip_audio(i) for i in range(len(self))]

    def nonempty_clusters(self, level: int) -> np.ndarray:
        return np.unique(self.cluster_assignments[level])

    def cluster_members(self, level: int, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_assignments[level] == cluster)


def build_library(
    clips: list[AudioBuffer],
    sources: list[str] | None = None,
    quality_filter: LinearClassifier | None = None,
    divisors: Sequence[int] = DEFAULT_DIVISORS,
    seed: int = 0,
    precomputed_embeddings: np.ndarray | None = None,
) -> PseudovoxLibrary:
    """Assemble a library from clip audio: embed, filter, cluster."""
    if sources is None:
        sources = ["<memory>"] * len(clips)
    if precomputed_embeddings is not None:
        emb = np.asarray(precomputed_embeddings, dtype=np.float64)
        if len(emb) != len(clips):
            raise ValueError("precomputed embeddings do not match clip count")
    else:
        emb = np.stack([embed(c) for c in clips]) if clips else np.zeros((0, 512))
    keep = np.ones(len(clips), dtype=bool)
    if quality_filter is not None and len(clips):
        keep = quality_filter.predict(emb)
    kept_idx = np.flatnonzero(keep)
    kept_clips = [clips[i] for i in kept_idx]
    entries = [
        ClipEntry(path=None, source=sources[i], duration=clips[i].duration)
        for i in kept_idx
    ]
    emb = emb[kept_idx]
    assignments = {}
    if len(entries) and divisors:
        assignments = cluster_multilevel(emb, divisors, seed)
    return PseudovoxLibrary(
        entries=entries,
        embeddings=emb,
        cluster_assignments=assignments,
        _audio=kept_clips,
    )


def save_library(lib: PseudovoxLibrary, root: str | Path) -> None:
    """Persist as clips/NNNNNN.wav + index.jsonl + embeddings.npy."""
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, entry in enumerate(lib.entries):
        rel = entry.path or f"clips/{i:06d}.wav"
        if entry.path is None:
            write_wav(root / rel, lib.clip_audio(i))
        lines.append(json.dumps({
            "clip": rel,
            "source": entry.source,
            "duration": entry.duration,
            "embedding_row": i,
            "quality": bool(lib.quality[i]),
            "clusters": {str(k): int(v[i]) for k, v in lib.cluster_assignments.items()},
        }, sort_keys=True))
    atomic_write_text(root / "index.jsonl", "\n".join(lines) + "\n")
    np.save(root / "embeddings.npy", lib.embeddings)


def load_library(root: str | Path, preload_audio: bool = False) -> PseudovoxLibrary:
    root = Path(root)
    entries, quality, clusters_per_row = [], [], []
    for line in (root / "index.jsonl").read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        entries.append(ClipEntry(path=rec["clip"], source=rec["source"],
                                 duration=rec["duration"]))
        quality.append(bool(rec["quality"]))
        clusters_per_row.append({int(k): int(v) for k, v in rec["clusters"].items()})
    embeddings = np.load(root / "embeddings.npy")
    assignments: dict[int, np.ndarray] = {}
    if clusters_per_row:
        for k in clusters_per_row[0]:
            assignments[k] = np.array([row[k] for row in clusters_per_row], dtype=np.int64)
    lib = PseudovoxLibrary(
        entries=entries,
        embeddings=embeddings,
        cluster_assignments=assignments,
        quality=np.array(quality, dtype=bool),
        root=root,
    )
    if preload_audio:
        lib.preload()
    return lib


def read_embedding_file(path: str | Path) -> np.ndarray:
    """Precomputed embeddings: one whitespace-separated vector per line,
    same order as the library index."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rows.append(np.array([float(v) for v in line.replace(",", " ").split()]))
    if not rows:
        raise ValueError(f"no embeddings found in {path}")
    return np.stack(rows)
