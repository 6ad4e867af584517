"""Training-free detectors and the windowed inference protocol.

Detectors produce per-frame probabilities at 50 Hz over a query; windowed
inference averages the logits from one pass per support event, and
threshold_and_smooth turns frame probabilities into an event list using the
duration-aware merge-then-drop rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .core import (
    AudioBuffer,
    EventInterval,
    EventList,
    FrameMask,
    intervals_to_mask,
    mask_to_intervals,
)
from .dsp import ZeroShotFeatures, log_mel

OUTPUT_FRAME_RATE = 50.0
PROB_CLAMP = 1e-6

BLED_HOP_S = 0.05
BLED_CONTEXT_S = 10.0
BLED_FLOOR_PERCENTILE = 10.0
DEFAULT_BLED_THRESHOLD_DB = 6.0


class FrameLogitDetector(Protocol):
    """Scores a query against a labeled support; output in [0, 1] at 50 Hz."""

    def score(self, support_audio: AudioBuffer, support_mask: FrameMask,
              query_audio: AudioBuffer) -> np.ndarray: ...


@dataclass(frozen=True)
class SmoothingParams:
    """Merge/drop thresholds derived from the shortest support event."""

    d: float  # seconds

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("d must be positive")

    @property
    def merge_gap(self) -> float:
        return min(1.0, self.d / 2.0)

    @property
    def min_dur(self) -> float:
        return min(0.5, self.d / 2.0)


def output_frames(n_samples: int, sample_rate: int) -> int:
    """Frame count of a detector output: ceil(duration * 50)."""
    exact = n_samples * OUTPUT_FRAME_RATE / sample_rate
    nearest = round(exact)
    if abs(exact - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(exact))


def pool_mel_to_frame_rate(mel_frames: np.ndarray, n_out: int) -> np.ndarray:
    """Mean-pool 100 Hz mel frames in pairs down to 50 Hz, padding the tail."""
    pooled = []
    for j in range(n_out):
        chunk = mel_frames[2 * j : 2 * j + 2]
        pooled.append(chunk.mean(axis=0) if len(chunk) else mel_frames[-1])
    return np.stack(pooled)


def mask_at_rate(mask: FrameMask, frame_rate: float, duration: float) -> FrameMask:
    if mask.frame_rate == frame_rate:
        return mask
    return intervals_to_mask(mask_to_intervals(mask), frame_rate, duration)


def smooth_detections(events: EventList, d: float) -> EventList:
    """Merge detections separated by < min(1, d/2) s, then drop detections
    shorter than min(1/2, d/2) s. Merging precedes dropping."""
    params = SmoothingParams(d=d)
    merged: list[list[float]] = []
    for ev in events:
        if merged and ev.onset - merged[-1][1] < params.merge_gap:
            merged[-1][1] = max(merged[-1][1], ev.offset)
        else:
            merged.append([ev.onset, ev.offset])
    kept = [(a, b) for a, b in merged if (b - a) >= params.min_dur]
    return EventList(events=tuple(EventInterval(a, b) for a, b in kept),
                     label=events.label)


def threshold_and_smooth(probs: np.ndarray, frame_rate: float, d: float) -> EventList:
    """Frames with probability > 0.5 become raw detections, then smoothing."""
    bits = (np.asarray(probs) > 0.5).astype(np.uint8)
    raw = mask_to_intervals(FrameMask(bits=bits, frame_rate=frame_rate), label="POS")
    return smooth_detections(raw, d)


def prototype_detect(support: AudioBuffer, support_mask: FrameMask,
                     query: AudioBuffer) -> np.ndarray:
    """Training-free per-frame prototype scoring.

    Support mel frames (pooled to 50 Hz) are averaged into a positive and a
    negative prototype by mask value; each query frame's probability is the
    softmax over negative squared distances to the two prototypes.
    """
    sup_frames = pool_mel_to_frame_rate(
        log_mel(support).frames, output_frames(len(support), support.sample_rate))
    mask50 = mask_at_rate(support_mask, OUTPUT_FRAME_RATE, support.duration)
    n = min(len(sup_frames), len(mask50))
    sup_frames, bits = sup_frames[:n], mask50.bits[:n].astype(bool)
    if not bits.any() or bits.all():
        raise ValueError("support must contain both positive and negative frames")
    pos = sup_frames[bits].mean(axis=0)
    neg = sup_frames[~bits].mean(axis=0)

    q_frames = pool_mel_to_frame_rate(
        log_mel(query).frames, output_frames(len(query), query.sample_rate))
    return prototype_probs(q_frames, pos, neg)


def prototype_probs(frames: np.ndarray, pos: np.ndarray,
                    neg: np.ndarray) -> np.ndarray:
    """Softmax over negative squared distances to the two prototypes."""
    d2_pos = np.sum(np.square(frames - pos), axis=1)
    d2_neg = np.sum(np.square(frames - neg), axis=1)
    return expit(d2_neg - d2_pos)


class PrototypeDetector:
    """FrameLogitDetector backed by prototype_detect.

    Prototypes are cached per support window (keyed by content hash), since
    windowed inference scores every query window against the same supports.
    """

    def __init__(self):
        self._cache: dict = {}

    def _prototypes(self, support: AudioBuffer, mask: FrameMask):
        key = (hash(support.samples.tobytes()), hash(mask.bits.tobytes()))
        if key not in self._cache:
            if len(self._cache) > 256:
                self._cache.clear()
            frames = pool_mel_to_frame_rate(
                log_mel(support).frames,
                output_frames(len(support), support.sample_rate))
            mask50 = mask_at_rate(mask, OUTPUT_FRAME_RATE, support.duration)
            n = min(len(frames), len(mask50))
            frames, bits = frames[:n], mask50.bits[:n].astype(bool)
            if not bits.any() or bits.all():
                raise ValueError(
                    "support must contain both positive and negative frames")
            self._cache[key] = (frames[bits].mean(axis=0),
                                frames[~bits].mean(axis=0))
        return self._cache[key]

    def score(self, support_audio: AudioBuffer, support_mask: FrameMask,
              query_audio: AudioBuffer) -> np.ndarray:
        pos, neg = self._prototypes(support_audio, support_mask)
        q_frames = pool_mel_to_frame_rate(
            log_mel(query_audio).frames,
            output_frames(len(query_audio), query_audio.sample_rate))
        return prototype_probs(q_frames, pos, neg)


class ExternalProbDetector:
    """Bridge to an external model: reads per-window frame probabilities from
    files named s{support:03d}_q{query:03d}.probs (one float per line)."""

    def __init__(self, probs_dir: str | Path, prefix: str = ""):
        self.probs_dir = Path(probs_dir)
        self.prefix = prefix

    def path_for(self, support_index: int, query_index: int) -> Path:
        return self.probs_dir / f"{self.prefix}s{support_index:03d}_q{query_index:03d}.probs"

    def score_window(self, support_audio: AudioBuffer, support_mask: FrameMask,
                     query_audio: AudioBuffer, support_index: int,
                     query_index: int) -> np.ndarray:
        path = self.path_for(support_index, query_index)
        probs = np.array([float(v) for v in path.read_text().split()])
        expected = output_frames(len(query_audio), query_audio.sample_rate)
        if len(probs) != expected:
            raise ValueError(
                f"{path} has {len(probs)} frames, expected {expected}"
            )
        return probs


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.log(p / (1.0 - p))


def support_windows(support_audio: AudioBuffer, support_mask: FrameMask,
                    dur_s: float) -> list[tuple[AudioBuffer, FrameMask]]:
    """One labeled window per positive support event, centered on the event
    and shifted inside the file bounds."""
    sr = support_audio.sample_rate
    mask50 = mask_at_rate(support_mask, OUTPUT_FRAME_RATE, support_audio.duration)
    events = mask_to_intervals(mask50)
    if len(events) == 0:
        raise ValueError("support has no positive events")
    frame_len = int(round(sr / OUTPUT_FRAME_RATE))
    win_samples = int(round(dur_s * sr))
    n = len(support_audio)
    windows = []
    for ev in events:
        if win_samples >= n:
            start = 0
            stop = n
        else:
            center = 0.5 * (ev.onset + ev.offset)
            start_s = min(max(center - dur_s / 2.0, 0.0), n / sr - dur_s)
            start = int(round(start_s * sr / frame_len)) * frame_len
            start = min(max(start, 0), n - win_samples)
            stop = start + win_samples
        audio = AudioBuffer(samples=support_audio.samples[start:stop], sample_rate=sr)
        f0 = start // frame_len
        f1 = f0 + output_frames(stop - start, sr)
        bits = mask50.bits[f0:f1]
        if len(bits) < f1 - f0:  # pad tail frames as negative
            bits = np.concatenate([bits, np.zeros(f1 - f0 - len(bits), dtype=np.uint8)])
        windows.append((audio, FrameMask(bits=bits, frame_rate=OUTPUT_FRAME_RATE)))
    return windows


def query_windows(query: AudioBuffer, dur_q: float) -> list[AudioBuffer]:
    """Non-overlapping dur_q tiling; the final partial window is zero-padded."""
    sr = query.sample_rate
    win = int(round(dur_q * sr))
    n = len(query)
    count = max(1, math.ceil(n / win))
    out = []
    for i in range(count):
        chunk = query.samples[i * win : (i + 1) * win]
        if len(chunk) < win:
            chunk = np.concatenate([chunk, np.zeros(win - len(chunk))])
        out.append(AudioBuffer(samples=chunk, sample_rate=sr))
    return out


def windowed_inference(det, support: tuple[AudioBuffer, FrameMask],
                       query: AudioBuffer, dur_s: float = 30.0,
                       dur_q: float = 10.0) -> np.ndarray:
    """Score the full query: one pass per (support event, query window),
    probabilities averaged in logit space across support windows."""
    support_audio, support_mask = support
    sup_wins = support_windows(support_audio, support_mask, dur_s)
    q_wins = query_windows(query, dur_q)
    window_aware = hasattr(det, "score_window")

    pieces = []
    for qi, q_win in enumerate(q_wins):
        acc = np.zeros(output_frames(len(q_win), q_win.sample_rate))
        for si, (s_audio, s_mask) in enumerate(sup_wins):
            if window_aware:
                probs = det.score_window(s_audio, s_mask, q_win,
                                         support_index=si, query_index=qi)
            else:
                probs = det.score(s_audio, s_mask, q_win)
            acc += _logit(np.asarray(probs, dtype=np.float64))
        pieces.append(expit(acc / len(sup_wins)))
    full = np.concatenate(pieces)
    return full[: output_frames(len(query), query.sample_rate)]


def support_features(audio: AudioBuffer, events: EventList,
                     k: int = 5) -> "ZeroShotFeatures":
    """Zero-shot feature estimate: measure the first k positive events and
    take the element-wise median. Each event's SNR reference is the gap
    preceding it (or following, when it starts the recording)."""
    from .dsp import measure_event_features, median_features

    if len(events) == 0:
        raise ValueError("no events to measure")
    use = list(events)[:k]
    per_event = []
    duration = audio.duration
    for i, ev in enumerate(use):
        prev_end = use[i - 1].offset if i > 0 else 0.0
        if ev.onset - prev_end > 0.05:
            bg = EventInterval(prev_end, ev.onset)
        else:
            next_start = use[i + 1].onset if i + 1 < len(use) else duration
            if next_start - ev.offset <= 0.05:
                continue  # no usable background next to this event
            bg = EventInterval(ev.offset, min(next_start, duration))
        per_event.append(measure_event_features(audio, ev, bg))
    if not per_event:
        raise ValueError("no event had an adjacent background segment")
    return median_features(per_event)


def _band_energies(samples: np.ndarray, sample_rate: int, win: int, hop: int,
                   low: float, high: float) -> np.ndarray:
    """In-band spectrogram power per hop, windows centered at (i + 0.5) * hop.

    Edge frames only partially overlap the signal; their energy is scaled up
    by the missing window coverage so the noise floor stays unbiased.
    """
    n = len(samples)
    count = max(1, n // hop)
    nfft = 1 << (win - 1).bit_length()
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    band = (freqs >= low) & (freqs <= high)
    if not band.any():
        raise ValueError(f"band [{low}, {high}] Hz contains no FFT bins")
    pad = win // 2
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(win + pad)])
    window = np.hanning(win)
    energies = np.empty(count)
    chunk = max(1, (1 << 22) // nfft)  # bound scratch memory
    for c0 in range(0, count, chunk):
        c1 = min(c0 + chunk, count)
        idx = (np.arange(c0, c1)[:, None] * hop + np.arange(win)[None, :])
        spec = np.fft.rfft(padded[idx] * window, n=nfft, axis=1)
        energies[c0:c1] = np.sum(np.square(np.abs(spec[:, band])), axis=1)

    w2 = np.square(window)
    w2_total = w2.sum()
    starts = np.arange(count) * hop  # frame start in padded coordinates
    lo_clip = np.maximum(pad - starts, 0)
    hi_clip = np.clip(pad + n - starts, 0, win)
    w2_csum = np.concatenate([[0.0], np.cumsum(w2)])
    coverage = (w2_csum[hi_clip] - w2_csum[lo_clip]) / w2_total
    partial = coverage < 1.0
    if partial.any():
        energies[partial] /= np.maximum(coverage[partial], 1e-3)
    return energies


def _sliding_percentile(values: np.ndarray, width: int, q: float) -> np.ndarray:
    """Percentile over a centered sliding window, truncated at the edges."""
    n = len(values)
    if n <= width:
        return np.full(n, np.percentile(values, q))
    out = np.empty(n)
    half = width // 2
    interior = sliding_window_view(values, width)
    out[half : half + len(interior)] = np.percentile(interior, q, axis=1)
    for i in range(half):
        out[i] = np.percentile(values[: i + width - half], q)
    for i in range(half + len(interior), n):
        out[i] = np.percentile(values[i - half :], q)
    return out


def bled_detect(audio: AudioBuffer, feat: ZeroShotFeatures,
                threshold_db: float = DEFAULT_BLED_THRESHOLD_DB,
                hop_s: float = BLED_HOP_S,
                context_s: float = BLED_CONTEXT_S) -> EventList:
    """Band-limited energy detector.

    In-band energy per 50 ms hop is compared against a noise floor (10th
    percentile over a sliding 10 s context); frames at least threshold_db
    above the floor become detections, which are then smoothed with
    d = feat.duration.
    """
    sr = audio.sample_rate
    nyquist = sr / 2.0
    low = max(0.0, feat.low_freq)
    high = min(feat.high_freq, nyquist)
    if low >= high:
        raise ValueError(
            f"band [{feat.low_freq}, {feat.high_freq}] Hz is empty below "
            f"the {nyquist} Hz Nyquist frequency"
        )
    win = int(round(max(feat.duration, 0.1) * sr))
    hop = int(round(hop_s * sr))
    energies = _band_energies(audio.samples, sr, win, hop, low, high)
    width = max(1, int(round(context_s / hop_s)))
    floor = _sliding_percentile(energies, width, BLED_FLOOR_PERCENTILE)
    floor = np.maximum(floor, np.finfo(float).tiny)
    active = energies >= floor * 10.0 ** (threshold_db / 10.0)
    raw = mask_to_intervals(FrameMask(bits=active.astype(np.uint8),
                                      frame_rate=1.0 / hop_s), label="POS")
    return smooth_detections(raw, feat.duration)
