"""Support/query windowing mirroring the detection pipeline's protocol:
one support window per positive event (centered, clamped to file bounds,
snapped to the 50 Hz frame grid) and non-overlapping query tiles with a
zero-padded tail.
"""

from __future__ import annotations

import math

import numpy as np

FRAME_RATE = 50.0


def mask_runs(bits: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of 1s as [start, end) frame index pairs."""
    padded = np.concatenate(([0], (bits > 0.5).astype(np.int8), [0]))
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def support_windows(wave: np.ndarray, mask50: np.ndarray, dur_s: float,
                    sample_rate: int) -> list[tuple[np.ndarray, np.ndarray]]:
    runs = mask_runs(mask50)
    if not runs:
        raise ValueError("support has no positive events")
    frame_len = int(round(sample_rate / FRAME_RATE))
    win = int(round(dur_s * sample_rate))
    n = len(wave)
    out = []
    for f0, f1 in runs:
        if win >= n:
            start, stop = 0, n
        else:
            center = 0.5 * (f0 + f1) / FRAME_RATE
            start_s = min(max(center - dur_s / 2.0, 0.0), n / sample_rate - dur_s)
            start = int(round(start_s * sample_rate / frame_len)) * frame_len
            start = min(max(start, 0), n - win)
            stop = start + win
        m0 = start // frame_len
        m1 = m0 + _out_frames(stop - start, sample_rate)
        bits = mask50[m0:m1]
        if len(bits) < m1 - m0:
            bits = np.concatenate([bits, np.zeros(m1 - m0 - len(bits))])
        out.append((wave[start:stop], bits))
    return out


def query_windows(wave: np.ndarray, dur_q: float,
                  sample_rate: int) -> list[np.ndarray]:
    win = int(round(dur_q * sample_rate))
    count = max(1, math.ceil(len(wave) / win))
    out = []
    for i in range(count):
        chunk = wave[i * win : (i + 1) * win]
        if len(chunk) < win:
            chunk = np.concatenate([chunk, np.zeros(win - len(chunk))])
        out.append(chunk)
    return out


def _out_frames(n_samples: int, sample_rate: int) -> int:
    exact = n_samples * FRAME_RATE / sample_rate
    nearest = round(exact)
    if abs(exact - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(exact))


out_frames = _out_frames
