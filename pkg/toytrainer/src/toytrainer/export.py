"""Export per-window frame probabilities in the detection pipeline's
external-bridge format: {task}_s{si:03d}_q{qi:03d}.probs, one float per line.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .model import InContextDetector
from .tasks import Task
from .data import rasterize_events
from .windows import FRAME_RATE, out_frames, query_windows, support_windows


def task_window_probs(model: InContextDetector, task: Task, dur_s: float,
                      dur_q: float,
                      shuffle_rng: np.random.Generator | None = None
                      ) -> dict[tuple[int, int], np.ndarray]:
    """Probabilities for every (support window, query window) pair."""
    sr = task.sample_rate
    t_full = out_frames(len(task.support_wave), sr)
    mask50 = rasterize_events(list(task.support_events), FRAME_RATE, t_full)
    sup_wins = support_windows(task.support_wave, mask50, dur_s, sr)
    q_wins = query_windows(task.query_wave, dur_q, sr)
    out: dict[tuple[int, int], np.ndarray] = {}
    # identical support windows (e.g. dur_s covering the whole support) need
    # only one forward pass per query window; shuffling breaks the identity
    cache: dict[tuple[bytes, bytes, int], np.ndarray] = {}
    with torch.no_grad():
        for si, (s_wave, s_bits) in enumerate(sup_wins):
            if shuffle_rng is not None:
                s_bits = shuffle_rng.permutation(s_bits)
            s_t = torch.from_numpy(np.asarray(s_wave)).float().unsqueeze(0)
            m_t = torch.from_numpy(np.asarray(s_bits)).float().unsqueeze(0)
            for qi, q_wave in enumerate(q_wins):
                key = (s_t.numpy().tobytes(), m_t.numpy().tobytes(), qi)
                if key in cache:
                    out[(si, qi)] = cache[key]
                    continue
                q_t = torch.from_numpy(np.asarray(q_wave)).float().unsqueeze(0)
                probs = model.query_probs(s_t, m_t, q_t)[0].numpy()
                expected = out_frames(len(q_wave), sr)
                if len(probs) != expected:
                    raise ValueError(
                        f"model produced {len(probs)} frames for a window of "
                        f"{expected}"
                    )
                cache[key] = probs
                out[(si, qi)] = probs
    return out


def export_probs(model: InContextDetector, tasks: list[Task],
                 out_dir: str | Path, dur_s: float, dur_q: float,
                 shuffle_seed: int | None = None) -> int:
    """Write probability files for every task; returns the file count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_files = 0
    for ti, task in enumerate(tasks):
        shuffle_rng = (np.random.default_rng([shuffle_seed, ti])
                       if shuffle_seed is not None else None)
        per_window = task_window_probs(model, task, dur_s, dur_q, shuffle_rng)
        for (si, qi), probs in per_window.items():
            path = out_dir / f"{task.task_id}_s{si:03d}_q{qi:03d}.probs"
            path.write_text("\n".join(repr(float(v)) for v in probs) + "\n",
                            encoding="utf-8")
            n_files += 1
    return n_files
