"""Spectrogram PNGs with event-interval overlays, for visual inspection."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .core import AudioBuffer, EventList
from .dsp import HOP, log_mel


def render_spectrogram_png(audio: AudioBuffer, events: EventList,
                           out_path: str | Path, title: str = "",
                           detections: EventList | None = None) -> None:
    """Log-mel spectrogram image; events drawn as translucent spans."""
    spec = log_mel(audio).frames.T  # [mels, frames]
    duration = audio.duration
    fig, ax = plt.subplots(figsize=(max(6.0, duration / 4.0), 4.0))
    ax.imshow(spec, origin="lower", aspect="auto",
              extent=(0.0, duration, 0.0, audio.sample_rate / 2.0 / 1000.0),
              cmap="magma")
    for ev in events:
        ax.axvspan(ev.onset, ev.offset, color="yellow", alpha=0.25, lw=0)
    if detections is not None:
        for ev in detections:
            ax.axvspan(ev.onset, ev.offset, ymin=0.0, ymax=0.06,
                       color="cyan", alpha=0.9, lw=0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (kHz)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
