"""Shared domain types: audio buffers, event intervals, frame masks, scenes.

All durations are in seconds (float64); sample and frame indices are derived
by flooring time*rate, so hour-long files do not accumulate drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio: linear-amplitude samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.samples))))


@dataclass(frozen=True)
class EventInterval:
    """Half-open time interval [onset, offset) in seconds."""

    onset: float
    offset: float

    def __post_init__(self):
        if not (0.0 <= self.onset < self.offset):
            raise ValueError(f"invalid interval [{self.onset}, {self.offset})")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class EventList:
    """Onset-sorted list of event intervals with an optional class label."""

    events: tuple[EventInterval, ...] = ()
    label: Optional[str] = None

    def __post_init__(self):
        events = tuple(self.events)
        if any(events[i].onset > events[i + 1].onset for i in range(len(events) - 1)):
            events = tuple(sorted(events, key=lambda e: (e.onset, e.offset)))
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]


@dataclass(frozen=True)
class FrameMask:
    """Per-frame binary labels at a fixed frame rate."""

    bits: np.ndarray
    frame_rate: float

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("mask bits must be 1-D")
        if bits.size and not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class Scene:
    """A synthetic recording with its annotation mask and event list.

    ``provenance`` records every sampled generation parameter; together with
    the source library and seed it fully determines the rendered audio.
    """

    audio: AudioBuffer
    mask: FrameMask
    events: EventList
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SupportQueryExample:
    """One training/eval unit: a labeled support scene and a query scene."""

    support: Scene
    query: Scene
    dur_s: float = 30.0
    dur_q: float = 10.0


def n_frames(duration: float, frame_rate: float) -> int:
    """Frame count covering `duration` seconds: ceil(duration * frame_rate)."""
    # guard against float noise just below an integer boundary
    exact = duration * frame_rate
    nearest = round(exact)
    if abs(exact - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(exact))


def intervals_to_mask(events: EventList, frame_rate: float, duration: float) -> FrameMask:
    """Rasterize events to a binary mask.

    Frame i is 1 iff its center time (i + 0.5) / frame_rate falls inside
    some event interval [onset, offset).
    """
    total = n_frames(duration, frame_rate)
    bits = np.zeros(total, dtype=np.uint8)
    for ev in events:
        if ev.offset > duration + 1e-9:
            raise ValueError(
                f"event [{ev.onset}, {ev.offset}) extends past duration {duration}"
            )
        if ev.onset < -1e-9:
            raise ValueError(f"event onset {ev.onset} is negative")
        # centers (i + 0.5)/fr in [onset, offset)  <=>  i in [onset*fr - 0.5, offset*fr - 0.5)
        lo = int(math.ceil(ev.onset * frame_rate - 0.5 - 1e-9))
        hi = int(math.ceil(ev.offset * frame_rate - 0.5 - 1e-9))
        lo = max(lo, 0)
        hi = min(hi, total)
        if hi > lo:
            bits[lo:hi] = 1
    return FrameMask(bits=bits, frame_rate=frame_rate)


def mask_to_intervals(mask: FrameMask, label: Optional[str] = None) -> EventList:
    """Convert maximal runs of 1s into intervals [start/fr, end/fr)."""
    bits = mask.bits
    if len(bits) == 0 or not bits.any():
        return EventList(events=(), label=label)
    padded = np.concatenate(([0], bits, [0])).astype(np.int8)
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    fr = mask.frame_rate
    events = tuple(
        EventInterval(onset=float(s / fr), offset=float(e / fr))
        for s, e in zip(starts, ends)
    )
    return EventList(events=events, label=label)


def merge_overlaps(events: EventList) -> EventList:
    """Union of the input intervals as disjoint sorted intervals.

    Touching intervals (offset == next onset) are merged into one.
    """
    if len(events) == 0:
        return events
    merged: list[list[float]] = []
    for ev in events:  # already onset-sorted
        if merged and ev.onset <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], ev.offset)
        else:
            merged.append([ev.onset, ev.offset])
    return EventList(
        events=tuple(EventInterval(onset=a, offset=b) for a, b in merged),
        label=events.label,
    )
