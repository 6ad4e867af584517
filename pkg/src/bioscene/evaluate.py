"""Benchmark construction and scoring.

Detections are matched to annotations by temporal IoU (threshold 0.3) using
maximum-cardinality bipartite matching; per-dataset F1 pools tp/fp/fn counts
over recordings. Events labeled UNK are excluded from scoring on both sides.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import AudioBuffer, EventInterval, EventList, intervals_to_mask
from .dsp import mel_power

DEFAULT_MIN_IOU = 0.3
DEFAULT_N_SHOT = 5


def iou(a: EventInterval, b: EventInterval) -> float:
    """Temporal intersection over union of two intervals."""
    inter = max(0.0, min(a.offset, b.offset) - max(a.onset, b.onset))
    union = a.duration + b.duration - inter
    return inter / union if union > 0 else 0.0


def hopcroft_karp(adjacency: Sequence[Sequence[int]], n_right: int) -> dict[int, int]:
    """Maximum-cardinality matching on a bipartite graph.

    adjacency[i] lists the right-vertices reachable from left-vertex i;
    returns a dict left -> right.
    """
    INF = math.inf
    n_left = len(adjacency)
    match_left: dict[int, int] = {}
    match_right: dict[int, int] = {}
    dist: list[float] = [0.0] * n_left

    def bfs() -> bool:
        queue: deque[int] = deque()
        for u in range(n_left):
            if u not in match_left:
                dist[u] = 0.0
                queue.append(u)
            else:
                dist[u] = INF
        found = INF
        while queue:
            u = queue.popleft()
            if dist[u] >= found:
                continue
            for v in adjacency[u]:
                w = match_right.get(v)
                if w is None:
                    if found == INF:
                        found = dist[u] + 1
                elif dist[w] == INF:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found != INF

    def dfs(u: int) -> bool:
        for v in adjacency[u]:
            w = match_right.get(v)
            if w is None or (dist[w] == dist[u] + 1 and dfs(w)):
                match_left[u] = v
                match_right[v] = u
                return True
        dist[u] = INF
        return False

    while bfs():
        for u in range(n_left):
            if u not in match_left and dfs(u):
                pass
    return match_left


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]
    tp: int
    fp: int
    fn: int
    n_ignored: int = 0  # detections absorbed by UNK regions

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def match_events(dets: EventList, anns: EventList,
                 min_iou: float = DEFAULT_MIN_IOU,
                 unk: Optional[EventList] = None) -> MatchResult:
    """Match detections to annotations at the IoU threshold.

    Unmatched detections whose IoU with an UNK-labeled event reaches the
    threshold are ignored: they count neither as true nor false positives.
    """
    adjacency = [
        [j for j, ann in enumerate(anns) if iou(det, ann) >= min_iou]
        for det in dets
    ]
    matching = hopcroft_karp(adjacency, len(anns))
    pairs = tuple(sorted(matching.items()))
    tp = len(pairs)
    ignored = 0
    if unk is not None and len(unk):
        for i, det in enumerate(dets):
            if i in matching:
                continue
            if any(iou(det, u) >= min_iou for u in unk):
                ignored += 1
    fp = len(dets) - tp - ignored
    fn = len(anns) - tp
    return MatchResult(pairs=pairs, tp=tp, fp=fp, fn=fn, n_ignored=ignored)


@dataclass(frozen=True)
class DatasetScore:
    tp: int
    fp: int
    fn: int
    n_tasks: int
    degenerate: bool  # no detections and no annotations anywhere

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def score_dataset(per_task: Sequence[MatchResult]) -> DatasetScore:
    """Micro-averaged dataset score: pool counts, then one F1."""
    tp = sum(r.tp for r in per_task)
    fp = sum(r.fp for r in per_task)
    fn = sum(r.fn for r in per_task)
    return DatasetScore(tp=tp, fp=fp, fn=fn, n_tasks=len(per_task),
                        degenerate=(tp + fp + fn == 0))


def macro_f1(per_task: Sequence[MatchResult]) -> float:
    """Mean of per-task F1: the alternative pooling, for sensitivity checks."""
    if not per_task:
        return 0.0
    return float(np.mean([r.f1 for r in per_task]))


@dataclass(frozen=True)
class TaskSplit:
    """One few-shot task: labeled support audio plus a held-out query."""

    support_audio: AudioBuffer
    support_events: EventList
    query_audio: AudioBuffer
    query_events: EventList
    support_unk: EventList = field(default_factory=EventList)
    query_unk: EventList = field(default_factory=EventList)
    class_label: Optional[str] = None
    task_id: Optional[str] = None


def split_nshot(recording: AudioBuffer, events: EventList,
                n: int = DEFAULT_N_SHOT,
                unk: Optional[EventList] = None,
                class_label: Optional[str] = None,
                task_id: Optional[str] = None) -> TaskSplit:
    """Cut a recording after the Nth positive event.

    Support = audio and events up to the cut; query = the remainder with
    events re-based to the new time origin.
    """
    unk = unk if unk is not None else EventList(label="UNK")
    if len(events) < n + 1:
        raise ValueError(
            f"recording has {len(events)} positive events; need at least {n + 1} "
            f"for an {n}-shot split"
        )
    sr = recording.sample_rate
    cut = events[n - 1].offset if n > 0 else 0.0
    cut_sample = int(math.floor(cut * sr))
    cut = cut_sample / sr  # snap to the sample grid

    def rebased(evs: EventList, label):
        sup, qry = [], []
        for ev in evs:
            if ev.offset <= cut:
                sup.append(ev)
            elif ev.onset >= cut:
                qry.append(EventInterval(ev.onset - cut, ev.offset - cut))
            else:  # straddles the cut; clip to each side
                sup.append(EventInterval(ev.onset, cut))
                qry.append(EventInterval(0.0, ev.offset - cut))
        return (EventList(events=tuple(sup), label=label),
                EventList(events=tuple(qry), label=label))

    sup_pos, qry_pos = rebased(events, events.label or "POS")
    sup_unk, qry_unk = rebased(unk, "UNK")
    return TaskSplit(
        support_audio=AudioBuffer(samples=recording.samples[:cut_sample],
                                  sample_rate=sr) if cut_sample else
        AudioBuffer(samples=np.zeros(0), sample_rate=sr),
        support_events=sup_pos,
        query_audio=AudioBuffer(samples=recording.samples[cut_sample:],
                                sample_rate=sr),
        query_events=qry_pos,
        support_unk=sup_unk,
        query_unk=qry_unk,
        class_label=class_label,
        task_id=task_id,
    )


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise ValueError("derangement needs at least 2 elements")
    perm = np.arange(n)
    while True:
        rng.shuffle(perm)
        if not np.any(perm == np.arange(n)):
            return perm.copy()


def build_crossfile(tasks: Sequence[TaskSplit],
                    rng: np.random.Generator) -> list[TaskSplit]:
    """Re-pair supports and queries within each class by a derangement, so
    no support keeps its own query."""
    by_class: dict[Optional[str], list[int]] = {}
    for i, task in enumerate(tasks):
        by_class.setdefault(task.class_label, []).append(i)
    out: list[Optional[TaskSplit]] = [None] * len(tasks)
    for label, indices in sorted(by_class.items(), key=lambda kv: str(kv[0])):
        if len(indices) < 2:
            raise ValueError(
                f"class {label!r} has a single task; cross-file re-pairing "
                f"needs at least 2"
            )
        perm = _derangement(len(indices), rng)
        for slot, src in zip(indices, (indices[p] for p in perm)):
            donor = tasks[src]
            receiver = tasks[slot]
            out[slot] = TaskSplit(
                support_audio=donor.support_audio,
                support_events=donor.support_events,
                query_audio=receiver.query_audio,
                query_events=receiver.query_events,
                support_unk=donor.support_unk,
                query_unk=receiver.query_unk,
                class_label=label,
                task_id=f"{donor.task_id}|{receiver.task_id}",
            )
    return [t for t in out if t is not None]


def mean_event_spectrum(audio: AudioBuffer, events: EventList,
                        foreground: bool = True) -> np.ndarray:
    """Mean mel power spectrum over event frames (or non-event frames)."""
    power = mel_power(audio)
    mask = intervals_to_mask(events, audio.sample_rate / 160.0, audio.duration)
    bits = mask.bits[: len(power)].astype(bool)
    select = bits if foreground else ~bits
    if not select.any():
        raise ValueError("no frames to average over")
    return power[select].mean(axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def foreground_similarity(support: TaskSplit, query: TaskSplit,
                          foreground: bool = True) -> float:
    """Cosine similarity between the support-side and query-side mean event
    spectra; foreground=False compares the non-event (background) frames."""
    a = mean_event_spectrum(support.support_audio, support.support_events,
                            foreground)
    b = mean_event_spectrum(query.query_audio, query.query_events, foreground)
    return cosine(a, b)


# ---------------------------------------------------------------------------
# annotation CSV interface: Audiofilename, Starttime, Endtime, Q (POS/UNK/NEG)

CSV_FIELDS = ("Audiofilename", "Starttime", "Endtime", "Q")


def read_annotation_csv(path: str | Path) -> dict[str, dict[str, EventList]]:
    """Load annotations grouped by audio file name and Q label."""
    rows: dict[str, dict[str, list[EventInterval]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing CSV columns {missing}")
        for rec in reader:
            q = rec["Q"].strip().upper()
            if q == "NEG":
                continue
            onset, offset = float(rec["Starttime"]), float(rec["Endtime"])
            if offset <= onset:
                continue
            rows.setdefault(rec["Audiofilename"], {}).setdefault(q, []).append(
                EventInterval(onset=onset, offset=offset))
    out: dict[str, dict[str, EventList]] = {}
    for fname, by_q in rows.items():
        out[fname] = {
            q: EventList(events=tuple(evs), label=q) for q, evs in by_q.items()
        }
    return out


def load_recording_events(path: str | Path,
                          audiofilename: Optional[str] = None
                          ) -> tuple[EventList, EventList]:
    """Events for one recording: (positives, unknowns)."""
    table = read_annotation_csv(path)
    if audiofilename is None:
        if len(table) == 0:
            return EventList(label="POS"), EventList(label="UNK")
        if len(table) > 1:
            raise ValueError(
                f"{path} annotates {len(table)} files; pass audiofilename"
            )
        audiofilename = next(iter(table))
    by_q = table.get(audiofilename, {})
    return (by_q.get("POS", EventList(label="POS")),
            by_q.get("UNK", EventList(label="UNK")))


def write_detection_csv(path: str | Path, audiofilename: str,
                        events: EventList) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for ev in events:
            writer.writerow([audiofilename, repr(ev.onset), repr(ev.offset), "POS"])
