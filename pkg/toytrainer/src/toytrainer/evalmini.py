"""Self-contained scoring of window probabilities, used as the in-process
reference for the exported-file round trip: logit averaging across support
windows, 0.5 threshold, merge-then-drop smoothing, IoU >= 0.3 maximum
matching, pooled F1.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .tasks import Task
from .windows import FRAME_RATE, out_frames

PROB_CLAMP = 1e-6


def fuse_windows(per_window: dict[tuple[int, int], np.ndarray],
                 n_query_frames: int) -> np.ndarray:
    """Average logits over support windows, concatenate query windows."""
    n_sup = max(si for si, _ in per_window) + 1
    n_qwin = max(qi for _, qi in per_window) + 1
    pieces = []
    for qi in range(n_qwin):
        acc = None
        for si in range(n_sup):
            p = np.clip(per_window[(si, qi)], PROB_CLAMP, 1.0 - PROB_CLAMP)
            logit = np.log(p / (1.0 - p))
            acc = logit if acc is None else acc + logit
        pieces.append(1.0 / (1.0 + np.exp(-acc / n_sup)))
    return np.concatenate(pieces)[:n_query_frames]


def probs_to_events(probs: np.ndarray, d: float,
                    frame_rate: float = FRAME_RATE) -> list[tuple[float, float]]:
    bits = probs > 0.5
    spans = []
    start = None
    for i, b in enumerate(list(bits) + [False]):
        if b and start is None:
            start = i
        elif not b and start is not None:
            spans.append([start / frame_rate, i / frame_rate])
            start = None
    merge_gap = min(1.0, d / 2.0)
    min_dur = min(0.5, d / 2.0)
    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a - merged[-1][1] < merge_gap:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged if b - a >= min_dur]


def interval_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def max_matching(adjacency: list[list[int]]) -> int:
    """Hopcroft-Karp maximum matching cardinality."""
    INF = math.inf
    match_l: dict[int, int] = {}
    match_r: dict[int, int] = {}
    n = len(adjacency)
    dist = [0.0] * n

    def bfs() -> bool:
        queue = deque()
        for u in range(n):
            if u not in match_l:
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
                w = match_r.get(v)
                if w is None:
                    if found == INF:
                        found = dist[u] + 1
                elif dist[w] == INF:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found != INF

    def dfs(u: int) -> bool:
        for v in adjacency[u]:
            w = match_r.get(v)
            if w is None or (dist[w] == dist[u] + 1 and dfs(w)):
                match_l[u] = v
                match_r[v] = u
                return True
        dist[u] = INF
        return False

    while bfs():
        for u in range(n):
            if u not in match_l:
                dfs(u)
    return len(match_l)


def score_tasks(per_task_events: list[tuple[list, list]],
                min_iou: float = 0.3) -> float:
    """Pooled F1 over (detections, annotations) lists."""
    tp = fp = fn = 0
    for dets, anns in per_task_events:
        adjacency = [
            [j for j, ann in enumerate(anns) if interval_iou(det, ann) >= min_iou]
            for det in dets
        ]
        matched = max_matching(adjacency)
        tp += matched
        fp += len(dets) - matched
        fn += len(anns) - matched
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def evaluate_model(model, tasks: list[Task], dur_s: float, dur_q: float,
                   shuffle_seed: int | None = None) -> float:
    """In-process evaluation mirroring the external-bridge path."""
    from .export import task_window_probs

    per_task = []
    for i, task in enumerate(tasks):
        shuffle_rng = (np.random.default_rng([shuffle_seed, i])
                       if shuffle_seed is not None else None)
        per_window = task_window_probs(model, task, dur_s, dur_q, shuffle_rng)
        n_q = out_frames(len(task.query_wave), task.sample_rate)
        probs = fuse_windows(per_window, n_q)
        d = min(b - a for a, b in task.support_events)
        dets = probs_to_events(probs, d)
        per_task.append((dets, [list(e) for e in task.query_events]))
    return score_tasks(per_task)
