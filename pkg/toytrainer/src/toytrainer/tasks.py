"""Reader for the detection pipeline's task layouts (file-format level):
either a tasks directory (tasks.json + wav/csv files) or a generated pair
dataset viewed as tasks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import read_wav


@dataclass(frozen=True)
class Task:
    task_id: str
    support_wave: np.ndarray
    support_events: tuple[tuple[float, float], ...]
    query_wave: np.ndarray
    query_events: tuple[tuple[float, float], ...]
    sample_rate: int


def _read_events_csv(path: Path) -> list[tuple[float, float]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if rec["Q"].strip().upper() == "POS":
                out.append((float(rec["Starttime"]), float(rec["Endtime"])))
    return sorted(out)


def load_tasks(root: str | Path) -> list[Task]:
    root = Path(root)
    if (root / "tasks.json").exists():
        payload = json.loads((root / "tasks.json").read_text(encoding="utf-8"))
        tasks = []
        for entry in payload["tasks"]:
            s_wave, sr = read_wav(root / entry["support_audio"])
            q_wave, _ = read_wav(root / entry["query_audio"])
            tasks.append(Task(
                task_id=entry["id"],
                support_wave=s_wave,
                support_events=tuple(_read_events_csv(root / entry["support_csv"])),
                query_wave=q_wave,
                query_events=tuple(_read_events_csv(root / entry["gt_csv"])),
                sample_rate=sr,
            ))
        return tasks
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("kind") != "scene-pairs":
        raise ValueError(f"{root} holds neither tasks nor scene pairs")
    tasks = []
    for item_id in manifest["ids"]:
        payload = json.loads((root / "scenes" / f"{item_id}.json").read_text())
        s_wave, sr = read_wav(root / payload["support"]["wav"])
        q_wave, _ = read_wav(root / payload["query"]["wav"])
        tasks.append(Task(
            task_id=item_id,
            support_wave=s_wave,
            support_events=tuple(tuple(e) for e in payload["support"]["events"]),
            query_wave=q_wave,
            query_events=tuple(tuple(e) for e in payload["query"]["events"]),
            sample_rate=sr,
        ))
    return tasks
