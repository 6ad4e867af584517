"""On-disk formats shared across the pipeline.

Scene datasets:   manifest.json + scenes/NNNNN[_support|_query].wav + NNNNN.json
Task directories: tasks.json + TNNNN_{support,query}.wav + CSV annotations
Benchmark manifests: a JSON file listing recordings with annotations + labels.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .audio_io import atomic_write_text, read_wav, write_wav
from .core import AudioBuffer, EventInterval, EventList, Scene, SupportQueryExample
from .dsp import to_sample_rate
from .evaluate import TaskSplit, load_recording_events
from .core import merge_overlaps

CANONICAL_RATE = 16000


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _scene_json(scene: Scene, wav_rel: str) -> dict:
    return {
        "wav": wav_rel,
        "duration": scene.audio.duration,
        "events": [[ev.onset, ev.offset] for ev in scene.events],
        "mask_frame_rate": scene.mask.frame_rate,
        "provenance": scene.provenance,
    }


def write_pair_item(root: Path, item_id: str, pair: SupportQueryExample) -> None:
    scenes = root / "scenes"
    write_wav(scenes / f"{item_id}_support.wav", pair.support.audio)
    write_wav(scenes / f"{item_id}_query.wav", pair.query.audio)
    payload = {
        "id": item_id,
        "support": _scene_json(pair.support, f"scenes/{item_id}_support.wav"),
        "query": _scene_json(pair.query, f"scenes/{item_id}_query.wav"),
    }
    atomic_write_text(scenes / f"{item_id}.json",
                      json.dumps(payload, sort_keys=True, indent=1))


def write_scene_item(root: Path, item_id: str, scene: Scene) -> None:
    scenes = root / "scenes"
    write_wav(scenes / f"{item_id}.wav", scene.audio)
    payload = {"id": item_id, "scene": _scene_json(scene, f"scenes/{item_id}.wav")}
    atomic_write_text(scenes / f"{item_id}.json",
                      json.dumps(payload, sort_keys=True, indent=1))


def write_dataset_manifest(root: Path, kind: str, cfg_dict: dict, seed: int,
                           ids: list[str], extra: Optional[dict] = None) -> None:
    payload = {
        "kind": kind,
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "seed": seed,
        "count": len(ids),
        "ids": ids,
    }
    if extra:
        payload.update(extra)
    atomic_write_text(Path(root) / "manifest.json",
                      json.dumps(payload, sort_keys=True, indent=1))


def load_dataset_manifest(root: str | Path) -> dict:
    return json.loads((Path(root) / "manifest.json").read_text(encoding="utf-8"))


def _events_from_json(pairs: list, label: str = "POS") -> EventList:
    return EventList(
        events=tuple(EventInterval(a, b) for a, b in pairs), label=label
    )


def load_pair_item(root: str | Path, item_id: str) -> dict:
    root = Path(root)
    payload = json.loads((root / "scenes" / f"{item_id}.json").read_text())
    for side in ("support", "query"):
        payload[side]["audio"] = read_wav(root / payload[side]["wav"])
        payload[side]["event_list"] = _events_from_json(payload[side]["events"])
    return payload


def pair_item_to_task(payload: dict) -> TaskSplit:
    """A generated pair is directly a few-shot task; the class label is the
    target cluster so cross-file re-pairing groups compatible tasks."""
    prov = payload["support"]["provenance"]
    label = f"k{prov['level_k']}c{prov['cluster_target']}"
    return TaskSplit(
        support_audio=payload["support"]["audio"],
        support_events=payload["support"]["event_list"],
        query_audio=payload["query"]["audio"],
        query_events=payload["query"]["event_list"],
        class_label=label,
        task_id=payload["id"],
    )


# ---------------------------------------------------------------------------
# benchmark manifest (input recordings)

@dataclass(frozen=True)
class ManifestEntry:
    audio: Path
    annotations: Path
    label: str


@dataclass(frozen=True)
class Manifest:
    dataset: str
    version: str
    recordings: tuple[ManifestEntry, ...]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    entries = []
    for rec in payload["recordings"]:
        audio = (path.parent / rec["audio"]).resolve()
        ann = (path.parent / rec["annotations"]).resolve()
        for p in (audio, ann):
            if not p.exists():
                raise FileNotFoundError(f"manifest references missing file {p}")
        entries.append(ManifestEntry(audio=audio, annotations=ann,
                                     label=rec.get("label", "default")))
    return Manifest(dataset=payload.get("dataset", path.stem),
                    version=str(payload.get("version", "1")),
                    recordings=tuple(entries))


def load_recording(entry: ManifestEntry) -> tuple[AudioBuffer, EventList, EventList]:
    """Audio at the canonical rate plus merged positive and UNK events."""
    audio = to_sample_rate(read_wav(entry.audio), CANONICAL_RATE)
    pos, unk = load_recording_events(entry.annotations)
    return audio, merge_overlaps(pos), unk


# ---------------------------------------------------------------------------
# task directories

from .evaluate import write_detection_csv  # noqa: E402  (CSV format lives there)
import csv as _csv  # noqa: E402


def _write_events_csv(path: Path, audiofilename: str, pos: EventList,
                      unk: EventList) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(("Audiofilename", "Starttime", "Endtime", "Q"))
        rows = [(ev.onset, ev.offset, "POS") for ev in pos]
        rows += [(ev.onset, ev.offset, "UNK") for ev in unk]
        for onset, offset, q in sorted(rows):
            writer.writerow([audiofilename, repr(onset), repr(offset), q])


def write_tasks(root: str | Path, tasks: list[TaskSplit], dataset: str,
                version: str = "1", excluded: Optional[list[str]] = None,
                cfg_payload: Optional[dict] = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, task in enumerate(tasks):
        tid = task.task_id or f"T{i:04d}"
        safe = tid.replace("/", "_").replace("|", "_")
        sup_wav, qry_wav = f"{safe}_support.wav", f"{safe}_query.wav"
        sup_csv, gt_csv = f"{safe}_support.csv", f"{safe}_gt.csv"
        write_wav(root / sup_wav, task.support_audio)
        write_wav(root / qry_wav, task.query_audio)
        _write_events_csv(root / sup_csv, sup_wav, task.support_events,
                          task.support_unk)
        _write_events_csv(root / gt_csv, qry_wav, task.query_events,
                          task.query_unk)
        entries.append({
            "id": safe,
            "class_label": task.class_label,
            "support_audio": sup_wav,
            "support_csv": sup_csv,
            "query_audio": qry_wav,
            "gt_csv": gt_csv,
        })
    payload = {
        "kind": "tasks",
        "dataset": dataset,
        "version": version,
        "tasks": entries,
        "excluded": excluded or [],
    }
    if cfg_payload is not None:
        payload["config"] = cfg_payload
        payload["config_hash"] = config_hash(cfg_payload)
    atomic_write_text(root / "tasks.json",
                      json.dumps(payload, sort_keys=True, indent=1))


def load_tasks(root: str | Path) -> tuple[dict, list[TaskSplit]]:
    root = Path(root)
    payload = json.loads((root / "tasks.json").read_text(encoding="utf-8"))
    tasks = []
    for entry in payload["tasks"]:
        sup_pos, sup_unk = load_recording_events(root / entry["support_csv"])
        qry_pos, qry_unk = load_recording_events(root / entry["gt_csv"])
        tasks.append(TaskSplit(
            support_audio=read_wav(root / entry["support_audio"]),
            support_events=sup_pos,
            query_audio=read_wav(root / entry["query_audio"]),
            query_events=qry_pos,
            support_unk=sup_unk,
            query_unk=qry_unk,
            class_label=entry.get("class_label"),
            task_id=entry["id"],
        ))
    return payload, tasks


def load_tasks_any(root: str | Path) -> tuple[dict, list[TaskSplit]]:
    """Load a tasks directory, or view a generated pair dataset as tasks."""
    root = Path(root)
    if (root / "tasks.json").exists():
        return load_tasks(root)
    manifest = load_dataset_manifest(root)
    if manifest.get("kind") != "scene-pairs":
        raise ValueError(f"{root} holds {manifest.get('kind')}, not tasks or pairs")
    tasks = [pair_item_to_task(load_pair_item(root, item_id))
             for item_id in manifest["ids"]]
    return manifest, tasks
