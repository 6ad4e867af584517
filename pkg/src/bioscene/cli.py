"""Batch command-line surface for the pipeline.

Subcommands: extract, cluster, generate, split, crossfile, detect, evaluate,
render. All randomness flows from a single --seed; per-item streams are
derived from (seed, item index) so worker count never changes results.

Exit codes: 0 success, 2 bad input, 3 internal error. Failures emit one
machine-readable line: ERROR {"code": ..., "message": ...}.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tasksio
from .audio_io import atomic_write_text, read_wav
from .core import EventList, intervals_to_mask
from .detect import (
    DEFAULT_BLED_THRESHOLD_DB,
    ExternalProbDetector,
    PrototypeDetector,
    bled_detect,
    support_features,
    threshold_and_smooth,
    windowed_inference,
)
from .dsp import time_dilate, to_sample_rate
from .evaluate import (
    build_crossfile,
    load_recording_events,
    match_events,
    macro_f1,
    score_dataset,
    split_nshot,
    write_detection_csv,
)
from .pseudovox import (
    build_library,
    cluster_multilevel,
    extract_segments,
    fit_quality_filter,
    load_library,
    read_embedding_file,
    save_library,
)
from .scenegen import (
    BackgroundLibrary,
    GenerationConfig,
    PRESET_NAMES,
    RirBank,
    generate_pair,
    generate_scene,
    pair_rng,
    preset,
)

CACHE_ENV = "BIOSCENE_CACHE"

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INTERNAL = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_INPUT):
        super().__init__(message)
        self.code = code


def cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV)
    if root:
        return Path(root)
    return Path.home() / ".cache" / "bioscene"


# ---------------------------------------------------------------------------
# config plumbing

def parse_config_file(path: str | Path) -> dict:
    """Flat `key = value` lines; values are JSON fragments or bare strings."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _parse_value(value)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_generation_config(args) -> GenerationConfig:
    cfg = preset(args.preset) if args.preset else GenerationConfig()
    overrides: dict = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.duration is not None:
        overrides["scene_dur"] = args.duration
    if overrides:
        base = cfg.to_dict()
        unknown = set(overrides) - set(base)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        base.update(overrides)
        cfg = GenerationConfig.from_dict(base)
    return cfg


# ---------------------------------------------------------------------------
# extract / cluster

def cmd_extract(args) -> int:
    in_dir = Path(args.input)
    wavs = sorted(in_dir.glob("**/*.wav"))
    if not wavs:
        raise CliError(f"no .wav recordings under {in_dir}")
    clips, sources = [], []
    for wav in wavs:
        audio = to_sample_rate(read_wav(wav), tasksio.CANONICAL_RATE)
        for clip, interval in extract_segments(
                audio, threshold_ratio=args.threshold,
                min_dur=args.min_dur, max_dur=args.max_dur):
            clips.append(clip)
            sources.append(f"{wav.name}[{interval.onset:.3f}-{interval.offset:.3f}]")
    if not clips:
        raise CliError("no segments extracted; recordings may be silent")
    quality = None
    if args.quality_labels:
        quality = _train_quality_filter(args.quality_labels, clips)
    lib = build_library(clips, sources=sources, quality_filter=quality,
                        divisors=(), seed=args.seed or 0)
    save_library(lib, args.out)
    print(f"extracted {len(lib)} pseudovox from {len(wavs)} recordings -> {args.out}")
    return EXIT_OK


def _train_quality_filter(labels_path: str, clips):
    from .pseudovox import embed

    rows, labels = [], []
    for line in Path(labels_path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        idx, lab = line.split(",")
        rows.append(int(idx))
        labels.append(int(lab))
    emb = np.stack([embed(clips[i]) for i in rows])
    return fit_quality_filter(emb, np.array(labels))


def cmd_cluster(args) -> int:
    lib = load_library(args.library)
    if args.embeddings:
        emb = read_embedding_file(args.embeddings)
        if len(emb) != len(lib):
            raise CliError(
                f"embedding file has {len(emb)} rows, library has {len(lib)}")
        lib.embeddings = emb
    divisors = tuple(int(d) for d in args.divisors.split(","))
    lib.cluster_assignments = cluster_multilevel(lib.embeddings, divisors,
                                                 seed=args.seed or 0)
    save_library(lib, args.library)
    levels = {k: int(v.max()) + 1 for k, v in lib.cluster_assignments.items()}
    print(f"clustered {len(lib)} pseudovox at levels {sorted(levels)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate

_WORKER: dict = {}


def _init_worker(library_dir: str, backgrounds_dir: str, cfg_dict: dict):
    cfg = GenerationConfig.from_dict(cfg_dict)
    _WORKER["library"] = load_library(library_dir, preload_audio=True)
    _WORKER["backgrounds"] = _load_backgrounds(backgrounds_dir, cfg.sample_rate)
    _WORKER["cfg"] = cfg
    _WORKER["rir_bank"] = RirBank(cfg.rir_dir, cfg.sample_rate)


def _load_backgrounds(path: str, sample_rate: int) -> BackgroundLibrary:
    return BackgroundLibrary.from_dir(path, sample_rate)


def _gen_one(task: tuple[str, str, int]) -> str:
    mode, out_dir, index = task
    cfg: GenerationConfig = _WORKER["cfg"]
    rng = pair_rng(cfg.seed, index)
    item_id = f"{index:05d}"
    if mode == "pairs":
        pair = generate_pair(_WORKER["library"], _WORKER["backgrounds"], cfg,
                             rng=rng, rir_bank=_WORKER["rir_bank"])
        tasksio.write_pair_item(Path(out_dir), item_id, pair)
    else:
        scene = generate_scene(_WORKER["library"], _WORKER["backgrounds"], cfg,
                               rng=rng, rir_bank=_WORKER["rir_bank"])
        tasksio.write_scene_item(Path(out_dir), item_id, scene)
    return item_id


def cmd_generate(args) -> int:
    cfg = resolve_generation_config(args)
    if args.pairs is not None and args.scenes is not None:
        raise CliError("choose one of --pairs / --scenes")
    mode = "pairs" if args.pairs is not None else "scenes"
    count = args.pairs if args.pairs is not None else (args.scenes or 0)
    if count <= 0:
        raise CliError("need a positive --pairs or --scenes count")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tasks = [(mode, str(out), i) for i in range(count)]
    if args.jobs > 1:
        with ProcessPoolExecutor(
                max_workers=args.jobs, initializer=_init_worker,
                initargs=(args.library, args.backgrounds, cfg.to_dict())) as pool:
            ids = list(pool.map(_gen_one, tasks, chunksize=4))
    else:
        _init_worker(args.library, args.backgrounds, cfg.to_dict())
        ids = [_gen_one(t) for t in tasks]
    ids.sort()
    kind = "scene-pairs" if mode == "pairs" else "scenes"
    tasksio.write_dataset_manifest(out, kind, cfg.to_dict(), cfg.seed, ids)
    print(f"generated {count} {mode} -> {out} "
          f"(config {tasksio.config_hash(cfg.to_dict())})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# split / crossfile

def cmd_split(args) -> int:
    manifest = tasksio.load_manifest(args.manifest)
    tasks, excluded = [], []
    for entry in manifest.recordings:
        audio, pos, unk = tasksio.load_recording(entry)
        try:
            task = split_nshot(audio, pos, n=args.n_shot, unk=unk,
                               class_label=entry.label,
                               task_id=entry.audio.stem)
        except ValueError as exc:
            excluded.append(f"{entry.audio.name}: {exc}")
            continue
        tasks.append(task)
    if not tasks:
        raise CliError("no recording had enough events to split")
    tasksio.write_tasks(args.out, tasks, dataset=manifest.dataset,
                        version=manifest.version, excluded=excluded,
                        cfg_payload={"n_shot": args.n_shot})
    print(f"split {len(tasks)} tasks ({len(excluded)} excluded) -> {args.out}")
    for line in excluded:
        print(f"  excluded: {line}")
    return EXIT_OK


def cmd_crossfile(args) -> int:
    payload, tasks = tasksio.load_tasks_any(args.tasks)
    rng = np.random.default_rng(args.seed or 0)
    crossed = build_crossfile(tasks, rng)
    tasksio.write_tasks(args.out, crossed,
                        dataset=payload.get("dataset", "crossfile"),
                        version=payload.get("version", "1"),
                        cfg_payload={"seed": args.seed or 0,
                                     "source": str(args.tasks)})
    print(f"re-paired {len(crossed)} tasks -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# detect / evaluate

def _detect_task(task, backend: str, args):
    slow = args.slow_factor
    support_audio, support_events = task.support_audio, task.support_events
    query_audio = task.query_audio
    if len(support_events) == 0:
        raise CliError(f"task {task.task_id} has no support events")
    if slow != 1.0:
        support_audio, support_events = time_dilate(support_audio,
                                                    support_events, slow)
        query_audio, _ = time_dilate(query_audio, EventList(), slow)
    d = min(ev.duration for ev in support_events)

    if backend == "bled":
        feats = support_features(support_audio, support_events)
        detections = bled_detect(query_audio, feats, args.threshold_db)
    else:
        if backend == "proto":
            det = PrototypeDetector()
        else:
            if not args.probs_dir:
                raise CliError("--probs-dir is required for the external backend")
            det = ExternalProbDetector(args.probs_dir, prefix=f"{task.task_id}_")
        mask = intervals_to_mask(support_events, 50.0, support_audio.duration)
        probs = windowed_inference(det, (support_audio, mask), query_audio,
                                   dur_s=args.dur_s, dur_q=args.dur_q)
        detections = threshold_and_smooth(probs, 50.0, d)

    if slow != 1.0:  # map detections back to the original timeline
        detections = EventList(
            events=tuple(
                type(ev)(onset=ev.onset * slow, offset=ev.offset * slow)
                for ev in detections
            ),
            label=detections.label,
        )
    return detections


def cmd_detect(args) -> int:
    payload, tasks = tasksio.load_tasks_any(args.tasks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {
        "backend": args.backend,
        "threshold_db": args.threshold_db,
        "slow_factor": args.slow_factor,
        "dur_s": args.dur_s,
        "dur_q": args.dur_q,
        "min_iou": None,
        "tasks": str(args.tasks),
    }
    ids = []
    for task in tasks:
        detections = _detect_task(task, args.backend, args)
        write_detection_csv(out / f"{task.task_id}.csv",
                            f"{task.task_id}_query.wav", detections)
        ids.append(task.task_id)
    atomic_write_text(out / "summary.json", json.dumps({
        "kind": "detections",
        "config": resolved,
        "config_hash": tasksio.config_hash(resolved),
        "ids": ids,
    }, sort_keys=True, indent=1))
    print(f"detected on {len(ids)} tasks with {args.backend} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    payload, tasks = tasksio.load_tasks_any(args.tasks)
    det_dir = Path(args.detections)
    per_task, rows = [], []
    for task in tasks:
        det_csv = det_dir / f"{task.task_id}.csv"
        if not det_csv.exists():
            raise CliError(f"missing detections for task {task.task_id}: {det_csv}")
        dets, _ = load_recording_events(det_csv)
        result = match_events(dets, task.query_events, min_iou=args.min_iou,
                              unk=task.query_unk)
        per_task.append(result)
        rows.append({
            "id": task.task_id,
            "class_label": task.class_label,
            "tp": result.tp, "fp": result.fp, "fn": result.fn,
            "n_ignored": result.n_ignored,
            "f1": result.f1,
        })
    pooled = score_dataset(per_task)
    resolved = {"min_iou": args.min_iou, "tasks": str(args.tasks),
                "detections": str(args.detections)}
    report = {
        "dataset": payload.get("dataset", "dataset"),
        "n_tasks": pooled.n_tasks,
        "tp": pooled.tp, "fp": pooled.fp, "fn": pooled.fn,
        "precision": pooled.precision,
        "recall": pooled.recall,
        "f1": pooled.f1,
        "macro_f1": macro_f1(per_task),
        "degenerate": pooled.degenerate,
        "per_task": rows,
        "config_hash": tasksio.config_hash(resolved),
        "config": resolved,
    }
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        atomic_write_text(args.out, text)
    print(f"F1@{args.min_iou} = {pooled.f1:.4f} "
          f"(tp={pooled.tp} fp={pooled.fp} fn={pooled.fn})"
          + (" [degenerate]" if pooled.degenerate else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# render

def cmd_render(args) -> int:
    from .render import render_spectrogram_png

    out = Path(args.out)
    if args.dataset:
        manifest = tasksio.load_dataset_manifest(args.dataset)
        item_id = args.id or manifest["ids"][0]
        if manifest["kind"] == "scene-pairs":
            payload = tasksio.load_pair_item(args.dataset, item_id)
            for side in ("support", "query"):
                render_spectrogram_png(
                    payload[side]["audio"], payload[side]["event_list"],
                    out / f"{item_id}_{side}.png", title=f"{item_id} {side}")
            print(f"rendered {out / item_id}_support.png and _query.png")
        else:
            scene_payload = json.loads(
                (Path(args.dataset) / "scenes" / f"{item_id}.json").read_text())
            audio = read_wav(Path(args.dataset) / scene_payload["scene"]["wav"])
            events = tasksio._events_from_json(scene_payload["scene"]["events"])
            render_spectrogram_png(audio, events, out / f"{item_id}.png",
                                   title=item_id)
            print(f"rendered {out / item_id}.png")
        return EXIT_OK
    if args.tasks:
        _, tasks = tasksio.load_tasks_any(args.tasks)
        chosen = [t for t in tasks if t.task_id == args.id] if args.id else tasks[:1]
        if not chosen:
            raise CliError(f"task {args.id!r} not found")
        task = chosen[0]
        detections = None
        if args.detections:
            det_csv = Path(args.detections) / f"{task.task_id}.csv"
            detections, _ = load_recording_events(det_csv)
        render_spectrogram_png(task.support_audio, task.support_events,
                               out / f"{task.task_id}_support.png",
                               title=f"{task.task_id} support")
        render_spectrogram_png(task.query_audio, task.query_events,
                               out / f"{task.task_id}_query.png",
                               title=f"{task.task_id} query",
                               detections=detections)
        print(f"rendered {out}/{task.task_id}_support.png and _query.png")
        return EXIT_OK
    raise CliError("render needs --dataset or --tasks")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bioscene",
        description="Synthetic acoustic scenes and few-shot bioacoustic "
                    "sound event detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="segment recordings into a pseudovox library")
    p.add_argument("--input", required=True, help="directory of .wav recordings")
    p.add_argument("--out", required=True, help="library output directory")
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--min-dur", type=float, default=0.05)
    p.add_argument("--max-dur", type=float, default=10.0)
    p.add_argument("--quality-labels", help="CSV of row,label pairs to train the filter")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cluster", help="multi-level k-means over the library")
    p.add_argument("--library", required=True)
    p.add_argument("--divisors", default="128,64,32,16,8")
    p.add_argument("--embeddings", help="precomputed embeddings, one vector per line")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("generate", help="synthesize scenes or support/query pairs")
    p.add_argument("--library", required=True)
    p.add_argument("--backgrounds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int)
    p.add_argument("--scenes", type=int)
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="scene duration override")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="within-file N-shot task construction")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-shot", type=int, default=5)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("crossfile", help="re-pair supports and queries within classes")
    p.add_argument("--tasks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_crossfile)

    p = sub.add_parser("detect", help="run a detector over tasks")
    p.add_argument("--tasks", required=True, help="tasks dir or pair dataset")
    p.add_argument("--backend", choices=("bled", "proto", "external"),
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold-db", type=float, default=DEFAULT_BLED_THRESHOLD_DB)
    p.add_argument("--slow-factor", type=float, default=1.0,
                   help="e.g. 0.5 analyzes a half-speed version")
    p.add_argument("--dur-s", type=float, default=30.0)
    p.add_argument("--dur-q", type=float, default=10.0)
    p.add_argument("--probs-dir", help="probability files for the external backend")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="IoU-matched F1 scoring")
    p.add_argument("--tasks", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--min-iou", type=float, default=0.3)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="spectrogram PNGs with event overlays")
    p.add_argument("--dataset", help="generated dataset directory")
    p.add_argument("--tasks", help="tasks directory")
    p.add_argument("--id", help="item or task id")
    p.add_argument("--detections", help="overlay detections from this directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.code, str(exc))
        return exc.code
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        _emit_error(EXIT_BAD_INPUT, f"{type(exc).__name__}: {exc}")
        return EXIT_BAD_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        _emit_error(EXIT_INTERNAL, f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


def _emit_error(code: int, message: str) -> None:
    print("ERROR " + json.dumps({"code": code, "message": message}),
          file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
