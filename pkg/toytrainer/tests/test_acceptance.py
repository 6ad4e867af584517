"""Secondary acceptance: learnability against the training-free detectors,
in-context use of the support labels, export round trip, overfit sanity, and
the head-gradient check. The detection pipeline is exercised strictly through
its CLI and file formats. Run with `pytest tests/test_acceptance.py -v -s`.

The full experiment (data generation + training) takes on the order of
15 minutes on one CPU core.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from toytrainer.config import ToyModelConfig
from toytrainer.data import load_shard
from toytrainer.evalmini import evaluate_model
from toytrainer.export import export_probs
from toytrainer.tasks import Task, load_tasks
from toytrainer.train import load_checkpoint, train

from tests.conftest import SR, write_wav_f32

FAMILIES = [500, 800, 1100, 1500, 2000, 2600, 3300, 4000, 4800, 5600, 6400, 7000]

TRAIN_CONFIG = dict(
    cnn_channels=8, hidden=96, depth=2, heads=4,
    dur_s=6.0, dur_q=3.0,
    lr_max=1e-3, warmup_steps=50, total_steps=500, batch_size=4,
    curriculum_steps=300, snr_start_db=0.0, snr_floor_db=-20.0,
    seed=0,
)

GEN_COMMON = [
    "--set", "dur_s=6.0", "--set", "dur_q=3.0",
    "--set", "apply_reverb=false", "--set", "rho_set=[1.0]",
    "--set", "gap_mean_range=[0.0,6.0]", "--set", "gap_std_range=[0.0,2.0]",
    "--set", "rate_set=[1.0,0.5]", "--set", "fixed_level_divisor=16",
]

# three shards x 267 pairs x (6 + 3) s ~= 2.0 hours of audio
PAIRS_PER_SHARD = 267


def check(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def run_cli(args: list) -> str:
    cmd = [str(a) for a in args]
    res = subprocess.run(cmd, capture_output=True, text=True)
    if res.returncode != 0:
        raise RuntimeError(
            f"{' '.join(cmd)} failed ({res.returncode}):\n{res.stderr[-2000:]}")
    return res.stdout


def synth_call(rng, fam_idx):
    freq = FAMILIES[fam_idx] * (1 + 0.02 * rng.standard_normal())
    dur = 0.15 + 0.2 * rng.random()
    t = np.arange(int(dur * SR)) / SR
    x = np.sin(2 * np.pi * freq * t)
    if fam_idx % 2 == 1:  # pulsed call types
        x *= 0.5 * (1 + np.sign(np.sin(2 * np.pi * (8 + fam_idx) * t)))
    x *= np.hanning(len(t))
    return 0.5 * x


def colored_noise(n, rng, tilt):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.maximum(np.fft.rfftfreq(n, 1 / SR), 1.0)
    spec /= freqs ** (tilt / 2)
    x = np.fft.irfft(spec, n)
    return 0.05 * x / np.std(x)


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    """Build data through the detection pipeline CLI, train, and score."""
    root = tmp_path_factory.mktemp("experiment")
    raw, bg, lib = root / "raw", root / "bg", root / "library"
    rng = np.random.default_rng(100)

    # raw single-family recordings -> pseudovox library
    for i in range(len(FAMILIES)):
        x = 1e-4 * rng.standard_normal(int(25 * 0.8 * SR) + SR)
        pos = int(0.3 * SR)
        for _ in range(25):
            call = synth_call(rng, i)
            x[pos : pos + len(call)] += call
            pos += len(call) + int(0.5 * SR)
        write_wav_f32(raw / f"fam{i:02d}.wav", x)
    for i in range(4):
        write_wav_f32(bg / f"bg{i}.wav", colored_noise(4 * SR, rng, 0.4 + 0.3 * i))
    run_cli(["bioscene", "extract", "--input", raw, "--out", lib])
    run_cli(["bioscene", "cluster", "--library", lib,
             "--divisors", "128,64,32,16,8"])

    gen = ["bioscene", "generate", "--library", lib, "--backgrounds", bg,
           *GEN_COMMON]
    shard_dirs = []
    for i, floor in enumerate([0.0, -10.0, -20.0]):
        out = root / f"shard{i}"
        run_cli(gen + ["--pairs", PAIRS_PER_SHARD, "--seed", 1000 + i,
                       "--set", f"snr_floor={floor}", "--out", out])
        shard_dirs.append(out)
    eval_dir = root / "evaltasks"
    run_cli(gen + ["--pairs", 30, "--seed", 7777,
                   "--set", "snr_floor=-10.0", "--out", eval_dir])
    overfit_dir = root / "overfit"
    run_cli(gen + ["--pairs", 4, "--seed", 8888,
                   "--set", "snr_floor=0.0", "--out", overfit_dir])

    total_audio_s = sum(
        9.0 * len(load_shard(d)) for d in shard_dirs)
    assert total_audio_s >= 2 * 3600, "training corpus below two hours"

    cfg = ToyModelConfig(**TRAIN_CONFIG)
    ckpt = train(cfg, shard_dirs, root / "run", quiet=True)
    model = load_checkpoint(ckpt)

    # toy model through the external bridge
    probs_dir = root / "probs"
    tasks = load_tasks(eval_dir)
    export_probs(model, tasks, probs_dir, dur_s=cfg.dur_s, dur_q=cfg.dur_q)
    f1 = {}
    run_cli(["bioscene", "detect", "--tasks", eval_dir, "--backend", "external",
             "--probs-dir", probs_dir, "--dur-s", cfg.dur_s, "--dur-q",
             cfg.dur_q, "--out", root / "det_toy"])
    run_cli(["bioscene", "evaluate", "--tasks", eval_dir, "--detections",
             root / "det_toy", "--out", root / "report_toy.json"])
    f1["toy"] = json.loads((root / "report_toy.json").read_text())["f1"]

    # label-shuffled variant
    shuf_dir = root / "probs_shuffled"
    export_probs(model, tasks, shuf_dir, dur_s=cfg.dur_s, dur_q=cfg.dur_q,
                 shuffle_seed=5)
    run_cli(["bioscene", "detect", "--tasks", eval_dir, "--backend", "external",
             "--probs-dir", shuf_dir, "--dur-s", cfg.dur_s, "--dur-q",
             cfg.dur_q, "--out", root / "det_shuffled"])
    run_cli(["bioscene", "evaluate", "--tasks", eval_dir, "--detections",
             root / "det_shuffled", "--out", root / "report_shuffled.json"])
    f1["shuffled"] = json.loads((root / "report_shuffled.json").read_text())["f1"]

    # training-free baselines on the same tasks
    for backend in ("proto", "bled"):
        run_cli(["bioscene", "detect", "--tasks", eval_dir, "--backend",
                 backend, "--dur-s", cfg.dur_s, "--dur-q", cfg.dur_q,
                 "--out", root / f"det_{backend}"])
        run_cli(["bioscene", "evaluate", "--tasks", eval_dir, "--detections",
                 root / f"det_{backend}", "--out",
                 root / f"report_{backend}.json"])
        f1[backend] = json.loads((root / f"report_{backend}.json").read_text())["f1"]

    f1["inprocess"] = evaluate_model(model, tasks, dur_s=cfg.dur_s,
                                     dur_q=cfg.dur_q)
    return {
        "root": root,
        "cfg": cfg,
        "model": model,
        "tasks": tasks,
        "overfit_dir": overfit_dir,
        "f1": f1,
    }


def test_learnability_beats_training_free_detectors(experiment):
    f1 = experiment["f1"]
    check("toy-learnability",
          f1["toy"] > f1["bled"] and f1["toy"] > f1["proto"],
          f"toy {f1['toy']:.3f} > bled {f1['bled']:.3f} and "
          f"proto {f1['proto']:.3f} (2 h corpus, primary evaluator)")


def test_export_round_trip_matches_primary(experiment):
    f1 = experiment["f1"]
    diff = abs(f1["toy"] - f1["inprocess"])
    check("bridge-round-trip", diff <= 1e-6,
          f"primary F1 {f1['toy']:.6f} vs in-process {f1['inprocess']:.6f} "
          f"(|diff| = {diff:.2e} <= 1e-6)")


def test_label_conditioning(experiment):
    f1 = experiment["f1"]
    drop = (f1["toy"] - f1["shuffled"]) / max(f1["toy"], 1e-12)
    check("label-conditioning", drop >= 0.20,
          f"shuffled support labels: F1 {f1['toy']:.3f} -> "
          f"{f1['shuffled']:.3f} ({drop:.0%} relative drop >= 20%)")


def test_overfit_four_pairs(experiment):
    import csv

    cfg = ToyModelConfig(
        cnn_channels=4, hidden=64, depth=2, heads=2,
        dur_s=6.0, dur_q=3.0,
        lr_max=3e-3, warmup_steps=5, total_steps=50, batch_size=4,
        curriculum_steps=0, seed=1,
    )
    out = experiment["root"] / "overfit_run"
    train(cfg, [experiment["overfit_dir"]], out, log_every=1, quiet=True)
    with open(out / "metrics.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    initial, final = float(rows[0]["loss"]), float(rows[-1]["loss"])
    check("overfit", final < 0.1 * initial,
          f"loss {initial:.4f} -> {final:.4f} ({initial / max(final, 1e-9):.1f}x)")


def test_head_gradient_finite_differences():
    import torch.nn.functional as F

    torch.manual_seed(0)
    cfg = ToyModelConfig(cnn_channels=4, hidden=32, depth=1, heads=2,
                         dur_s=2.0, dur_q=1.0)
    from toytrainer.model import build_model

    model = build_model(cfg).double()
    g = torch.Generator().manual_seed(3)
    support = (torch.randn(1, 2 * SR, generator=g) * 0.05).double()
    query = (torch.randn(1, SR, generator=g) * 0.05).double()
    mask = torch.zeros(1, 100, dtype=torch.float64)
    mask[:, 10:30] = 1.0
    labels = torch.zeros(1, 50, dtype=torch.float64)
    labels[:, 20:35] = 1.0

    def loss_fn():
        logits = model(support, mask, query)
        return F.binary_cross_entropy_with_logits(logits[:, -50:], labels)

    loss_fn().backward()
    analytic = model.head.weight.grad.flatten()
    eps = 1e-5
    worst = 0.0
    with torch.no_grad():
        flat = model.head.weight.flatten()
        for idx in np.random.default_rng(4).choice(analytic.numel(), 6,
                                                   replace=False):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            hi = loss_fn().item()
            flat[idx] = orig - eps
            lo = loss_fn().item()
            flat[idx] = orig
            numeric = (hi - lo) / (2 * eps)
            rel = abs(numeric - analytic[idx].item()) / max(
                abs(numeric), abs(analytic[idx].item()), 1e-12)
            worst = max(worst, rel)
    check("head-gradient", worst <= 1e-3,
          f"max relative error {worst:.2e} <= 1e-3 over 6 sampled weights")


def test_export_row_count_for_ten_second_window(tmp_path):
    from toytrainer.model import build_model

    cfg = ToyModelConfig(cnn_channels=4, hidden=32, depth=1, heads=2,
                         dur_s=4.0, dur_q=10.0)
    model = build_model(cfg).eval()
    rng = np.random.default_rng(9)
    task = Task(
        task_id="T0",
        support_wave=0.01 * rng.standard_normal(6 * SR),
        support_events=((1.0, 1.5),),
        query_wave=0.01 * rng.standard_normal(10 * SR),
        query_events=((2.0, 2.5),),
        sample_rate=SR,
    )
    export_probs(model, [task], tmp_path, dur_s=cfg.dur_s, dur_q=cfg.dur_q)
    path = tmp_path / "T0_s000_q000.probs"
    rows = [l for l in path.read_text().splitlines() if l.strip()]
    check("export-frame-count", len(rows) == 500,
          f"{len(rows)} rows for a 10 s query window (50 Hz)")
