"""Training loop: AdamW with decoupled weight decay, linear warmup then
cosine decay, and an SNR-floor curriculum over shard eligibility."""

from __future__ import annotations

import csv
import math
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import ToyModelConfig
from .data import CurriculumSampler, Shard, collate, load_shard
from .model import InContextDetector, build_model, count_parameters


def lr_at(cfg: ToyModelConfig, step: int) -> float:
    if step < cfg.warmup_steps:
        return cfg.lr_max * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * frac))


def query_loss(model: InContextDetector, batch) -> torch.Tensor:
    support, mask, query, labels = batch
    logits = model(support, mask, query)
    t_q = labels.shape[1]
    return F.binary_cross_entropy_with_logits(logits[:, -t_q:], labels)


def train(cfg: ToyModelConfig, shard_dirs: list[str | Path],
          out_dir: str | Path, log_every: int = 20,
          quiet: bool = False) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shards = [load_shard(d) for d in shard_dirs]
    sampler = CurriculumSampler(shards, cfg)
    model = build_model(cfg)
    if not quiet:
        print(f"model parameters: {count_parameters(model):,}")
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_max,
                            betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    metrics_path = out_dir / "metrics.csv"
    t0 = time.time()
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "curriculum_floor",
                         "batch_min_snr", "elapsed_s"])
        for step in range(cfg.total_steps):
            records = sampler.sample(step, rng)
            batch = collate(records, cfg)
            lr = lr_at(cfg, step)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad()
            loss = query_loss(model, batch)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            if step % log_every == 0 or step == cfg.total_steps - 1:
                batch_min = min(r.min_target_snr for r in records)
                writer.writerow([step, f"{loss.item():.6f}", f"{lr:.2e}",
                                 f"{cfg.curriculum_floor(step):.2f}",
                                 f"{batch_min:.2f}", f"{time.time() - t0:.1f}"])
                fh.flush()
                if not quiet:
                    print(f"step {step:5d} loss {loss.item():.4f} lr {lr:.2e} "
                          f"floor {cfg.curriculum_floor(step):+.1f} dB")
    ckpt_path = out_dir / "checkpoint.pt"
    torch.save({"config": cfg.to_dict(), "state_dict": model.state_dict()},
               ckpt_path)
    return ckpt_path


def load_checkpoint(path: str | Path) -> InContextDetector:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg = ToyModelConfig.from_dict(payload["config"])
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
