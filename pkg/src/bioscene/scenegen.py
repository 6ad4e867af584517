"""Scene synthesis with domain randomization.

Generation is a two-step process: ``plan_*`` functions consume RNG and record
every sampled parameter (the provenance), and ``render_*`` functions turn a
plan into audio deterministically. Because rendering is RNG-free, any placed
event can be re-rendered in isolation from its provenance entry, and
Monte-Carlo statistics of the sampler can be collected without touching DSP.

Each scene owns an independent RNG stream; the background, target, and
distractor substreams are split off separately so that disabling one group
cannot perturb the draws of another.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .audio_io import read_wav
from .core import (
    AudioBuffer,
    EventInterval,
    EventList,
    Scene,
    SupportQueryExample,
    intervals_to_mask,
    merge_overlaps,
)
from .dsp import convolve_rir, make_synthetic_ir, resample, to_sample_rate
from .pseudovox import PseudovoxLibrary

logger = logging.getLogger(__name__)

PRESET_NAMES = (
    "reference",
    "high_homogeneity",
    "low_homogeneity",
    "high_rate",
    "low_rate",
    "high_snr",
    "low_snr",
    "no_pitch_shift",
)


@dataclass(frozen=True)
class GenerationConfig:
    """Every random-sampling knob of the scene generator."""

    scene_dur: float = 40.0
    dur_s: float = 30.0
    dur_q: float = 10.0
    rate_set: tuple = (1.0, 0.5, 0.25, 0.125, 0.0625)
    rho_set: tuple = (0.3, 0.5, 0.7, 1.0, 1.0, 1.0, 1.5, 2.0)
    flip_prob: float = 0.2
    snr_mean_range: tuple = (-12.0, 7.0)
    snr_std_range: tuple = (0.0, 5.0)
    mixture_weight_set: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    gap_mean_range: tuple = (0.0, 30.0)
    gap_std_range: tuple = (0.0, 10.0)
    p_gen: float = 0.5
    snr_floor: float = -20.0
    support_force_event_prob: float = 1.0
    query_force_event_prob: float = 0.5
    seed: int = 0
    sample_rate: int = 16000
    mask_frame_rate: float = 50.0
    apply_reverb: bool = True
    include_distractors: bool = True
    rir_dir: Optional[str] = None
    rir_rt60_range: tuple = (0.1, 1.0)
    fixed_level_divisor: Optional[int] = None

    def __post_init__(self):
        for name in ("flip_prob", "p_gen", "support_force_event_prob",
                     "query_force_event_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.scene_dur <= 0 or self.dur_s <= 0 or self.dur_q <= 0:
            raise ValueError("durations must be positive")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        kwargs = {}
        tuple_fields = {f.name for f in fields(cls) if isinstance(getattr(cls, f.name, None), tuple)}
        for f in fields(cls):
            if f.name in data:
                v = data[f.name]
                kwargs[f.name] = tuple(v) if f.name in tuple_fields and v is not None else v
        return cls(**kwargs)


def preset(name: str) -> GenerationConfig:
    """Named single-knob variations of the reference configuration."""
    base = GenerationConfig()
    if name == "reference":
        return base
    if name == "high_homogeneity":
        return replace(base, fixed_level_divisor=8)
    if name == "low_homogeneity":
        return replace(base, fixed_level_divisor=128)
    if name == "high_rate":
        return replace(base, rate_set=(1.0,))
    if name == "low_rate":
        return replace(base, rate_set=(0.0625,))
    if name == "high_snr":
        return replace(base, snr_mean_range=(2.0, 7.0))
    if name == "low_snr":
        return replace(base, snr_mean_range=(-12.0, -7.0))
    if name == "no_pitch_shift":
        return replace(base, rho_set=(1.0,))
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


@dataclass(frozen=True)
class EventPlanGMM:
    """Two-component Gaussian mixture used for per-event amplitudes and gaps."""

    means: tuple[float, float]
    stds: tuple[float, float]
    weight2: float

    def __post_init__(self):
        if any(s < 0 for s in self.stds):
            raise ValueError("stds must be non-negative")
        if not (0.0 <= self.weight2 <= 0.5):
            raise ValueError("weight2 must be in [0, 0.5]")

    def sample(self, rng: np.random.Generator) -> float:
        comp = 1 if rng.random() < self.weight2 else 0
        return float(rng.normal(self.means[comp], self.stds[comp]))

    def to_dict(self) -> dict:
        return {"means": list(self.means), "stds": list(self.stds),
                "weight2": self.weight2}


def sample_gmm(mean_range: tuple, std_range: tuple, weight_set: Sequence[float],
               rng: np.random.Generator) -> EventPlanGMM:
    return EventPlanGMM(
        means=(float(rng.uniform(*mean_range)), float(rng.uniform(*mean_range))),
        stds=(float(rng.uniform(*std_range)), float(rng.uniform(*std_range))),
        weight2=float(rng.choice(np.asarray(weight_set))),
    )


def sample_event_count(r: float, dur: float, force_event_prob: float,
                       rng: np.random.Generator) -> int:
    """n ~ Poisson(r * dur), then n := max(n, 1) with the given probability."""
    n = int(rng.poisson(r * dur))
    if force_event_prob > 0 and rng.random() < force_event_prob:
        n = max(n, 1)
    return n


def sample_clusters(library: PseudovoxLibrary, rng: np.random.Generator,
                    fixed_level_divisor: Optional[int] = None) -> tuple[int, int, int]:
    """Draw a clustering level k and two distinct non-empty clusters."""
    levels = library.levels
    if not levels:
        raise ValueError("library has no cluster assignments")
    if fixed_level_divisor is not None:
        k = len(library) // fixed_level_divisor
        if k not in library.cluster_assignments:
            raise ValueError(
                f"level k={k} (M/{fixed_level_divisor}) not present in library "
                f"levels {levels}"
            )
    else:
        k = int(levels[rng.integers(len(levels))])
    clusters = library.nonempty_clusters(k)
    if len(clusters) < 2:
        raise ValueError(f"level k={k} has fewer than 2 non-empty clusters")
    c_t, c_d = rng.choice(clusters, size=2, replace=False)
    return int(k), int(c_t), int(c_d)


def sample_from_cluster(library: PseudovoxLibrary, level: int, cluster: int,
                        n: int, rng: np.random.Generator) -> list[int]:
    """Draw n clip indices; clusters smaller than n are drawn with replacement."""
    members = library.cluster_members(level, cluster)
    if len(members) == 0:
        raise ValueError(f"cluster {cluster} at level {level} is empty")
    replace_draws = len(members) < n
    return [int(i) for i in rng.choice(members, size=n, replace=replace_draws)]


def set_snr(clip: AudioBuffer, background: AudioBuffer,
            target_snr: float) -> AudioBuffer:
    """Rescale clip so that rms_db(clip, background) equals target_snr."""
    bg_rms = background.rms()
    if bg_rms == 0.0:
        raise ValueError("background is silent")
    clip_rms = clip.rms()
    if clip_rms == 0.0:
        raise ValueError("clip is silent")
    scale = bg_rms * 10.0 ** (target_snr / 20.0) / clip_rms
    return AudioBuffer(samples=clip.samples * scale, sample_rate=clip.sample_rate)


def _snr_scale(clip_samples: np.ndarray, bg_rms: float, target_snr: float) -> float:
    clip_rms = float(np.sqrt(np.mean(np.square(clip_samples))))
    if clip_rms == 0.0:
        return 0.0
    return bg_rms * 10.0 ** (target_snr / 20.0) / clip_rms


def _draw_clamped_snr(gmm: EventPlanGMM, floor: float,
                      rng: np.random.Generator, tries: int = 100) -> float:
    for _ in range(tries):
        v = gmm.sample(rng)
        if v >= floor:
            return v
    return floor


def _draw_rir_spec(cfg: GenerationConfig, n_rir_files: int,
                   rng: np.random.Generator) -> Optional[dict]:
    if not cfg.apply_reverb:
        return None
    if cfg.rir_dir is not None and n_rir_files > 0:
        return {"kind": "file", "index": int(rng.integers(n_rir_files))}
    return {
        "kind": "synthetic",
        "rt60": float(rng.uniform(*cfg.rir_rt60_range)),
        "seed": int(rng.integers(2 ** 31)),
    }


@dataclass
class GroupPlan:
    """Sampled parameters for one pseudovox group (targets or distractors)."""

    is_target: bool
    rate: float
    count: int
    clip_indices: list[int]
    rho: float
    flip: bool
    rirs: list[Optional[dict]]
    snrs_db: list[float]
    gaps_s: list[float]


@dataclass
class SharedPlan:
    """Parameters shared between the support and query scene of one pair."""

    level_k: int
    cluster_target: int
    cluster_distractor: int
    amp_gmm_target: EventPlanGMM
    amp_gmm_distractor: EventPlanGMM
    gap_gmm_target: EventPlanGMM
    gap_gmm_distractor: EventPlanGMM
    bg_indices: tuple[int, int]


@dataclass
class ScenePlan:
    role: str
    scene_dur: float
    shared: SharedPlan
    bg_indices: tuple[int, int]
    bg_rhos: tuple[float, float]
    bg_redrawn: Optional[bool]
    target: GroupPlan
    distractor: Optional[GroupPlan]


def plan_shared(library: PseudovoxLibrary, n_backgrounds: int,
                cfg: GenerationConfig, rng: np.random.Generator) -> SharedPlan:
    if n_backgrounds < 2:
        raise ValueError("need at least 2 background tracks")
    k, c_t, c_d = sample_clusters(library, rng, cfg.fixed_level_divisor)
    return SharedPlan(
        level_k=k,
        cluster_target=c_t,
        cluster_distractor=c_d,
        amp_gmm_target=sample_gmm(cfg.snr_mean_range, cfg.snr_std_range,
                                  cfg.mixture_weight_set, rng),
        amp_gmm_distractor=sample_gmm(cfg.snr_mean_range, cfg.snr_std_range,
                                      cfg.mixture_weight_set, rng),
        gap_gmm_target=sample_gmm(cfg.gap_mean_range, cfg.gap_std_range,
                                  cfg.mixture_weight_set, rng),
        gap_gmm_distractor=sample_gmm(cfg.gap_mean_range, cfg.gap_std_range,
                                      cfg.mixture_weight_set, rng),
        bg_indices=tuple(int(i) for i in rng.choice(n_backgrounds, size=2,
                                                    replace=False)),
    )


def _plan_group(library: PseudovoxLibrary, shared: SharedPlan, is_target: bool,
                scene_dur: float, force_prob: float, cfg: GenerationConfig,
                n_rir_files: int, rng: np.random.Generator) -> GroupPlan:
    rate = float(rng.choice(np.asarray(cfg.rate_set)))
    count = sample_event_count(rate, scene_dur, force_prob, rng)
    cluster = shared.cluster_target if is_target else shared.cluster_distractor
    amp_gmm = shared.amp_gmm_target if is_target else shared.amp_gmm_distractor
    gap_gmm = shared.gap_gmm_target if is_target else shared.gap_gmm_distractor
    clip_indices = sample_from_cluster(library, shared.level_k, cluster, count, rng)
    flip = bool(rng.random() < cfg.flip_prob)
    rho = float(rng.choice(np.asarray(cfg.rho_set)))
    rirs = [_draw_rir_spec(cfg, n_rir_files, rng) for _ in range(count)]
    snrs = [_draw_clamped_snr(amp_gmm, cfg.snr_floor, rng) for _ in range(count)]
    gaps = [max(0.0, gap_gmm.sample(rng)) for _ in range(count)]
    return GroupPlan(is_target=is_target, rate=rate, count=count,
                     clip_indices=clip_indices, rho=rho, flip=flip,
                     rirs=rirs, snrs_db=snrs, gaps_s=gaps)


def plan_scene(library: PseudovoxLibrary, n_backgrounds: int,
               cfg: GenerationConfig, role: str, shared: SharedPlan,
               rng: np.random.Generator, scene_dur: Optional[float] = None,
               n_rir_files: int = 0) -> ScenePlan:
    if scene_dur is None:
        scene_dur = {"support": cfg.dur_s, "query": cfg.dur_q}.get(role, cfg.scene_dur)
    force = (cfg.query_force_event_prob if role == "query"
             else cfg.support_force_event_prob)
    bg_rng, target_rng, distractor_rng = rng.spawn(3)

    bg_redrawn: Optional[bool] = None
    bg_indices = shared.bg_indices
    if role == "query":
        bg_redrawn = bool(bg_rng.random() < cfg.p_gen)
        if bg_redrawn:
            bg_indices = tuple(int(i) for i in bg_rng.choice(
                n_backgrounds, size=2, replace=False))
    bg_rhos = tuple(float(bg_rng.choice(np.asarray(cfg.rho_set))) for _ in range(2))

    target = _plan_group(library, shared, True, scene_dur, force, cfg,
                         n_rir_files, target_rng)
    distractor = None
    if cfg.include_distractors:
        distractor = _plan_group(library, shared, False, scene_dur, force, cfg,
                                 n_rir_files, distractor_rng)
    return ScenePlan(role=role, scene_dur=scene_dur, shared=shared,
                     bg_indices=bg_indices, bg_rhos=bg_rhos,
                     bg_redrawn=bg_redrawn, target=target, distractor=distractor)


@dataclass
class BackgroundLibrary:
    names: list[str]
    tracks: list[AudioBuffer]

    def __len__(self) -> int:
        return len(self.tracks)

    @classmethod
    def from_dir(cls, path: str | Path, sample_rate: int = 16000) -> "BackgroundLibrary":
        path = Path(path)
        names, tracks = [], []
        for wav in sorted(path.glob("*.wav")):
            buf = to_sample_rate(read_wav(wav), sample_rate)
            names.append(wav.name)
            tracks.append(buf)
        if not tracks:
            raise ValueError(f"no .wav background tracks in {path}")
        return cls(names=names, tracks=tracks)


class RirBank:
    """Recorded impulse responses from a directory, or synthetic on demand."""

    def __init__(self, rir_dir: Optional[str], sample_rate: int = 16000):
        self.sample_rate = sample_rate
        self.files: list[AudioBuffer] = []
        if rir_dir is not None:
            for wav in sorted(Path(rir_dir).glob("*.wav")):
                self.files.append(to_sample_rate(read_wav(wav), sample_rate))

    def __len__(self) -> int:
        return len(self.files)

    def get(self, spec: dict) -> AudioBuffer:
        if spec["kind"] == "file":
            return self.files[spec["index"]]
        rng = np.random.default_rng(spec["seed"])
        return make_synthetic_ir(spec["rt60"], self.sample_rate, rng)


def render_background(bg_indices: Sequence[int], bg_rhos: Sequence[float],
                      backgrounds: BackgroundLibrary, n_samples: int) -> np.ndarray:
    """Two tracks, each resampled then looped to the scene length, summed."""
    mix = np.zeros(n_samples)
    for idx, rho in zip(bg_indices, bg_rhos):
        track = backgrounds.tracks[idx]
        if rho != 1.0:
            track = resample(track, rho)
        if len(track) == 0:
            raise ValueError(f"background track {idx} is empty")
        mix += np.resize(track.samples, n_samples)
    return mix


def sample_background(backgrounds: BackgroundLibrary, cfg: GenerationConfig,
                      rng: np.random.Generator,
                      scene_dur: Optional[float] = None) -> AudioBuffer:
    """Draw, augment, loop, and overlay two background tracks."""
    if len(backgrounds) < 2:
        raise ValueError("need at least 2 background tracks")
    dur = cfg.scene_dur if scene_dur is None else scene_dur
    n = int(round(dur * cfg.sample_rate))
    indices = rng.choice(len(backgrounds), size=2, replace=False)
    rhos = [float(rng.choice(np.asarray(cfg.rho_set))) for _ in range(2)]
    return AudioBuffer(render_background(indices, rhos, backgrounds, n),
                       sample_rate=cfg.sample_rate)


def augment_pseudovox(clips: list[AudioBuffer], cfg: GenerationConfig,
                      rng: np.random.Generator,
                      rir_bank: Optional[RirBank] = None
                      ) -> tuple[list[AudioBuffer], float, bool]:
    """Group-wise flip and resampling, per-clip reverb.

    Returns the augmented clips plus the drawn (rho, flip); amplitude is
    handled later by set_snr.
    """
    flip = bool(rng.random() < cfg.flip_prob)
    rho = float(rng.choice(np.asarray(cfg.rho_set)))
    bank = rir_bank or RirBank(cfg.rir_dir, cfg.sample_rate)
    out = []
    for clip in clips:
        spec = _draw_rir_spec(cfg, len(bank), rng)
        out.append(_render_clip(clip, rho, flip, spec, bank))
    return out, rho, flip


def _render_clip(clip: AudioBuffer, rho: float, flip: bool,
                 rir_spec: Optional[dict], rir_bank: RirBank) -> AudioBuffer:
    samples = clip.samples[::-1] if flip else clip.samples
    buf = AudioBuffer(samples=samples, sample_rate=clip.sample_rate)
    if rho != 1.0:
        buf = resample(buf, rho)
    if rir_spec is not None:
        buf = convolve_rir(buf, rir_bank.get(rir_spec))
    return buf


def placement_contribution(library: PseudovoxLibrary, placement: dict,
                           n_samples: int, sample_rate: int,
                           rir_bank: Optional[RirBank] = None) -> np.ndarray:
    """Re-render the exact samples one provenance entry added to a scene."""
    bank = rir_bank or RirBank(None, sample_rate)
    clip = library.clip_audio(placement["clip_index"])
    rendered = _render_clip(clip, placement["rho"], placement["flip"],
                            placement["rir"], bank)
    samples = rendered.samples[: min(len(rendered), n_samples)] * placement["scale"]
    out = np.zeros(n_samples)
    _paste_wrapped(out, samples, placement["start_sample"])
    return out


def _paste_wrapped(mix: np.ndarray, samples: np.ndarray, start: int) -> int:
    """Mix samples into the scene starting at `start`, wrapping past the end.

    Returns the (unwrapped) end position.
    """
    n = len(mix)
    end = start + len(samples)
    if end <= n:
        mix[start:end] += samples
    else:
        head = n - start
        mix[start:] += samples[:head]
        mix[: end - n] += samples[head:]
    return end


def _wrap_intervals(start: int, length: int, n_samples: int,
                    sample_rate: float) -> list[EventInterval]:
    end = start + length
    if end <= n_samples:
        return [EventInterval(start / sample_rate, end / sample_rate)]
    return [
        EventInterval(start / sample_rate, n_samples / sample_rate),
        EventInterval(0.0, (end - n_samples) / sample_rate),
    ]


def place_events(background: AudioBuffer, clips: list[AudioBuffer],
                 gap_gmm: EventPlanGMM, is_target: bool,
                 rng: np.random.Generator,
                 mask_frame_rate: float = 50.0) -> Scene:
    """Paste pre-scaled clips one-by-one with GMM-sampled gaps.

    Negative gap draws clamp to 0; events extending past the scene end wrap
    to the beginning (contributing two intervals). Only target clips update
    the event list and mask.
    """
    sr = background.sample_rate
    n = len(background)
    mix = background.samples.copy()
    intervals: list[EventInterval] = []
    cursor = 0
    for clip in clips:
        samples = clip.samples
        if len(samples) > n:
            logger.warning("clip longer than scene (%d > %d samples); truncated",
                           len(samples), n)
            samples = samples[:n]
        if len(samples) == 0:
            continue
        gap_s = max(0.0, gap_gmm.sample(rng))
        start = (cursor + int(round(gap_s * sr))) % n
        cursor = _paste_wrapped(mix, samples, start)
        if is_target:
            intervals.extend(_wrap_intervals(start, len(samples), n, sr))
    events = merge_overlaps(EventList(events=tuple(intervals), label="POS"))
    duration = n / sr
    return Scene(
        audio=AudioBuffer(samples=mix, sample_rate=sr),
        mask=intervals_to_mask(events, mask_frame_rate, duration),
        events=events,
        provenance={"placed": len(clips), "is_target": is_target},
    )


def _place_group(mix: np.ndarray, group: GroupPlan, library: PseudovoxLibrary,
                 bg_rms: float, rir_bank: RirBank, sample_rate: int,
                 n_samples: int) -> tuple[list[dict], list[EventInterval]]:
    placements: list[dict] = []
    intervals: list[EventInterval] = []
    cursor = 0
    for clip_idx, rir_spec, snr_db, gap_s in zip(
            group.clip_indices, group.rirs, group.snrs_db, group.gaps_s):
        rendered = _render_clip(library.clip_audio(clip_idx), group.rho,
                                group.flip, rir_spec, rir_bank)
        samples = rendered.samples
        if len(samples) > n_samples:
            logger.warning("clip %d longer than scene (%d > %d samples); truncated",
                           clip_idx, len(samples), n_samples)
            samples = samples[:n_samples]
        if len(samples) == 0:
            continue
        scale = _snr_scale(samples, bg_rms, snr_db)
        if scale == 0.0:
            logger.warning("clip %d is silent after augmentation; skipped", clip_idx)
            continue
        samples = samples * scale
        start = (cursor + int(round(gap_s * sample_rate))) % n_samples
        cursor = _paste_wrapped(mix, samples, start)
        placements.append({
            "group": "target" if group.is_target else "distractor",
            "clip_index": clip_idx,
            "rho": group.rho,
            "flip": group.flip,
            "rir": rir_spec,
            "snr_db": snr_db,
            "scale": scale,
            "start_sample": start,
            "length": len(samples),
        })
        if group.is_target:
            intervals.extend(_wrap_intervals(start, len(samples), n_samples,
                                             sample_rate))
    return placements, intervals


def render_scene(plan: ScenePlan, library: PseudovoxLibrary,
                 backgrounds: BackgroundLibrary, cfg: GenerationConfig,
                 rir_bank: Optional[RirBank] = None) -> Scene:
    sr = cfg.sample_rate
    n_samples = int(round(plan.scene_dur * sr))
    duration = n_samples / sr
    bank = rir_bank or RirBank(cfg.rir_dir, sr)

    mix = render_background(plan.bg_indices, plan.bg_rhos, backgrounds, n_samples)
    bg_rms = float(np.sqrt(np.mean(np.square(mix))))
    if bg_rms == 0.0:
        raise ValueError("background mix is silent; cannot calibrate event SNR")

    placements: list[dict] = []
    intervals: list[EventInterval] = []
    groups = [plan.target] + ([plan.distractor] if plan.distractor else [])
    for group in groups:
        p, iv = _place_group(mix, group, library, bg_rms, bank, sr, n_samples)
        placements.extend(p)
        intervals.extend(iv)

    events = merge_overlaps(EventList(events=tuple(intervals), label="POS"))
    mask = intervals_to_mask(events, cfg.mask_frame_rate, duration)
    shared = plan.shared
    provenance = {
        "role": plan.role,
        "scene_dur": plan.scene_dur,
        "sample_rate": sr,
        "mask_frame_rate": cfg.mask_frame_rate,
        "snr_floor": cfg.snr_floor,
        "level_k": shared.level_k,
        "cluster_target": shared.cluster_target,
        "cluster_distractor": shared.cluster_distractor,
        "amp_gmm_target": shared.amp_gmm_target.to_dict(),
        "amp_gmm_distractor": shared.amp_gmm_distractor.to_dict(),
        "gap_gmm_target": shared.gap_gmm_target.to_dict(),
        "gap_gmm_distractor": shared.gap_gmm_distractor.to_dict(),
        "bg_indices": list(plan.bg_indices),
        "bg_rhos": list(plan.bg_rhos),
        "bg_redrawn": plan.bg_redrawn,
        "rate_target": plan.target.rate,
        "n_target": plan.target.count,
        "rate_distractor": plan.distractor.rate if plan.distractor else None,
        "n_distractor": plan.distractor.count if plan.distractor else None,
        "events": placements,
    }
    return Scene(audio=AudioBuffer(samples=mix, sample_rate=sr), mask=mask,
                 events=events, provenance=provenance)


def generate_scene(library: PseudovoxLibrary, backgrounds: BackgroundLibrary,
                   cfg: GenerationConfig, role: str = "single",
                   shared: Optional[SharedPlan] = None,
                   rng: Optional[np.random.Generator] = None,
                   scene_dur: Optional[float] = None,
                   rir_bank: Optional[RirBank] = None) -> Scene:
    """Plan and render one scene."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    bank = rir_bank or RirBank(cfg.rir_dir, cfg.sample_rate)
    if shared is None:
        shared = plan_shared(library, len(backgrounds), cfg, rng)
    plan = plan_scene(library, len(backgrounds), cfg, role, shared, rng,
                      scene_dur=scene_dur, n_rir_files=len(bank))
    return render_scene(plan, library, backgrounds, cfg, rir_bank=bank)


def plan_pair(library: PseudovoxLibrary, n_backgrounds: int,
              cfg: GenerationConfig, rng: np.random.Generator,
              n_rir_files: int = 0) -> tuple[SharedPlan, ScenePlan, ScenePlan]:
    """Plan a support/query pair sharing clusters, GMMs, and (maybe) backgrounds."""
    shared = plan_shared(library, n_backgrounds, cfg, rng)
    support_rng, query_rng = rng.spawn(2)
    support_plan = plan_scene(library, n_backgrounds, cfg, "support", shared,
                              support_rng, n_rir_files=n_rir_files)
    query_plan = plan_scene(library, n_backgrounds, cfg, "query", shared,
                            query_rng, n_rir_files=n_rir_files)
    return shared, support_plan, query_plan


def generate_pair(library: PseudovoxLibrary, backgrounds: BackgroundLibrary,
                  cfg: GenerationConfig,
                  rng: Optional[np.random.Generator] = None,
                  rir_bank: Optional[RirBank] = None) -> SupportQueryExample:
    """Generate one support/query pair."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    bank = rir_bank or RirBank(cfg.rir_dir, cfg.sample_rate)
    _, support_plan, query_plan = plan_pair(library, len(backgrounds), cfg, rng,
                                            n_rir_files=len(bank))
    support = render_scene(support_plan, library, backgrounds, cfg, rir_bank=bank)
    query = render_scene(query_plan, library, backgrounds, cfg, rir_bank=bank)
    return SupportQueryExample(support=support, query=query,
                               dur_s=cfg.dur_s, dur_q=cfg.dur_q)


def pair_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-item RNG stream: worker order cannot change results."""
    return np.random.default_rng([seed, index])


def expected_forced_poisson_mean(lam: float) -> float:
    """E[max(N, 1)] for N ~ Poisson(lam): lam + P(N = 0)."""
    return lam + math.exp(-lam)
