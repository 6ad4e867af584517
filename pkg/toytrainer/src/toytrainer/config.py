"""Model and training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass(frozen=True)
class ToyModelConfig:
    """Scaled-down in-context detector.

    The audio front end produces 100 Hz log-mel frames; one temporal
    mean-pool halves that to the 50 Hz output frame rate, which must match
    the label mask rate.
    """

    sample_rate: int = 16000
    n_mels: int = 256
    hop: int = 160
    win: int = 512
    n_fft: int = 1024

    cnn_channels: int = 32
    hidden: int = 192
    depth: int = 4
    heads: int = 4
    temporal_pool: int = 2
    frame_rate: float = 50.0

    dur_s: float = 30.0
    dur_q: float = 10.0

    # optimization
    lr_max: float = 3e-4
    warmup_steps: int = 100
    total_steps: int = 1000
    batch_size: int = 4
    weight_decay: float = 0.01

    # curriculum: linear decay of the minimum event SNR
    snr_start_db: float = 0.0
    snr_floor_db: float = -20.0
    curriculum_steps: int = 500

    seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ToyModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def curriculum_floor(self, step: int) -> float:
        """Minimum event SNR allowed at a training step (non-increasing)."""
        if self.curriculum_steps <= 0:
            return self.snr_floor_db
        frac = min(1.0, max(0.0, step / self.curriculum_steps))
        return self.snr_start_db + frac * (self.snr_floor_db - self.snr_start_db)
