"""Signal processing: resampling, reverb, RMS/SNR arithmetic, log-mel
spectrograms, and the acoustic feature measurements used by the zero-shot
detection path.

All functions are pure; parallel mapping over clips is the intended usage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve, resample_poly, welch

from .core import AudioBuffer, EventInterval, EventList

# log-mel front end (16 kHz audio -> 100 Hz frames)
N_MELS = 256
HOP = 160
WIN = 512
NFFT = 2048
FMIN = 0.0
FMAX = 8000.0
LOG_EPS = 1e-10
MEL_SAMPLE_RATE = 16000

# resampling window: kaiser beta 8.6 gives ~90 dB alias rejection
_RESAMPLE_WINDOW = ("kaiser", 8.6)


@dataclass(frozen=True)
class MelSpec:
    """Log-power mel spectrogram, frames along axis 0."""

    frames: np.ndarray  # [n_frames, n_mels]
    n_mels: int
    hop: int
    sample_rate: int

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class ZeroShotFeatures:
    """Five-number acoustic summary of a target sound."""

    peak_freq: float
    high_freq: float
    low_freq: float
    duration: float
    snr: float

    def __post_init__(self):
        if not (self.low_freq <= self.peak_freq <= self.high_freq):
            raise ValueError(
                f"expected low <= peak <= high, got "
                f"{self.low_freq}/{self.peak_freq}/{self.high_freq}"
            )
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def _as_fraction(ratio: float) -> Fraction:
    frac = Fraction(ratio).limit_denominator(1000)
    if frac <= 0:
        raise ValueError(f"resampling ratio must be positive, got {ratio}")
    return frac


def resample(audio: AudioBuffer, rho: float) -> AudioBuffer:
    """Resample by factor rho and reinterpret at the original rate.

    Output duration = input duration * rho (within one sample). rho > 1
    lengthens the clip and lowers pitch; rho < 1 shortens and raises it.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if int(len(audio) * rho) < 1:
        raise ValueError(f"rho={rho} leaves no samples (input length {len(audio)})")
    frac = _as_fraction(rho)
    if frac == 1:
        return audio
    out = resample_poly(audio.samples, frac.numerator, frac.denominator,
                        window=_RESAMPLE_WINDOW)
    return AudioBuffer(samples=out, sample_rate=audio.sample_rate)


def to_sample_rate(audio: AudioBuffer, sample_rate: int) -> AudioBuffer:
    """Convert to a new sample rate, preserving duration and pitch."""
    if audio.sample_rate == sample_rate:
        return audio
    frac = _as_fraction(sample_rate / audio.sample_rate)
    out = resample_poly(audio.samples, frac.numerator, frac.denominator,
                        window=_RESAMPLE_WINDOW)
    return AudioBuffer(samples=out, sample_rate=sample_rate)


def convolve_rir(audio: AudioBuffer, ir: AudioBuffer) -> AudioBuffer:
    """Convolve with a room impulse response.

    The full convolution is truncated to the input length and renormalized so
    the output RMS equals the pre-convolution RMS.
    """
    if len(ir) == 0:
        raise ValueError("impulse response is empty")
    if ir.sample_rate != audio.sample_rate:
        raise ValueError(
            f"sample rate mismatch: audio {audio.sample_rate}, ir {ir.sample_rate}"
        )
    wet = fftconvolve(audio.samples, ir.samples, mode="full")[: len(audio)]
    in_rms = audio.rms()
    wet_rms = float(np.sqrt(np.mean(np.square(wet)))) if len(wet) else 0.0
    if wet_rms > 0 and in_rms > 0:
        wet = wet * (in_rms / wet_rms)
    return AudioBuffer(samples=wet, sample_rate=audio.sample_rate)


def rms_db(a: AudioBuffer, b: AudioBuffer) -> float:
    """20*log10(rms(a) / rms(b))."""
    rms_b = b.rms()
    if rms_b == 0.0:
        raise ValueError("reference signal is silent")
    rms_a = a.rms()
    if rms_a == 0.0:
        raise ValueError("signal is silent")
    return 20.0 * math.log10(rms_a / rms_b)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, nfft: int = NFFT,
                   sample_rate: int = MEL_SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular area-normalized mel filterbank, [n_mels, nfft//2 + 1]."""
    mel_edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)
    fft_freqs = np.arange(nfft // 2 + 1) * (sample_rate / nfft)
    fb = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lo, center, hi = hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
        fb[i] *= 2.0 / (hi - lo)  # unit area
    return fb


def mel_center_freqs(n_mels: int = N_MELS, fmin: float = FMIN,
                     fmax: float = FMAX) -> np.ndarray:
    mel_edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mel_edges[1:-1])


def _frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Center-padded framing: frame i is centered at (i + 0.5) * hop."""
    count = len(x) // hop
    pad = win // 2 - hop // 2
    padded = np.concatenate([np.zeros(pad), x, np.zeros(win)])
    idx = np.arange(count)[:, None] * hop + np.arange(win)[None, :]
    return padded[idx]


def mel_power(audio: AudioBuffer) -> np.ndarray:
    """Mel-filterbank power per frame, [floor(n/hop), n_mels], no log."""
    if audio.sample_rate != MEL_SAMPLE_RATE:
        raise ValueError(
            f"mel front end expects {MEL_SAMPLE_RATE} Hz audio, got {audio.sample_rate}"
        )
    if len(audio) < WIN:
        raise ValueError(
            f"audio shorter than one analysis window ({len(audio)} < {WIN} samples)"
        )
    frames = _frame_signal(audio.samples, WIN, HOP)
    window = np.hanning(WIN)
    spec = np.fft.rfft(frames * window, n=NFFT, axis=1)
    power = np.square(np.abs(spec))
    return power @ _mel_fb_cached().T


_MEL_FB: np.ndarray | None = None


def _mel_fb_cached() -> np.ndarray:
    global _MEL_FB
    if _MEL_FB is None:
        _MEL_FB = mel_filterbank()
    return _MEL_FB


def log_mel(audio: AudioBuffer) -> MelSpec:
    """Log mel-spectrogram: 256 mels, hop 160, 0-8 kHz, log(power + 1e-10)."""
    power = mel_power(audio)
    return MelSpec(frames=np.log(power + LOG_EPS), n_mels=N_MELS, hop=HOP,
                   sample_rate=audio.sample_rate)


def _segment(audio: AudioBuffer, interval: EventInterval) -> AudioBuffer:
    sr = audio.sample_rate
    a = int(math.floor(interval.onset * sr))
    b = int(math.floor(interval.offset * sr))
    if a < 0 or b > len(audio):
        raise ValueError(f"interval [{interval.onset}, {interval.offset}) outside buffer")
    return AudioBuffer(samples=audio.samples[a:b], sample_rate=sr)


def mean_power_spectrum(audio: AudioBuffer, nperseg: int = 1024):
    """Welch mean power spectrum; returns (freqs, psd)."""
    n = len(audio)
    if n == 0:
        raise ValueError("empty segment")
    return welch(audio.samples, fs=audio.sample_rate, nperseg=min(nperseg, n))


def measure_event_features(audio: AudioBuffer, event: EventInterval,
                           background: EventInterval,
                           rel_db: float = 20.0) -> ZeroShotFeatures:
    """Measure the five-number feature summary of one event.

    peak_freq is the argmax of the event's mean power spectrum; high/low are
    the outermost frequencies still within `rel_db` dB of the peak; snr is
    the RMS ratio of the event segment to the background segment.
    """
    if event.offset > background.onset and background.offset > event.onset:
        raise ValueError("event and background intervals overlap")
    seg = _segment(audio, event)
    bg = _segment(audio, background)
    if seg.rms() == 0.0:
        raise ValueError("event segment is silent")
    freqs, psd = mean_power_spectrum(seg)
    peak_idx = int(np.argmax(psd))
    thresh = psd[peak_idx] * 10.0 ** (-rel_db / 10.0)
    above = np.flatnonzero(psd >= thresh)
    return ZeroShotFeatures(
        peak_freq=float(freqs[peak_idx]),
        high_freq=float(freqs[above[-1]]),
        low_freq=float(freqs[above[0]]),
        duration=event.duration,
        snr=rms_db(seg, bg),
    )


def median_features(per_event: list[ZeroShotFeatures]) -> ZeroShotFeatures:
    """Element-wise median of each feature field."""
    if not per_event:
        raise ValueError("empty feature list")
    med = lambda vals: float(np.median(vals))
    peak = med([f.peak_freq for f in per_event])
    high = med([f.high_freq for f in per_event])
    low = med([f.low_freq for f in per_event])
    # medians of correlated fields can invert the band ordering; clamp
    low, high = min(low, high), max(low, high)
    peak = min(max(peak, low), high)
    return ZeroShotFeatures(
        peak_freq=peak,
        high_freq=high,
        low_freq=low,
        duration=med([f.duration for f in per_event]),
        snr=med([f.snr for f in per_event]),
    )


def time_dilate(audio: AudioBuffer, events: EventList,
                factor: float) -> tuple[AudioBuffer, EventList]:
    """Slow down (factor < 1) or speed up (factor > 1) audio and labels.

    factor 1/2 means playback at half speed: duration and all event times
    scale by 1/factor.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    if factor == 1.0:
        return audio, events
    stretched = resample(audio, 1.0 / factor)
    scale = 1.0 / factor
    scaled = EventList(
        events=tuple(
            EventInterval(onset=ev.onset * scale, offset=ev.offset * scale)
            for ev in events
        ),
        label=events.label,
    )
    return stretched, scaled


def make_synthetic_ir(rt60: float, sample_rate: int,
                      rng: np.random.Generator) -> AudioBuffer:
    """Exponentially decaying noise burst: a stand-in room impulse response."""
    if rt60 <= 0:
        raise ValueError("rt60 must be positive")
    n = max(int(rt60 * sample_rate), 8)
    t = np.arange(n) / sample_rate
    envelope = np.power(10.0, -3.0 * t / rt60)  # -60 dB at t = rt60
    ir = rng.standard_normal(n) * envelope
    ir[0] = 1.0  # direct path
    return AudioBuffer(samples=ir, sample_rate=sample_rate)
