import numpy as np
import pytest

from bioscene.core import AudioBuffer
from bioscene.pseudovox import build_library
from bioscene.scenegen import BackgroundLibrary

SR = 16000

CALL_FAMILIES = (400.0, 700.0, 1000.0, 1500.0, 2200.0, 3000.0, 4200.0, 5600.0)


def synth_call(freq: float, dur: float, rng: np.random.Generator,
               sr: int = SR) -> AudioBuffer:
    """A tonal chirp with a hann envelope, vaguely call-like."""
    t = np.arange(int(dur * sr)) / sr
    sweep = freq * (1.0 + 0.05 * t / max(dur, 1e-6))
    x = 0.5 * np.sin(2 * np.pi * sweep * t)
    x *= np.hanning(len(t))
    x += 0.003 * rng.standard_normal(len(t))
    return AudioBuffer(samples=x, sample_rate=sr)


def colored_noise(n: int, rng: np.random.Generator, tilt: float = 1.0,
                  amp: float = 0.05) -> np.ndarray:
    """Noise with a 1/f^tilt spectral slope."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.maximum(np.fft.rfftfreq(n, 1.0 / SR), 1.0)
    spec /= freqs ** (tilt / 2.0)
    x = np.fft.irfft(spec, n)
    return amp * x / np.std(x)


@pytest.fixture(scope="session")
def toy_library():
    """280 short tonal clips in 8 frequency families; all five cluster levels."""
    rng = np.random.default_rng(1234)
    clips = []
    for i in range(280):
        freq = CALL_FAMILIES[i % 8] * (1.0 + 0.02 * rng.standard_normal())
        dur = 0.15 + 0.1 * rng.random()
        clips.append(synth_call(freq, dur, rng))
    return build_library(clips, divisors=(128, 64, 32, 16, 8), seed=0)


def bursty_signal(burst_spans, dur=60.0, freq=440.0, snr_db=10.0, seed=3,
                  band=(300.0, 600.0), sr=SR, floor_db=-25.0):
    """Band-limited noise (plus a low broadband floor) with tone bursts at a
    stated in-band SNR."""
    rng = np.random.default_rng(seed)
    n = int(dur * sr)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    band_noise = np.fft.irfft(spec, n)
    band_noise /= np.std(band_noise)  # unit-RMS in-band noise
    x = band_noise + 10 ** (floor_db / 20.0) * rng.standard_normal(n)
    amp = np.sqrt(2.0) * 10 ** (snr_db / 20.0)  # tone RMS over in-band RMS
    for a, b in burst_spans:
        seg = amp * np.sin(2 * np.pi * freq * np.arange(int((b - a) * sr)) / sr)
        x[int(a * sr) : int(a * sr) + len(seg)] += seg
    return AudioBuffer(0.05 * x, sr)


@pytest.fixture(scope="session")
def toy_backgrounds():
    rng = np.random.default_rng(99)
    tracks = []
    for i in range(4):
        n = int((2.0 + i) * SR)
        tracks.append(AudioBuffer(colored_noise(n, rng, tilt=0.5 + 0.3 * i), SR))
    return BackgroundLibrary(names=[f"bg{i}.wav" for i in range(4)], tracks=tracks)
