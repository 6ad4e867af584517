"""WAV input/output.

Supports PCM16 and float32 WAV; stereo files are mixed down to mono at load
time. Writes are atomic (temp file + rename) so parallel workers never leave
half-written output behind.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .core import AudioBuffer

_INT_SCALES = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
    np.dtype(np.uint8): 128.0,
}


def read_wav(path: str | Path) -> AudioBuffer:
    """Load a WAV file as a mono float64 AudioBuffer in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.astype(np.float64).mean(axis=1)
    dtype = data.dtype
    if dtype in _INT_SCALES:
        samples = data.astype(np.float64) / _INT_SCALES[dtype]
    elif dtype == np.uint8:  # offset binary
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    return AudioBuffer(samples=samples, sample_rate=int(sr))


def write_wav(path: str | Path, audio: AudioBuffer, fmt: str = "float32") -> None:
    """Write audio as WAV; fmt is 'float32' or 'pcm16'."""
    if fmt == "float32":
        data = audio.samples.astype(np.float32)
    elif fmt == "pcm16":
        clipped = np.clip(audio.samples, -1.0, 1.0)
        data = np.round(clipped * 32767.0).astype(np.int16)
    else:
        raise ValueError(f"unsupported wav format {fmt!r}")
    atomic_write(path, lambda tmp: wavfile.write(tmp, audio.sample_rate, data))


def atomic_write(path: str | Path, writer) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write(path, lambda tmp: Path(tmp).write_text(text, encoding="utf-8"))
