"""WAV decoding and resampling to the 16 kHz model rate."""

from __future__ import annotations

import math
import wave
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

TARGET_RATE = 16000


class AudioError(ValueError):
    """Undecodable or unsupported audio file."""


def load_wav_16k(path) -> np.ndarray:
    """Decode a PCM WAV file, mix to mono, resample to 16 kHz float64 in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise AudioError(f"{path}: {exc}") from None
    if width == 2:
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 1:
        samples = (np.frombuffer(frames, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 4:
        samples = np.frombuffer(frames, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise AudioError(f"{path}: unsupported sample width {width}")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if rate != TARGET_RATE:
        g = math.gcd(rate, TARGET_RATE)
        samples = resample_poly(samples, TARGET_RATE // g, rate // g)
    return samples
