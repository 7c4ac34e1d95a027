"""WAV decoding to normalized mono buffers, and linear-interpolation resampling."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

PIPELINE_RATE = 16000


class AudioFormatError(ValueError):
    """Raised when a WAV file uses an encoding the loader does not accept."""


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def load_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file, averaging stereo channels to mono.

    PCM16 samples are scaled by 1/32768 so full scale maps onto [-1, 1).
    """
    path = os.fspath(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise AudioFormatError(f"{path}: cannot decode WAV ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype} "
            "(expected PCM 16-bit or IEEE float32)"
        )

    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise AudioFormatError(f"{path}: {samples.shape[1]} channels, expected 1 or 2")
        samples = samples.mean(axis=1)
    if samples.shape[0] == 0:
        raise AudioFormatError(f"{path}: zero-length data chunk")
    return AudioBuffer(samples, rate)


def write_wav(path, buf: AudioBuffer, encoding: str = "pcm16") -> None:
    """Write ``buf`` as mono PCM16 (clipped) or float32."""
    if encoding == "pcm16":
        scaled = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        scaled = buf.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    wavfile.write(os.fspath(path), buf.sample_rate, scaled)


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample by linear interpolation; returns ``buf`` itself when rates match."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    n_in = len(buf)
    n_out = max(1, int(round(n_in * target_rate / buf.sample_rate)))
    t_out = np.arange(n_out) * (buf.sample_rate / target_rate)
    samples = np.interp(t_out, np.arange(n_in), buf.samples)
    return AudioBuffer(samples, target_rate)
