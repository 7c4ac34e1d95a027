"""Per-utterance silence fraction from frame RMS energy and an adaptive threshold.

A frame is silent when its RMS energy is strictly below ``alpha`` times the
mean frame RMS of the utterance; the feature is the silent share of frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import AudioBuffer


@dataclass(frozen=True)
class FrameConfig:
    frame_length: int = 2048
    hop_length: int = 512

    def __post_init__(self):
        if self.frame_length < 1 or self.hop_length < 1:
            raise ValueError("frame_length and hop_length must be >= 1")


@dataclass(frozen=True)
class SilenceConfig:
    alpha: float = 0.3
    frames: FrameConfig = field(default_factory=FrameConfig)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class SilenceResult:
    fraction: float
    n_silence: int
    n_total: int
    threshold: float
    mean_rms: float


def frame_count(signal_length: int, cfg: FrameConfig) -> int:
    if signal_length < 1:
        raise ValueError("signal_length must be >= 1")
    if signal_length < cfg.frame_length:
        return 1
    return (signal_length - cfg.frame_length) // cfg.hop_length + 1


def frame_starts(signal_length: int, cfg: FrameConfig) -> np.ndarray:
    """Start offsets of non-centered frames; partial tail frames are dropped.

    A signal shorter than one frame yields a single pseudo-frame at offset 0
    spanning the whole signal.
    """
    return np.arange(frame_count(signal_length, cfg)) * cfg.hop_length


def frame_rms(frame) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise ValueError("frame_rms of an empty frame is undefined")
    return float(np.sqrt(np.mean(frame * frame)))


def frame_rms_series(samples, cfg: FrameConfig) -> np.ndarray:
    """RMS energy of every frame, vectorized over the framing of ``frame_starts``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    if x.size < cfg.frame_length:
        return np.array([frame_rms(x)])
    frames = sliding_window_view(x, cfg.frame_length)[:: cfg.hop_length]
    return np.sqrt(np.einsum("ij,ij->i", frames, frames) / cfg.frame_length)


def silence_threshold(mean_rms: float, alpha: float) -> float:
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if mean_rms < 0:
        raise ValueError("mean_rms must be non-negative")
    return alpha * mean_rms


def silence_from_rms(rms: np.ndarray, alpha: float) -> SilenceResult:
    """Silence fraction for a precomputed frame-RMS series."""
    rms = np.asarray(rms, dtype=np.float64)
    n_total = int(rms.size)
    mean_rms = float(rms.mean())
    th = silence_threshold(mean_rms, alpha)
    if mean_rms == 0.0:
        # all-zero signal: report fully silent rather than the literal 0 of strict <
        return SilenceResult(1.0, n_total, n_total, th, mean_rms)
    n_silence = int(np.count_nonzero(rms < th))
    return SilenceResult(n_silence / n_total, n_silence, n_total, th, mean_rms)


def silence_fraction(buf, cfg: SilenceConfig | None = None) -> SilenceResult:
    cfg = cfg or SilenceConfig()
    samples = buf.samples if isinstance(buf, AudioBuffer) else buf
    return silence_from_rms(frame_rms_series(samples, cfg.frames), cfg.alpha)


class SilenceFeaturizer(TransformerMixin, BaseEstimator):
    """Map a sequence of utterances to a single silence-fraction column.

    Parameters
    ----------
    alpha : float, default=0.3
        Threshold factor applied to the utterance mean frame RMS.
    frame_length, hop_length : int
        Framing in samples.
    """

    def __init__(self, alpha=0.3, frame_length=2048, hop_length=512):
        self.alpha = alpha
        self.frame_length = frame_length
        self.hop_length = hop_length

    def fit(self, X, y=None):
        self._config()
        return self

    def _config(self):
        return SilenceConfig(self.alpha, FrameConfig(self.frame_length, self.hop_length))

    def transform(self, X):
        cfg = self._config()
        return np.array([[silence_fraction(buf, cfg).fraction] for buf in X])

    def get_feature_names_out(self, input_features=None):
        return np.array(["silence"], dtype=object)
