"""Frame-level acoustic descriptors: a native 14-descriptor extractor and CSV import/export.

Native descriptors are computed on 25 ms Hann-windowed frames hopped by 10 ms
at 16 kHz. Formant and harmonic-difference descriptors are never computed
here; they arrive through :func:`import_lld_csv` from an external extractor.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import PIPELINE_RATE, AudioBuffer, resample

NATIVE_DESCRIPTORS = (
    "loudness",
    "alpha_ratio",
    "hammarberg",
    "slope_0_500",
    "slope_500_1500",
    "spectral_flux",
    "mfcc1",
    "mfcc2",
    "mfcc3",
    "mfcc4",
    "f0",
    "jitter",
    "shimmer",
    "hnr",
)
IMPORTED_DESCRIPTORS = (
    "h1_h2",
    "h1_a3",
    "f1",
    "f1_bandwidth",
    "f1_amplitude",
    "f2",
    "f2_amplitude",
    "f3",
    "f3_amplitude",
)
GEMAPS_DESCRIPTORS = NATIVE_DESCRIPTORS + IMPORTED_DESCRIPTORS

# openSMILE GeMAPS LLD column names accepted on import
OPENSMILE_ALIASES = {
    "Loudness_sma3": "loudness",
    "alphaRatio_sma3": "alpha_ratio",
    "hammarbergIndex_sma3": "hammarberg",
    "slope0-500_sma3": "slope_0_500",
    "slope500-1500_sma3": "slope_500_1500",
    "spectralFlux_sma3": "spectral_flux",
    "mfcc1_sma3": "mfcc1",
    "mfcc2_sma3": "mfcc2",
    "mfcc3_sma3": "mfcc3",
    "mfcc4_sma3": "mfcc4",
    "F0semitoneFrom27.5Hz_sma3nz": "f0",
    "jitterLocal_sma3nz": "jitter",
    "shimmerLocaldB_sma3nz": "shimmer",
    "HNRdBACF_sma3nz": "hnr",
    "logRelF0-H1-H2_sma3nz": "h1_h2",
    "logRelF0-H1-A3_sma3nz": "h1_a3",
    "F1frequency_sma3nz": "f1",
    "F1bandwidth_sma3nz": "f1_bandwidth",
    "F1amplitudeLogRelF0_sma3nz": "f1_amplitude",
    "F2frequency_sma3nz": "f2",
    "F2amplitudeLogRelF0_sma3nz": "f2_amplitude",
    "F3frequency_sma3nz": "f3",
    "F3amplitudeLogRelF0_sma3nz": "f3_amplitude",
}

WINDOW = 400  # 25 ms at 16 kHz
HOP = 160  # 10 ms
N_FFT = 512
N_MELS = 26
MEL_FMIN = 20.0
MEL_FMAX = 8000.0
N_MFCC = 4
F0_MIN = 60.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.45
BAND_CAP_DB = 120.0
POWER_FLOOR = 1e-12
LOG_MEL_FLOOR = 1e-10
LOUDNESS_REF = 2e-5


class LldFormatError(ValueError):
    """Raised for malformed or incomplete descriptor CSV files."""


@dataclass
class LldMatrix:
    values: np.ndarray
    descriptor_names: tuple
    frame_hop: float = HOP / PIPELINE_RATE
    frame_window: float = WINDOW / PIPELINE_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.descriptor_names = tuple(self.descriptor_names)
        if self.values.ndim != 2:
            raise ValueError("LldMatrix values must be 2-D (frames x descriptors)")
        if len(self.descriptor_names) < 1:
            raise ValueError("LldMatrix needs at least one descriptor")
        if self.values.shape[1] != len(self.descriptor_names):
            raise ValueError(
                f"{self.values.shape[1]} columns but {len(self.descriptor_names)} names"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.descriptor_names.index(name)]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels=N_MELS, n_fft=N_FFT, sample_rate=PIPELINE_RATE, fmin=MEL_FMIN, fmax=MEL_FMAX
) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1) with edges equally spaced on the HTK mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc_from_power(power: np.ndarray, fbank: np.ndarray | None = None) -> np.ndarray:
    """Coefficients 1..4 of the orthonormal DCT-II of log mel energies."""
    fbank = mel_filterbank() if fbank is None else fbank
    log_mel = np.log(np.maximum(power @ fbank.T, LOG_MEL_FLOOR))
    return dct(log_mel, type=2, norm="ortho", axis=-1)[..., 1 : N_MFCC + 1]


def _capped_db(num, den, factor):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    both = (num > 0) & (den > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[both] = factor * np.log10(num[both] / den[both])
    out[(num > 0) & (den <= 0)] = BAND_CAP_DB
    out[(num <= 0) & (den > 0)] = -BAND_CAP_DB
    return np.clip(out, -BAND_CAP_DB, BAND_CAP_DB)


def _band_slope(freqs, db, lo, hi):
    sel = (freqs >= lo) & (freqs <= hi)
    f = freqs[sel]
    y = db[..., sel]
    fc = f - f.mean()
    return (y - y.mean(axis=-1, keepdims=True)) @ fc / (fc @ fc)


def spectral_band_measures(mag, sample_rate=PIPELINE_RATE):
    """Alpha ratio, Hammarberg index and two spectral slopes of a magnitude spectrum.

    ``mag`` holds rfft magnitudes (DC bin first), either one spectrum or a
    frames x bins matrix. Returns ``(alpha_ratio, hammarberg, slope_0_500,
    slope_500_1500)``; ratios are in dB, capped to +-120 dB, and 0 when both
    bands are empty. Slopes are least-squares fits of dB power against Hz.
    """
    mag = np.asarray(mag, dtype=np.float64)
    n_fft = 2 * (mag.shape[-1] - 1)
    freqs = np.arange(mag.shape[-1]) * sample_rate / n_fft
    power = mag * mag

    lo = (freqs >= 50) & (freqs < 1000)
    hi = (freqs >= 1000) & (freqs <= 5000)
    alpha_ratio = _capped_db(power[..., lo].sum(axis=-1), power[..., hi].sum(axis=-1), 10.0)

    peak_lo = mag[..., freqs < 2000].max(axis=-1)
    peak_hi = mag[..., (freqs >= 2000) & (freqs <= 5000)].max(axis=-1)
    hammarberg = _capped_db(peak_lo, peak_hi, 20.0)

    db = 10.0 * np.log10(np.maximum(power, POWER_FLOOR))
    slope_lo = _band_slope(freqs, db, 0.0, 500.0)
    slope_hi = _band_slope(freqs, db, 500.0, 1500.0)
    return alpha_ratio, hammarberg, slope_lo, slope_hi


def _nccf(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation of each frame with its lagged self, lags min..max."""
    n = frames.shape[1]
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, min_lag : max_lag + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(min_lag, max_lag + 1)
    head = sq[:, n - lags]  # energy of x[0 : n - lag]
    tail = sq[:, -1:] - sq[:, lags]  # energy of x[lag : n]
    denom = np.sqrt(head * tail)
    out = np.zeros_like(acf)
    ok = denom > 1e-12 * n
    out[ok] = acf[ok] / denom[ok]
    return out


def pitch_track(frames: np.ndarray, sample_rate=PIPELINE_RATE):
    """Autocorrelation pitch per frame: returns (f0 Hz, peak nccf, voiced mask)."""
    min_lag = int(math.floor(sample_rate / F0_MAX))
    max_lag = min(int(math.ceil(sample_rate / F0_MIN)), frames.shape[1] - 2)
    r = _nccf(frames, min_lag, max_lag)
    r_max = r.max(axis=1)

    interior = np.zeros_like(r, dtype=bool)
    interior[:, 1:-1] = (r[:, 1:-1] >= r[:, :-2]) & (r[:, 1:-1] >= r[:, 2:])
    # earliest strong local peak suppresses sub-harmonic (octave-low) picks
    cand = interior & (r >= 0.9 * r_max[:, None])
    has = cand.any(axis=1)
    idx = np.where(has, cand.argmax(axis=1), r.argmax(axis=1))

    rows = np.arange(r.shape[0])
    i0 = np.clip(idx, 1, r.shape[1] - 2)
    a, b, c = r[rows, i0 - 1], r[rows, i0], r[rows, i0 + 1]
    curv = a - 2 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(has & (curv < 0), 0.5 * (a - c) / curv, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    peak = np.where(has & (curv < 0), b - 0.25 * (a - c) * shift, r[rows, idx])
    lag = min_lag + np.where(has, i0, idx) + shift

    voiced = r_max > VOICING_THRESHOLD
    f0 = np.where(voiced, sample_rate / lag, 0.0)
    return f0, np.where(voiced, peak, 0.0), voiced


def _pair_perturbation(values, voiced):
    """Relative change between consecutive voiced frames; 0 elsewhere."""
    out = np.zeros_like(values)
    both = voiced[1:] & voiced[:-1]
    prev, cur = values[:-1], values[1:]
    mean = 0.5 * (prev + cur)
    ok = both & (mean > 0)
    out[1:][ok] = np.abs(cur[ok] - prev[ok]) / mean[ok]
    return out


def lld_frame_count(n_samples: int) -> int:
    return (n_samples - WINDOW) // HOP + 1


def extract_lld(buf: AudioBuffer) -> LldMatrix:
    """Compute the 14 native descriptors for a 16 kHz buffer, one row per 10 ms."""
    if buf.sample_rate != PIPELINE_RATE:
        raise ValueError(
            f"extract_lld expects {PIPELINE_RATE} Hz input, got {buf.sample_rate}; resample first"
        )
    if len(buf) < WINDOW:
        raise ValueError(f"buffer of {len(buf)} samples is shorter than one {WINDOW}-sample window")

    frames = sliding_window_view(buf.samples, WINDOW)[::HOP]
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    loudness = 20.0 * np.log10(1.0 + rms / LOUDNESS_REF)

    mag = np.abs(np.fft.rfft(frames * np.hanning(WINDOW), N_FFT, axis=1))
    alpha_ratio, hammarberg, slope_lo, slope_hi = spectral_band_measures(mag)
    flux = np.zeros(len(frames))
    flux[1:] = np.sum(np.diff(mag, axis=0) ** 2, axis=1)
    mfcc = mfcc_from_power(mag * mag)

    f0, peak, voiced = pitch_track(frames)
    with np.errstate(divide="ignore"):
        periods = np.where(voiced, 1.0 / np.where(voiced, f0, 1.0), 0.0)
    jitter = _pair_perturbation(periods, voiced)
    shimmer = _pair_perturbation(np.abs(frames).max(axis=1), voiced)
    r = np.clip(peak, 1e-6, 1.0 - 1e-6)
    hnr = np.where(voiced, 10.0 * np.log10(r / (1.0 - r)), 0.0)

    values = np.column_stack(
        [loudness, alpha_ratio, hammarberg, slope_lo, slope_hi, flux, mfcc, f0, jitter, shimmer, hnr]
    )
    return LldMatrix(values, NATIVE_DESCRIPTORS)


def import_lld_csv(path, require_full_gemaps: bool = False) -> LldMatrix:
    """Read a descriptor CSV (header of names, one frame per row).

    openSMILE GeMAPS column names are mapped to the canonical names. With
    ``require_full_gemaps`` the file must carry exactly the 23 GeMAPS
    descriptors; columns are then reordered to the canonical order.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise LldFormatError(f"{path}: missing header row")
    header = [OPENSMILE_ALIASES.get(h.strip(), h.strip()) for h in rows[0]]
    if any(_is_number(h) for h in header):
        raise LldFormatError(f"{path}: missing header row (first row is numeric)")

    body = [r for r in rows[1:] if r]
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise LldFormatError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise LldFormatError(
                    f"{path}: non-numeric cell {cell!r} at row {i}, column {j + 1} ({header[j]})"
                ) from None

    if require_full_gemaps:
        missing = [n for n in GEMAPS_DESCRIPTORS if n not in header]
        if missing:
            raise LldFormatError(f"{path}: missing GeMAPS descriptor(s): {', '.join(missing)}")
        if len(header) != len(GEMAPS_DESCRIPTORS):
            extra = [h for h in header if h not in GEMAPS_DESCRIPTORS]
            raise LldFormatError(
                f"{path}: expected {len(GEMAPS_DESCRIPTORS)} descriptors, found {len(header)} "
                f"(unexpected: {', '.join(extra) or 'duplicates'})"
            )
        order = [header.index(n) for n in GEMAPS_DESCRIPTORS]
        values, header = values[:, order], list(GEMAPS_DESCRIPTORS)
    return LldMatrix(values, header)


def write_lld_csv(lld: LldMatrix, path) -> None:
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(lld.descriptor_names)
        writer.writerows([[repr(float(v)) for v in row] for row in lld.values])


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


class LldExtractor(TransformerMixin, BaseEstimator):
    """Turn a sequence of :class:`AudioBuffer` into a list of :class:`LldMatrix`.

    Buffers at other rates are resampled to 16 kHz first.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [extract_lld(resample(buf, PIPELINE_RATE)) for buf in X]
