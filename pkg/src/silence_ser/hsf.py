"""Per-utterance functionals: mean and population std of each descriptor, plus silence."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import PIPELINE_RATE, resample
from .lld import LldMatrix, extract_lld
from .silence import FrameConfig, SilenceConfig, SilenceResult, silence_fraction

SILENCE_TAG = "silence"


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(self.layout))
        if values.ndim != 1 or len(values) != len(self.layout):
            raise LayoutError(f"{len(values)} values for {len(self.layout)} layout tags")

    def __len__(self):
        return len(self.values)

    @property
    def has_silence(self) -> bool:
        return bool(self.layout) and self.layout[-1] == SILENCE_TAG


def mean_std_layout(names) -> tuple:
    return tuple(f"mean:{n}" for n in names) + tuple(f"std:{n}" for n in names)


def aggregate_mean_std(lld: LldMatrix) -> FeatureVector:
    if lld.n_frames == 0:
        raise ValueError("cannot aggregate an LLD matrix with no frames")
    mean = lld.values.mean(axis=0)
    std = lld.values.std(axis=0)  # ddof=0
    return FeatureVector(np.concatenate([mean, std]), mean_std_layout(lld.descriptor_names))


def append_silence(fv: FeatureVector, s) -> FeatureVector:
    """Return a copy of ``fv`` with the silence fraction as the last element."""
    if fv.has_silence:
        raise LayoutError("feature vector already carries a silence slot")
    fraction = s.fraction if isinstance(s, SilenceResult) else float(s)
    return FeatureVector(np.append(fv.values, fraction), fv.layout + (SILENCE_TAG,))


def assemble_matrix(utterances, utt_ids=None):
    """Stack feature vectors into a row-per-utterance matrix.

    Returns ``(matrix, layout)``; every vector must share the first one's layout.
    """
    utterances = list(utterances)
    if not utterances:
        raise ValueError("no feature vectors to assemble")
    utt_ids = list(utt_ids) if utt_ids is not None else [str(i) for i in range(len(utterances))]
    layout = utterances[0].layout
    for uid, fv in zip(utt_ids, utterances):
        if fv.layout != layout:
            raise LayoutError(
                f"utterance {uid!r} has layout of length {len(fv.layout)}, "
                f"expected {len(layout)} matching {utt_ids[0]!r}"
            )
    return np.vstack([fv.values for fv in utterances]), layout


def write_feature_csv(path, utt_ids, matrix, layout) -> None:
    """Feature matrix CSV (utt_id + layout tags) with a JSON layout manifest beside it."""
    path = os.fspath(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["utt_id", *layout])
        for uid, row in zip(utt_ids, matrix):
            writer.writerow([uid, *(repr(float(v)) for v in row)])
    with open(os.path.splitext(path)[0] + ".layout.json", "w", encoding="utf-8") as fh:
        json.dump({"layout": list(layout), "n_rows": len(utt_ids)}, fh, indent=2)
        fh.write("\n")


def read_feature_csv(path):
    """Inverse of :func:`write_feature_csv`: returns ``(utt_ids, matrix, layout)``."""
    with open(os.fspath(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["utt_id"]:
        raise LayoutError(f"{path}: expected header starting with utt_id")
    layout = tuple(rows[0][1:])
    body = [r for r in rows[1:] if r]
    ids = [r[0] for r in body]
    matrix = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    return ids, matrix.reshape(len(ids), len(layout)), layout


class MeanStdFunctionals(TransformerMixin, BaseEstimator):
    """Collapse each :class:`LldMatrix` in ``X`` to its mean/std vector."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        vectors = [aggregate_mean_std(lld) for lld in X]
        self.layout_ = vectors[0].layout if vectors else ()
        return assemble_matrix(vectors)[0]


class UtteranceFeaturizer(TransformerMixin, BaseEstimator):
    """Audio buffers to per-utterance mean+std[+silence] rows.

    Parameters
    ----------
    include_silence : bool, default=True
        Append the silence fraction as the final column.
    alpha : float, default=0.3
        Silence threshold factor.
    frame_length, hop_length : int
        Silence framing in samples at 16 kHz.
    """

    def __init__(self, include_silence=True, alpha=0.3, frame_length=2048, hop_length=512):
        self.include_silence = include_silence
        self.alpha = alpha
        self.frame_length = frame_length
        self.hop_length = hop_length

    def fit(self, X, y=None):
        return self

    def featurize(self, buf) -> FeatureVector:
        buf = resample(buf, PIPELINE_RATE)
        fv = aggregate_mean_std(extract_lld(buf))
        if self.include_silence:
            cfg = SilenceConfig(self.alpha, FrameConfig(self.frame_length, self.hop_length))
            fv = append_silence(fv, silence_fraction(buf, cfg))
        return fv

    def transform(self, X):
        matrix, self.layout_ = assemble_matrix([self.featurize(buf) for buf in X])
        return matrix

    def get_feature_names_out(self, input_features=None):
        return np.array(self.layout_, dtype=object)
