"""Feature-set comparison and silence-threshold sweep over a corpus.

Every cycle shares one seed, one split and one network initialization, so
runs that differ only in the silence column are directly comparable.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio_io import PIPELINE_RATE, load_wav, resample
from .dataset import SplitSpec, labels_matrix, split
from .hsf import aggregate_mean_std, assemble_matrix
from .lld import extract_lld, import_lld_csv
from .metrics import DIMENSIONS, CccReport, TaskWeights
from .model import ModelConfig, TrainConfig, init_network, pad_sequences, predict_and_evaluate, train
from .silence import FrameConfig, frame_rms_series, silence_from_rms

FEATURE_SETS = ("lld-sequence", "mean-std", "mean-std-silence")
DEFAULT_ALPHAS = (0.1, 0.2, 0.3, 0.4)

# published IEMOCAP scores, printed next to results and never asserted
REFERENCE_TABLE = {
    "lld-sequence": {"label": "GeMAPS", "valence": 0.118, "arousal": 0.536, "dominance": 0.466, "mean": 0.373},
    "mean-std": {"label": "mean+std", "valence": 0.201, "arousal": 0.476, "dominance": 0.435, "mean": 0.371},
    "mean-std-silence": {"label": "mean+std+silence", "valence": 0.214, "arousal": 0.561, "dominance": 0.448, "mean": 0.408},
}
REFERENCE_SWEEP_MEAN = {0.1: 0.389, 0.2: 0.392, 0.3: 0.408, 0.4: 0.373}


class ExperimentError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


@dataclass(frozen=True)
class ExperimentPlan:
    feature_sets: tuple = ("mean-std", "mean-std-silence")
    alphas: tuple = DEFAULT_ALPHAS
    alpha: float = 0.3
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    cell: str = "dense"
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    weights: tuple = (0.1, 0.5, 0.4)
    train_fraction: float = 0.8
    grouping: str = "none"
    frame_length: int = 2048
    hop_length: int = 512
    seq_len: int = 300
    seq_hidden: tuple = (16,)
    require_full_gemaps: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "feature_sets", tuple(self.feature_sets))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "seq_hidden", tuple(self.seq_hidden))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.alphas or min(self.alphas) <= 0 or self.alpha <= 0:
            raise ValueError("alphas must be non-empty and all > 0")
        unknown = set(self.feature_sets) - set(FEATURE_SETS)
        if unknown:
            raise ValueError(f"unknown feature set(s): {sorted(unknown)}")

    @property
    def frames(self) -> FrameConfig:
        return FrameConfig(self.frame_length, self.hop_length)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.max_epochs, self.patience, self.learning_rate,
                           weights=TaskWeights(*self.weights))


@dataclass
class CorpusFeatures:
    """Per-utterance material from which every feature set is derived.

    ``rms`` keeps the silence-framing RMS series so that the silence
    fraction can be recomputed for any threshold factor without touching
    audio again.
    """

    utt_ids: list
    labels: np.ndarray
    llds: list
    rms: list
    mean_std: np.ndarray
    layout: tuple
    records: list = field(default_factory=list)

    def index(self, records) -> np.ndarray:
        pos = {u: i for i, u in enumerate(self.utt_ids)}
        return np.array([pos[r.utt_id] for r in records], dtype=int)

    def silence(self, alpha: float) -> np.ndarray:
        if any(r is None for r in self.rms):
            raise ExperimentError("silence features need audio for every utterance (wav_path)")
        return np.array([silence_from_rms(r, alpha).fraction for r in self.rms])


def _utterance_material(record, frames: FrameConfig, require_full_gemaps: bool):
    buf = None
    if record.wav_path:
        buf = resample(load_wav(record.wav_path), PIPELINE_RATE)
    if record.lld_path:
        lld = import_lld_csv(record.lld_path, require_full_gemaps)
    elif buf is not None:
        lld = extract_lld(buf)
    else:
        raise ExperimentError(f"{record.utt_id}: neither wav_path nor lld_path given")
    rms = frame_rms_series(buf.samples, frames) if buf is not None else None
    return lld, rms


def extract_corpus(records, plan: ExperimentPlan | None = None, n_jobs: int = 1) -> CorpusFeatures:
    plan = plan or ExperimentPlan()
    records = list(records)
    args = [(r, plan.frames, plan.require_full_gemaps) for r in records]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            material = list(pool.map(_utterance_material, *zip(*args)))
    else:
        material = [_utterance_material(*a) for a in args]
    llds = [m[0] for m in material]
    ids = [r.utt_id for r in records]
    mean_std, layout = assemble_matrix([aggregate_mean_std(l) for l in llds], ids)
    return CorpusFeatures(ids, labels_matrix(records), llds, [m[1] for m in material],
                          mean_std, layout, records)


def feature_matrix(features: CorpusFeatures, feature_set: str, alpha: float = 0.3, seq_len: int = 300):
    """Model input for one feature set: ``(X, layout)``."""
    if feature_set == "mean-std":
        return features.mean_std, features.layout
    if feature_set == "mean-std-silence":
        s = features.silence(alpha)
        return np.column_stack([features.mean_std, s]), features.layout + ("silence",)
    if feature_set == "lld-sequence":
        return pad_sequences([l.values for l in features.llds], seq_len), features.llds[0].descriptor_names
    raise ValueError(f"unknown feature set {feature_set!r}")


def _model_config(plan: ExperimentPlan, feature_set: str, input_dim: int) -> ModelConfig:
    if feature_set == "lld-sequence":
        return ModelConfig(input_dim, plan.seq_hidden, "sequence", "lstm", plan.seq_len, plan.seed)
    return ModelConfig(input_dim, plan.hidden, "vector", plan.cell, plan.seq_len, plan.seed)


def run_cycle(features: CorpusFeatures, X, feature_set: str, plan: ExperimentPlan):
    """Train on the seeded split and score the test partition."""
    train_recs, val_recs, test_recs = split(
        features.records, SplitSpec(plan.train_fraction, plan.seed, plan.grouping)
    )
    tr, va, te = (features.index(r) for r in (train_recs, val_recs, test_recs))
    Y = features.labels
    cfg = _model_config(plan, feature_set, X.shape[-1])
    net, history = train(init_network(cfg), X[tr], Y[tr], X[va], Y[va], plan.train_config())
    return predict_and_evaluate(net, X[te], Y[te]), history, net


def _row(name, report: CccReport, history) -> dict:
    row = {"name": name, **report.to_dict()}
    row["epochs"] = len(history)
    row["best_epoch"] = int(np.argmin([h["val_loss"] for h in history])) + 1
    return row


def run_feature_comparison(features: CorpusFeatures, plan: ExperimentPlan) -> dict:
    rows = []
    for fs in plan.feature_sets:
        try:
            X, _ = feature_matrix(features, fs, plan.alpha, plan.seq_len)
            report, history, _ = run_cycle(features, X, fs, plan)
        except Exception as exc:
            raise ExperimentError(f"feature set {fs} failed: {exc}", partial=rows) from exc
        rows.append(_row(fs, report, history))
    return {"kind": "comparison", "rows": rows,
            "reference": {fs: REFERENCE_TABLE[fs] for fs in plan.feature_sets}}


def run_alpha_sweep(features: CorpusFeatures, plan: ExperimentPlan) -> dict:
    rows = []
    for alpha in plan.alphas:
        try:
            X, _ = feature_matrix(features, "mean-std-silence", alpha)
            report, history, _ = run_cycle(features, X, "mean-std-silence", plan)
        except Exception as exc:
            raise ExperimentError(f"alpha {alpha} failed: {exc}", partial=rows) from exc
        row = _row(f"alpha={alpha:g}", report, history)
        row["alpha"] = alpha
        rows.append(row)
    best = max(rows, key=lambda r: r["mean"])
    return {"kind": "sweep", "rows": rows, "best_alpha": best["alpha"],
            "reference": {f"{a:g}": m for a, m in REFERENCE_SWEEP_MEAN.items()}}


def long_format(results: dict) -> list:
    """(key, dimension, ccc) rows for plotting; key is alpha for sweeps."""
    out = []
    for row in results["rows"]:
        key = row.get("alpha", row["name"])
        for dim in (*DIMENSIONS, "mean"):
            out.append((key, dim, row[dim]))
    return out


def emit_report(results: dict, out_dir, plan: ExperimentPlan, invocation: str = "") -> dict:
    """Write ``<kind>.json``, ``<kind>.csv`` and ``<kind>_long.csv``; returns the paths."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    kind = results["kind"]
    doc = {**results, "invocation": invocation, "seed": plan.seed, "config": asdict(plan)}
    paths = {
        "json": os.path.join(out_dir, f"{kind}.json"),
        "csv": os.path.join(out_dir, f"{kind}.csv"),
        "long": os.path.join(out_dir, f"{kind}_long.csv"),
    }
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    with open(paths["csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", *DIMENSIONS, "mean", "epochs", "best_epoch"])
        for r in results["rows"]:
            w.writerow([r["name"], *(repr(r[d]) for d in (*DIMENSIONS, "mean")), r["epochs"], r["best_epoch"]])
    with open(paths["long"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha" if kind == "sweep" else "feature_set", "dimension", "ccc"])
        for key, dim, value in long_format(results):
            w.writerow([key, dim, repr(value)])
    return paths


def load_report(path) -> dict:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return json.load(fh)


def format_table(results: dict) -> str:
    """Plain-text table of results with the published reference beside each row."""
    lines = [f"{'run':<20}{'V':>8}{'A':>8}{'D':>8}{'mean':>8}   reference (IEMOCAP, not asserted)"]
    ref = results.get("reference", {})
    for r in results["rows"]:
        line = f"{r['name']:<20}" + "".join(f"{r[d]:>8.3f}" for d in (*DIMENSIONS, "mean"))
        if results["kind"] == "comparison" and r["name"] in ref:
            x = ref[r["name"]]
            line += f"   {x['label']}: {x['valence']:.3f} {x['arousal']:.3f} {x['dominance']:.3f} {x['mean']:.3f}"
        elif results["kind"] == "sweep":
            m = ref.get(f"{r['alpha']:g}")
            line += f"   mean {m:.3f}" if m is not None else ""
        lines.append(line)
    if results["kind"] == "sweep":
        lines.append(f"best alpha by mean CCC: {results['best_alpha']:g}")
    return "\n".join(lines)
