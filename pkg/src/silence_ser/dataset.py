"""Corpus manifests, label scaling, deterministic splits and synthetic corpora."""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .audio_io import PIPELINE_RATE, AudioBuffer, write_wav
from .silence import FrameConfig, frame_rms_series


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    wav_path: str | None
    labels: tuple  # (valence, arousal, dominance), each in [-1, 1]
    session: str | None = None
    lld_path: str | None = None

    def __post_init__(self):
        if len(self.labels) != 3 or any(not -1.0 <= v <= 1.0 for v in self.labels):
            raise ManifestError(f"{self.utt_id}: labels {self.labels} outside [-1, 1]")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    grouping: str = "none"  # or "by-session"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.grouping not in ("none", "by-session"):
            raise ValueError(f"unknown grouping {self.grouping!r}")


def scale_label(raw: float) -> float:
    """Map a 1..5 rating linearly onto [-1, 1]."""
    raw = float(raw)
    if not 1.0 <= raw <= 5.0:
        raise ValueError(f"rating {raw} outside the 1..5 scale")
    return (raw - 3.0) / 2.0


def average_raters(ratings):
    ratings = np.asarray(list(ratings), dtype=np.float64)
    if ratings.size == 0:
        raise ValueError("no ratings to average")
    return tuple(float(v) for v in ratings.reshape(-1, 3).mean(axis=0))


_RATER_COL = re.compile(r"^([vad])_raw(?:_(\d+))?$")


def _rater_groups(header):
    groups = {}
    for col in header:
        m = _RATER_COL.match(col)
        if m:
            groups.setdefault(int(m.group(2) or 1), {})[m.group(1)] = col
    complete = {k: g for k, g in groups.items() if len(g) == 3}
    if not complete:
        raise ManifestError("manifest needs v_raw, a_raw, d_raw columns (optionally suffixed _2, _3, ...)")
    return [complete[k] for k in sorted(complete)]


def load_manifest(path, check_files: bool = True):
    """Parse a manifest CSV into validated records with averaged, scaled labels.

    Relative ``wav_path``/``lld_path`` entries resolve against the manifest's
    directory. Every complete rater group (``v_raw``/``a_raw``/``d_raw`` with
    an optional ``_N`` suffix) present on a row is averaged before scaling.
    """
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "utt_id" not in header:
            raise ManifestError(f"{path}: missing utt_id column")
        if "wav_path" not in header and "lld_path" not in header:
            raise ManifestError(f"{path}: need a wav_path or lld_path column")
        groups = _rater_groups(header)
        rows = list(reader)

    records, seen = [], set()
    for row in rows:
        uid = row["utt_id"].strip()
        if uid in seen:
            raise ManifestError(f"{path}: duplicate utt_id {uid!r}")
        seen.add(uid)
        ratings = []
        for g in groups:
            cells = [row.get(g[k], "").strip() for k in "vad"]
            if not any(cells):
                continue
            try:
                ratings.append([float(c) for c in cells])
            except ValueError:
                raise ManifestError(f"{path}: unparsable label for {uid!r}: {cells}") from None
        if not ratings:
            raise ManifestError(f"{path}: no ratings for {uid!r}")
        try:
            labels = tuple(scale_label(r) for r in average_raters(ratings))
        except ValueError as exc:
            raise ManifestError(f"{path}: {uid!r}: {exc}") from None

        resolved = {}
        for col in ("wav_path", "lld_path"):
            ref = (row.get(col) or "").strip()
            if ref:
                ref = ref if os.path.isabs(ref) else os.path.join(base, ref)
                if check_files and not os.path.exists(ref):
                    raise ManifestError(f"{path}: {uid!r}: missing file {ref}")
            resolved[col] = ref or None
        session = (row.get("session") or "").strip() or None
        records.append(UtteranceRecord(uid, resolved["wav_path"], labels, session, resolved["lld_path"]))
    return records


def write_manifest(path, rows, extra_columns=()) -> None:
    """Write manifest rows given as dicts with utt_id, wav_path, v_raw, a_raw, d_raw, session."""
    columns = ["utt_id", "wav_path", "v_raw", "a_raw", "d_raw", "session", *extra_columns]
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


def labels_matrix(records) -> np.ndarray:
    return np.array([r.labels for r in records], dtype=np.float64)


def _partition_sizes(n: int, train_fraction: float):
    n_train = min(max(int(round(n * train_fraction)), 1), n - 2)
    rest = n - n_train
    n_val = rest // 2
    return n_train, n_val, rest - n_val


def split(corpus, spec: SplitSpec | None = None):
    """Seeded train/validation/test partition.

    Validation and test share the remainder after the training fraction. With
    ``grouping="by-session"`` whole sessions are allocated instead of records.
    """
    spec = spec or SplitSpec()
    corpus = list(corpus)
    rng = np.random.default_rng(spec.seed)
    if spec.grouping == "by-session":
        sessions = sorted({r.session or "" for r in corpus})
        if len(sessions) < 3:
            raise ValueError(f"by-session split needs >= 3 sessions, found {len(sessions)}")
        order = [sessions[i] for i in rng.permutation(len(sessions))]
        k_train, k_val, _ = _partition_sizes(len(order), spec.train_fraction)
        bucket = {s: 0 if i < k_train else 1 if i < k_train + k_val else 2 for i, s in enumerate(order)}
        parts = ([], [], [])
        for r in corpus:
            parts[bucket[r.session or ""]].append(r)
    else:
        if len(corpus) < 3:
            raise ValueError(f"split needs at least 3 records, got {len(corpus)}")
        n_train, n_val, _ = _partition_sizes(len(corpus), spec.train_fraction)
        shuffled = [corpus[i] for i in rng.permutation(len(corpus))]
        parts = (shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :])
    for name, part in zip(("train", "validation", "test"), parts):
        if not part:
            raise ValueError(f"{name} partition would be empty")
    return parts


# --- synthetic corpora ----------------------------------------------------


@dataclass(frozen=True)
class SynthPlan:
    """How labels relate to the generated audio.

    Speech stretches are harmonic-tone syllables with unvoiced noise bursts
    and short micro-pauses (too brief to silence a 128 ms frame). Between
    stretches sit long pauses: near-digital-silence gaps, faint noise whose
    frame RMS lies just below ``matched_alpha`` times the utterance mean, and
    soft voiced segments just above it. Arousal falls linearly with the
    share of long-pause (gap plus faint) time, so the silence feature is
    most informative at ``matched_alpha``; valence follows the utterance
    pitch and dominance its level. ``noise`` is the half-width of uniform
    label noise.
    """

    matched_alpha: float = 0.3
    noise: float = 0.1
    duration: tuple = (1.5, 3.0)
    gap_share: tuple = (0.0, 0.45)
    faint_share: tuple = (0.0, 0.2)
    soft_share: tuple = (0.0, 0.3)
    micro_share: tuple = (0.0, 0.45)
    unvoiced_share: tuple = (0.0, 0.4)
    margin: float = 0.03
    null_labels: bool = False
    sample_rate: int = PIPELINE_RATE
    frames: FrameConfig = field(default_factory=FrameConfig)


@dataclass(frozen=True)
class SynthUtterance:
    utt_id: str
    buffer: AudioBuffer
    labels: tuple
    inserted_silence: float
    session: str


_SPEECH, _SOFT, _FAINT, _GAP = range(4)
_MIN_PIECE = 6  # in hops; longer than one silence frame
_GAP_RATIO = 0.005


def _pieces(rng, units, kind):
    if units < _MIN_PIECE:
        return []
    k = min(int(rng.integers(1, units // _MIN_PIECE + 1)), 3)
    cuts = np.sort(rng.choice(np.arange(1, units), size=k - 1, replace=False)) if k > 1 else []
    lengths = np.diff(np.concatenate([[0], cuts, [units]])).astype(int)
    if lengths.min() < _MIN_PIECE:
        lengths = np.array([units])
    return [(kind, int(n)) for n in lengths]


def _speech_stretch(rng, n, sr, f0, level, micro, unvoiced):
    """Syllables of tone or noise, each followed by a micro-pause.

    Returns (carrier, absolute level, relative level) arrays of length ``n``.
    """
    carrier, absolute, relative = np.zeros(n), np.zeros(n), np.zeros(n)
    pos = 0
    while pos < n:
        syl = min(int(rng.uniform(0.08, 0.25) * sr), n - pos)
        sl = slice(pos, pos + syl)
        if rng.random() < unvoiced:
            carrier[sl] = rng.standard_normal(syl)
        else:
            t = np.arange(syl) / sr
            ph = 2 * np.pi * f0 * rng.uniform(0.95, 1.05) * t + rng.uniform(0, 2 * np.pi)
            carrier[sl] = (np.sin(ph) + 0.5 * np.sin(2 * ph) + 0.25 * np.sin(3 * ph)) / np.sqrt(0.65625)
        absolute[sl] = level * rng.uniform(0.5, 1.5)
        pos += syl
        pause = min(int(syl * micro / (1.0 - micro) * rng.uniform(0.5, 1.5)), n - pos, int(0.09 * sr))
        if pause > 0:
            carrier[pos : pos + pause] = rng.standard_normal(pause)
            relative[pos : pos + pause] = _GAP_RATIO
            pos += pause
    return carrier, absolute, relative


def synth_utterance(index: int, seed: int, plan: SynthPlan) -> SynthUtterance:
    rng = np.random.default_rng([seed, index])
    sr, hop = plan.sample_rate, plan.frames.hop_length
    units = int(round(rng.uniform(*plan.duration) * sr / hop))

    segments, counts = [], {}
    for kind, share in ((_GAP, plan.gap_share), (_FAINT, plan.faint_share), (_SOFT, plan.soft_share)):
        got = _pieces(rng, int(round(rng.uniform(*share) * units)), kind)
        counts[kind] = sum(n for _, n in got)
        segments += got
    speech_units = units - sum(counts.values())
    stretches = _pieces(rng, speech_units, _SPEECH) or [(_SPEECH, speech_units)]
    segments = [segments[i] for i in rng.permutation(len(segments))]
    # interleave so every utterance starts and ends with speech
    order = [stretches[0]]
    rest = stretches[1:]
    for seg in segments:
        order.append(seg)
        if rest:
            order.append(rest.pop(0))
    order += rest
    if order[-1][0] != _SPEECH and len(order) > 2:
        order.insert(-1, order.pop())  # keep last long pause off the tail

    f0 = rng.uniform(120.0, 280.0)
    level = float(np.exp(rng.uniform(np.log(0.05), np.log(0.6))))
    micro = rng.uniform(*plan.micro_share)
    unvoiced = rng.uniform(*plan.unvoiced_share)
    a = plan.matched_alpha

    n_total = units * hop
    carrier, absolute, relative = np.zeros(n_total), np.zeros(n_total), np.zeros(n_total)
    pos = 0
    for kind, n in order:
        sl = slice(pos, pos + n * hop)
        if kind == _SPEECH:
            carrier[sl], absolute[sl], relative[sl] = _speech_stretch(rng, n * hop, sr, f0, level, micro, unvoiced)
        elif kind == _SOFT:
            t = np.arange(n * hop) / sr
            carrier[sl] = np.sqrt(2.0) * np.sin(2 * np.pi * f0 * t)
            relative[sl] = rng.uniform(a + plan.margin, a + 0.1)
        else:
            carrier[sl] = rng.standard_normal(n * hop)
            relative[sl] = _GAP_RATIO if kind == _GAP else rng.uniform(max(a - 0.1, 0.02), a - plan.margin)
        pos += n * hop

    # relative levels refer to the mean frame RMS of the finished signal
    mean_rms = level
    for _ in range(8):
        x = carrier * (absolute + relative * mean_rms)
        mean_rms = float(frame_rms_series(x, plan.frames).mean())
    x = np.clip(carrier * (absolute + relative * mean_rms), -0.99, 0.99)

    inserted = (counts[_GAP] + counts[_FAINT]) / units
    if plan.null_labels:
        raw = rng.uniform(-0.9, 0.9, size=3)
    else:
        raw = np.array([
            (f0 - 200.0) / 80.0 * 0.9,
            0.9 - 3.0 * inserted,
            (np.log(level) - np.log(np.sqrt(0.05 * 0.6))) / np.log(np.sqrt(0.6 / 0.05)) * 0.9,
        ])
        if plan.noise > 0:
            raw = raw + rng.uniform(-plan.noise, plan.noise, size=3)
    labels = tuple(float(v) for v in np.clip(raw, -1.0, 1.0))
    return SynthUtterance(f"utt{index:05d}", AudioBuffer(x, sr), labels, inserted, f"s{index % 5 + 1}")


def synth_corpus(n: int, seed: int, plan: SynthPlan | None = None, out_dir=None):
    """Generate ``n`` synthetic utterances; optionally write WAVs and a manifest.

    Each utterance draws from its own generator seeded by ``(seed, index)``,
    so output does not depend on generation order. Returns the list of
    :class:`SynthUtterance`; with ``out_dir`` also writes ``manifest.csv``
    and ``wavs/*.wav`` (PCM16).
    """
    if n < 2:
        raise ValueError("synth_corpus needs n >= 2")
    plan = plan or SynthPlan()
    utts = [synth_utterance(i, seed, plan) for i in range(n)]
    if out_dir is not None:
        wav_dir = os.path.join(os.fspath(out_dir), "wavs")
        os.makedirs(wav_dir, exist_ok=True)
        rows = []
        for u in utts:
            write_wav(os.path.join(wav_dir, f"{u.utt_id}.wav"), u.buffer)
            v, a, d = (repr(3.0 + 2.0 * x) for x in u.labels)
            rows.append({
                "utt_id": u.utt_id, "wav_path": f"wavs/{u.utt_id}.wav",
                "v_raw": v, "a_raw": a, "d_raw": d, "session": u.session,
                "inserted_silence": repr(u.inserted_silence),
            })
        write_manifest(os.path.join(os.fspath(out_dir), "manifest.csv"), rows, ("inserted_silence",))
    return utts
