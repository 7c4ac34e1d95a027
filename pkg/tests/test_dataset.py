import hashlib
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from silence_ser.audio_io import load_wav
from silence_ser.dataset import (
    ManifestError,
    SplitSpec,
    SynthPlan,
    UtteranceRecord,
    average_raters,
    labels_matrix,
    load_manifest,
    scale_label,
    split,
    synth_corpus,
    write_manifest,
)
from silence_ser.silence import SilenceConfig, silence_fraction


def test_scale_label_examples():
    assert scale_label(3) == 0.0
    assert scale_label(1) == -1.0 and scale_label(5) == 1.0
    assert scale_label(4.5) == 0.75
    for bad in (0.99, 5.01):
        with pytest.raises(ValueError):
            scale_label(bad)


@given(st.floats(1, 5), st.floats(1, 5))
def test_scale_label_strictly_increasing(a, b):
    if a < b:
        assert scale_label(a) < scale_label(b)


def test_average_raters_examples():
    assert average_raters([(2, 4, 3), (4, 4, 5)]) == (3, 4, 4)
    assert average_raters([(3, 3, 3)]) == (3, 3, 3)
    assert average_raters([(1, 1, 1), (5, 5, 5)]) == (3, 3, 3)
    with pytest.raises(ValueError):
        average_raters([])


def test_record_label_range():
    with pytest.raises(ManifestError):
        UtteranceRecord("x", None, (0, 1.2, 0))


def write_rows(tmp_path, text, wavs=()):
    for w in wavs:
        (tmp_path / w).write_bytes(b"")
    p = tmp_path / "m.csv"
    p.write_text(text)
    return p


def test_manifest_three_rows(tmp_path):
    p = write_rows(tmp_path, "utt_id,wav_path,v_raw,a_raw,d_raw,session\n"
                             "a,a.wav,3,1,5,s1\nb,b.wav,4.5,3,2,s1\nc,c.wav,2,2,2,\n", ["a.wav", "b.wav", "c.wav"])
    recs = load_manifest(p)
    assert [r.utt_id for r in recs] == ["a", "b", "c"]
    assert recs[0].labels == (0.0, -1.0, 1.0)
    assert recs[1].labels == (0.75, 0.0, -0.5)
    assert recs[0].wav_path == os.path.join(str(tmp_path), "a.wav")
    assert recs[0].session == "s1" and recs[2].session is None


def test_manifest_averages_rater_groups(tmp_path):
    p = write_rows(tmp_path, "utt_id,wav_path,v_raw,a_raw,d_raw,v_raw_2,a_raw_2,d_raw_2\n"
                             "a,a.wav,2,4,3,4,4,5\nb,a.wav,1,1,1,,,\n", ["a.wav"])
    recs = load_manifest(p)
    assert recs[0].labels == (0.0, 0.5, 0.5)
    assert recs[1].labels == (-1.0, -1.0, -1.0)


@pytest.mark.parametrize(
    "body,match",
    [("a,a.wav,3,3,3\na,a.wav,3,3,3\n", "duplicate utt_id 'a'"),
     ("a,zz.wav,3,3,3\n", "missing file"),
     ("a,a.wav,3,x,3\n", "unparsable label"),
     ("a,a.wav,3,6,3\n", "'a'")],
)
def test_manifest_errors(tmp_path, body, match):
    p = write_rows(tmp_path, "utt_id,wav_path,v_raw,a_raw,d_raw\n" + body, ["a.wav"])
    with pytest.raises(ManifestError, match=match):
        load_manifest(p)


def test_manifest_full_corpus_size(tmp_path):
    rows = [{"utt_id": f"u{i}", "wav_path": f"w{i}.wav", "v_raw": 3, "a_raw": 2, "d_raw": 4} for i in range(10039)]
    write_manifest(tmp_path / "big.csv", rows)
    recs = load_manifest(tmp_path / "big.csv", check_files=False)
    assert len(recs) == 10039
    assert labels_matrix(recs).shape == (10039, 3)


def records(n, sessions=5):
    return [UtteranceRecord(f"u{i}", None, (0, 0, 0), f"s{i % sessions}") for i in range(n)]


def test_split_sizes():
    tr, va, te = split(records(10), SplitSpec(0.8, 1))
    assert (len(tr), len(va), len(te)) == (8, 1, 1)


def test_split_deterministic():
    a = split(records(50), SplitSpec(0.8, 3))
    b = split(records(50), SplitSpec(0.8, 3))
    assert a == b
    assert a != split(records(50), SplitSpec(0.8, 4))


def test_split_by_session():
    parts = split(records(100), SplitSpec(0.6, 2, "by-session"))
    owners = {}
    for k, part in enumerate(parts):
        for r in part:
            owners.setdefault(r.session, set()).add(k)
    assert all(len(v) == 1 for v in owners.values())
    assert all(parts)


def test_split_rejects_tiny_corpus():
    with pytest.raises(ValueError, match="at least 3"):
        split(records(2))
    with pytest.raises(ValueError, match="sessions"):
        split(records(10, sessions=2), SplitSpec(grouping="by-session"))
    with pytest.raises(ValueError):
        SplitSpec(1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 300), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1), st.booleans())
def test_split_is_a_partition(n, frac, seed, by_session):
    corpus = records(n, sessions=max(3, n // 7))
    parts = split(corpus, SplitSpec(frac, seed, "by-session" if by_session else "none"))
    ids = [r.utt_id for p in parts for r in p]
    assert sorted(ids) == sorted(r.utt_id for r in corpus)
    assert len(set(ids)) == len(ids)


def digest(directory):
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(directory)):
        for f in sorted(files):
            with open(os.path.join(root, f), "rb") as fh:
                h.update(f.encode() + fh.read())
    return h.hexdigest()


def test_synth_byte_identical(tmp_path):
    synth_corpus(100, 7, out_dir=tmp_path / "a")
    synth_corpus(100, 7, out_dir=tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    recs = load_manifest(tmp_path / "a" / "manifest.csv")
    assert len(recs) == 100
    assert load_wav(recs[0].wav_path).sample_rate == 16000


def test_synth_manifest_labels_round_trip(tmp_path):
    utts = synth_corpus(5, 1, out_dir=tmp_path)
    recs = load_manifest(tmp_path / "manifest.csv")
    np.testing.assert_allclose(labels_matrix(recs), [u.labels for u in utts], atol=1e-12)


def silence_vs_arousal(utts):
    s = [silence_fraction(u.buffer, SilenceConfig(0.3)).fraction for u in utts]
    return np.corrcoef(s, [u.labels[1] for u in utts])[0, 1]


def test_noise_free_corpus_is_strongly_anticorrelated():
    assert silence_vs_arousal(synth_corpus(150, 11, SynthPlan(noise=0.0))) <= -0.95


def test_noisy_corpus_keeps_the_premise():
    assert abs(silence_vs_arousal(synth_corpus(150, 12))) >= 0.8


def test_null_plan_decouples_labels():
    assert abs(silence_vs_arousal(synth_corpus(300, 13, SynthPlan(null_labels=True)))) < 0.2


def test_two_utterance_corpus():
    utts = synth_corpus(2, 0)
    assert len(utts) == 2
    with pytest.raises(ValueError):
        synth_corpus(1, 0)
    # a 3-way split of 2 records would leave a partition empty
    with pytest.raises(ValueError):
        split([UtteranceRecord(u.utt_id, None, u.labels) for u in utts])
