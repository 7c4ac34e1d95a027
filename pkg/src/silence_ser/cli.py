"""Command line entry point: ``silence-ser <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shlex
import sys

from .dataset import SplitSpec, SynthPlan, labels_matrix, load_manifest, split, synth_corpus
from .experiment import (
    DEFAULT_ALPHAS,
    FEATURE_SETS,
    ExperimentPlan,
    emit_report,
    extract_corpus,
    feature_matrix,
    format_table,
    load_report,
    run_alpha_sweep,
    run_feature_comparison,
)
from .hsf import write_feature_csv
from .lld import write_lld_csv
from .metrics import TaskWeights
from .model import ModelConfig, init_network, load_network, predict_and_evaluate, save_network, train

log = logging.getLogger("silence_ser")


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _weights(text):
    return TaskWeights.parse(str(text))


def read_config(path) -> dict:
    """Parse a UTF-8 key=value file; keys may use dashes or underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{n}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_common(p, *, manifest=True, model=True):
    p.add_argument("--config", help="key=value file mirroring these flags (flags win)")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, default=0)
    if manifest:
        p.add_argument("--manifest", required=False, help="corpus manifest CSV")
        p.add_argument("--frame-length", type=int, default=2048, help="silence frame length (samples)")
        p.add_argument("--hop-length", type=int, default=512, help="silence hop length (samples)")
        p.add_argument("--require-full-gemaps", action="store_true",
                       help="imported LLD CSVs must carry all 23 GeMAPS descriptors")
        p.add_argument("--jobs", type=int, default=1, help="parallel feature extraction workers")
    if model:
        p.add_argument("--weights", type=_weights, default=TaskWeights(), help="loss weights v,a,d")
        p.add_argument("--hidden", type=_ints, default=(64, 64, 64))
        p.add_argument("--cell", choices=("dense", "lstm"), default="dense")
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--patience", type=int, default=10)
        p.add_argument("--learning-rate", type=float, default=1e-3)
        p.add_argument("--train-fraction", type=float, default=0.8)
        p.add_argument("--grouping", choices=("none", "by-session"), default="none")
        p.add_argument("--seq-len", type=int, default=300)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="silence-ser", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus (WAVs + manifest)")
    _add_common(p, manifest=False, model=False)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--matched-alpha", type=float, default=0.3)
    p.add_argument("--null-labels", action="store_true")

    p = sub.add_parser("extract", help="write per-utterance feature matrix (and optional LLD CSVs)")
    _add_common(p, model=False)
    p.add_argument("--feature-set", choices=("mean-std", "mean-std-silence"), default="mean-std-silence")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--emit-lld", action="store_true")

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    _add_common(p)
    p.add_argument("--feature-set", choices=FEATURE_SETS, default="mean-std-silence")
    p.add_argument("--alpha", type=float, default=0.3)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p, model=False)
    p.add_argument("--model", required=False, help="checkpoint written by train")
    p.add_argument("--partition", choices=("test", "all"), default="test")

    p = sub.add_parser("compare", help="feature-set comparison")
    _add_common(p)
    p.add_argument("--feature-set", action="append", choices=FEATURE_SETS, dest="feature_sets")
    p.add_argument("--alpha", type=float, default=0.3)

    p = sub.add_parser("sweep-alpha", help="silence threshold factor sweep")
    _add_common(p)
    p.add_argument("--alphas", type=_floats, default=DEFAULT_ALPHAS)

    p = sub.add_parser("report", help="print result tables beside the published reference values")
    p.add_argument("--config")
    p.add_argument("results", nargs="+", help="comparison.json / sweep.json files")
    return parser


_BOOL_KEYS = {"require_full_gemaps", "emit_lld", "null_labels", "verbose"}


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest for a in sub._actions} | {"feature_set", "feature_sets"}
        unknown = set(cfg) - dests
        if unknown:
            parser.error(f"unknown config key(s): {', '.join(sorted(unknown))}")
        for key in _BOOL_KEYS & set(cfg):
            cfg[key] = cfg[key].lower() in ("1", "true", "yes", "on")
        # appended flags would extend a config default, so apply the config list afterwards
        config_sets = cfg.pop("feature_set", None) or cfg.pop("feature_sets", None)
        if args.command != "compare" and config_sets is not None:
            cfg["feature_set"] = config_sets
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
        if args.command == "compare" and config_sets and not args.feature_sets:
            args.feature_sets = [s.strip() for s in config_sets.split(",")]
    return args


def _plan(args, **overrides) -> ExperimentPlan:
    kw = dict(
        seed=args.seed, hidden=args.hidden, cell=args.cell, max_epochs=args.epochs,
        patience=args.patience, learning_rate=args.learning_rate,
        weights=(args.weights.w_v, args.weights.w_a, args.weights.w_d),
        train_fraction=args.train_fraction, grouping=args.grouping,
        frame_length=args.frame_length, hop_length=args.hop_length, seq_len=args.seq_len,
        require_full_gemaps=args.require_full_gemaps,
    )
    kw.update(overrides)
    return ExperimentPlan(**kw)


def _need(args, name):
    if not getattr(args, name, None):
        raise SystemExit(f"--{name.replace('_', '-')} is required")


def cmd_synth(args, invocation):
    plan = SynthPlan(matched_alpha=args.matched_alpha, noise=args.noise, null_labels=args.null_labels)
    utts = synth_corpus(args.n, args.seed, plan, args.out_dir)
    print(f"wrote {len(utts)} utterances and manifest.csv to {args.out_dir}")


def cmd_extract(args, invocation):
    _need(args, "manifest")
    records = load_manifest(args.manifest)
    plan = ExperimentPlan(frame_length=args.frame_length, hop_length=args.hop_length, alpha=args.alpha,
                          require_full_gemaps=args.require_full_gemaps)
    feats = extract_corpus(records, plan, n_jobs=args.jobs)
    X, layout = feature_matrix(feats, args.feature_set, args.alpha)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "features.csv")
    write_feature_csv(path, feats.utt_ids, X, layout)
    if args.emit_lld:
        lld_dir = os.path.join(args.out_dir, "lld")
        os.makedirs(lld_dir, exist_ok=True)
        for uid, lld in zip(feats.utt_ids, feats.llds):
            write_lld_csv(lld, os.path.join(lld_dir, f"{uid}.csv"))
    print(f"wrote {X.shape[0]} x {X.shape[1]} feature matrix to {path}")


def cmd_train(args, invocation):
    _need(args, "manifest")
    plan = _plan(args, alpha=args.alpha, feature_sets=(args.feature_set,))
    records = load_manifest(args.manifest)
    feats = extract_corpus(records, plan, n_jobs=args.jobs)
    X, layout = feature_matrix(feats, args.feature_set, args.alpha, args.seq_len)
    tr_r, va_r, te_r = split(records, SplitSpec(plan.train_fraction, plan.seed, plan.grouping))
    tr, va, te = (feats.index(r) for r in (tr_r, va_r, te_r))
    Y = feats.labels
    if args.feature_set == "lld-sequence":
        cfg = ModelConfig(X.shape[-1], plan.seq_hidden, "sequence", "lstm", args.seq_len, args.seed)
    else:
        cfg = ModelConfig(X.shape[-1], plan.hidden, "vector", plan.cell, args.seq_len, args.seed)
    net, history = train(init_network(cfg), X[tr], Y[tr], X[va], Y[va], plan.train_config())
    report = predict_and_evaluate(net, X[va], Y[va])

    os.makedirs(args.out_dir, exist_ok=True)
    extra = {
        "feature_set": args.feature_set, "alpha": args.alpha, "layout": list(layout),
        "frame_length": args.frame_length, "hop_length": args.hop_length,
        "test_ids": [r.utt_id for r in te_r], "invocation": invocation,
    }
    save_network(net, os.path.join(args.out_dir, "model.json"), extra)
    with open(os.path.join(args.out_dir, "history.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["epoch", "train_loss", "val_loss", "val_ccc_v", "val_ccc_a", "val_ccc_d"]
        w.writerow(cols)
        for h in history:
            w.writerow([h["epoch"], *(repr(h[c]) for c in cols[1:])])
    print(f"trained {len(history)} epochs; validation CCC V={report.valence:.3f} "
          f"A={report.arousal:.3f} D={report.dominance:.3f} mean={report.mean:.3f}")


def cmd_eval(args, invocation):
    _need(args, "manifest")
    _need(args, "model")
    net, extra = load_network(args.model)
    records = load_manifest(args.manifest)
    if args.partition == "test" and extra.get("test_ids"):
        keep = set(extra["test_ids"])
        records = [r for r in records if r.utt_id in keep]
    plan = ExperimentPlan(frame_length=extra.get("frame_length", args.frame_length),
                          hop_length=extra.get("hop_length", args.hop_length),
                          require_full_gemaps=args.require_full_gemaps)
    feats = extract_corpus(records, plan, n_jobs=args.jobs)
    X, _ = feature_matrix(feats, extra.get("feature_set", "mean-std-silence"),
                          extra.get("alpha", 0.3), net.config.seq_len)
    report = predict_and_evaluate(net, X, labels_matrix(records))
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "eval.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_json())


def cmd_compare(args, invocation):
    _need(args, "manifest")
    plan = _plan(args, alpha=args.alpha, feature_sets=tuple(args.feature_sets or ("mean-std", "mean-std-silence")))
    feats = extract_corpus(load_manifest(args.manifest), plan, n_jobs=args.jobs)
    results = run_feature_comparison(feats, plan)
    emit_report(results, args.out_dir, plan, invocation)
    print(format_table(results))


def cmd_sweep(args, invocation):
    _need(args, "manifest")
    plan = _plan(args, alphas=args.alphas, feature_sets=("mean-std-silence",))
    feats = extract_corpus(load_manifest(args.manifest), plan, n_jobs=args.jobs)
    results = run_alpha_sweep(feats, plan)
    emit_report(results, args.out_dir, plan, invocation)
    print(format_table(results))


def cmd_report(args, invocation):
    for path in args.results:
        doc = load_report(path)
        print(f"# {path}  (seed {doc.get('seed')}; {doc.get('invocation', '')})")
        print(format_table(doc))


COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "train": cmd_train, "eval": cmd_eval,
    "compare": cmd_compare, "sweep-alpha": cmd_sweep, "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    invocation = shlex.join(["silence-ser", *argv])
    COMMANDS[args.command](args, invocation)
    return 0


if __name__ == "__main__":
    sys.exit(main())
