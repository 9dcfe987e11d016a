"""Command-line front end: ``voicefp <subcommand> ...``.

Exit status: 0 on success or match, 3 on a legitimate non-match (``detect`` /
``fingerprint``), and the ``exit_code`` of the raised :class:`VoiceFPError`
(always >= 10) on failure. Artifacts default to ``$VF_DATA_DIR`` (``./vf-data``).

Option precedence is flags > ``--config`` JSON file > built-in defaults. The
config file is a flat object keyed by option name, e.g. ``{"epochs": 5}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import CANONICAL_RATE, read_wav, resample
from .corpus import (
    SYNTHETIC,
    CorpusConfig,
    SynthParams,
    generate_corpus,
    load_manifest,
    make_splits,
    sample_identities,
)
from .embedder import BaseEncoderConfig, CachedEncoder, ExternalEmbeddings, load_head, save_head
from .errors import ConfigurationError, MissingArtifactError, VoiceFPError
from .evaluation import POOLED, emit_report, evaluate_task, roc_svg
from .forensics import (
    FINGERPRINTING,
    MIXED_DRIVER,
    POLICIES,
    REAL_ENROLLMENT,
    SPOOF_DETECTION,
    TASKS,
    decide,
    enroll,
    load_profile,
    save_profile,
    score,
)
from .pipeline import enroll_from_manifest
from .trainer import AamConfig, train_head

log = logging.getLogger("voicefp")

EXIT_MATCH = 0
EXIT_NON_MATCH = 3
DEFAULT_POLICY = {SPOOF_DETECTION: REAL_ENROLLMENT, FINGERPRINTING: MIXED_DRIVER}


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 12), not argparse's 2."""

    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def data_dir() -> Path:
    return Path(os.environ.get("VF_DATA_DIR", "vf-data"))


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _run_config(args) -> dict:
    skip = {"func", "config"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _encoder(args):
    if getattr(args, "embeddings", None):
        return ExternalEmbeddings.load(args.embeddings)
    return CachedEncoder(BaseEncoderConfig(seed=args.encoder_seed))


def _head(args):
    return load_head(args.head) if getattr(args, "head", None) else None


def _load_audio(path):
    clip = read_wav(path)
    if clip.sample_rate_hz != CANONICAL_RATE:
        clip = resample(clip, CANONICAL_RATE)
    clip.source_id = Path(path).stem
    return clip


def _threshold(args) -> float:
    if args.threshold is not None:
        return float(args.threshold)
    if args.report is not None:
        p = Path(args.report)
        p = p / "report.json" if p.is_dir() else p
        if not p.exists():
            raise MissingArtifactError(f"report {p} not found")
        value = json.loads(p.read_text()).get("operating_threshold")
        if value is None:
            raise ConfigurationError(f"report {p} has no operating threshold")
        return float(value)
    raise ConfigurationError("pass --threshold or --report to set the decision threshold")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args) -> int:
    synth = SynthParams(synthetic_jitter_factor=args.jitter_factor, formant_perturbation=args.formant_perturbation)
    cfg = CorpusConfig(args.identities, args.clips_per_pair, args.real_per_identity, args.duration, args.seed, synth)
    out = Path(args.out) if args.out else data_dir() / "corpus"
    manifest = generate_corpus(sample_identities(cfg.n_identities, cfg.seed), out, cfg, args.threads)
    counts = manifest.counts()
    splits = {}
    if args.test_identities > 0:
        train, val, test, spec = make_splits(manifest, args.test_identities, args.val_fraction, args.seed)
        for name, m in (("train", train), ("val", val), ("test", test)):
            m.save(out / f"{name}.jsonl")
            splits[name] = len(m)
        (out / "splits.json").write_text(json.dumps({**asdict(spec), "seed": args.seed}, indent=2) + "\n")
    payload = {"manifest": str(out / "manifest.jsonl"), "sha256": manifest.digest(), "counts": counts,
               "splits": splits}
    text = (f"real {counts['real']}  self {counts['self']}  cross {counts['cross']}  total {counts['total']}\n"
            f"manifest {out / 'manifest.jsonl'}  sha256 {manifest.digest()}")
    if splits:
        text += "\nsplits " + "  ".join(f"{k} {v}" for k, v in splits.items())
    _emit(args, payload, text)
    return 0


def cmd_enroll(args) -> int:
    encoder, head = _encoder(args), _head(args)
    out = Path(args.out) if args.out else data_dir() / "profiles" / f"{args.identity}.json"
    if args.clips:
        if args.policy != REAL_ENROLLMENT:
            raise ConfigurationError("enrolling from bare WAV files requires the real-enrollment policy")
        profile = enroll(args.identity, [_load_audio(p) for p in args.clips], args.policy, encoder, head)
    else:
        manifest = load_manifest(args.manifest or data_dir() / "corpus" / "manifest.jsonl")
        profile = enroll_from_manifest(manifest, args.identity, args.policy, encoder, head, args.seconds,
                                       [args.seed, *args.identity.encode()])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_profile(profile, out)
    payload = {"profile": str(out), "identity": profile.identity, "policy": profile.policy,
               "clips": len(profile.clip_ids), "seconds": profile.total_enrollment_seconds,
               "head_version": profile.head_version}
    _emit(args, payload, f"enrolled {profile.identity} ({profile.policy}) from {len(profile.clip_ids)} clips, "
                         f"{profile.total_enrollment_seconds:.1f} s -> {out}")
    return 0


def _verify(args, task: str) -> int:
    profile = load_profile(args.profile)
    head = _head(args)
    s = score(profile, _load_audio(args.clip), _encoder(args), head)
    verdict = decide(s, _threshold(args), task)
    payload = {"task": task, "identity": profile.identity, "score": verdict.score, "threshold": verdict.threshold,
               "match": verdict.decision, "outcome": verdict.outcome}
    _emit(args, payload, f"{profile.identity}: score {verdict.score:.6f} threshold {verdict.threshold:.6f} "
                         f"-> {verdict.outcome}")
    return EXIT_MATCH if verdict.decision else EXIT_NON_MATCH


def cmd_detect(args) -> int:
    return _verify(args, SPOOF_DETECTION)


def cmd_fingerprint(args) -> int:
    return _verify(args, FINGERPRINTING)


def cmd_train_head(args) -> int:
    train_path = Path(args.manifest) if args.manifest else data_dir() / "corpus" / "train.jsonl"
    train = load_manifest(train_path).filter(lambda e: e.label.authenticity == SYNTHETIC)
    val = None
    val_path = Path(args.val) if args.val else train_path.with_name("val.jsonl")
    if args.val or val_path.exists():
        val = load_manifest(val_path).filter(lambda e: e.label.authenticity == SYNTHETIC)
    cfg = AamConfig(scale_s=args.scale, margin_m=args.margin, learning_rate=args.lr, epochs=args.epochs,
                    batch_size=args.batch_size, seed=args.seed)
    out = Path(args.out) if args.out else data_dir() / "head.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_name(out.stem + "_log.csv")
    head, history = train_head(train, cfg, _encoder(args), log_path, val)
    head.provenance["run_config"] = _run_config(args)
    save_head(head, out)
    losses = [r["mean_loss"] for r in history]
    payload = {"head": str(out), "head_version": head.version, "epoch_mean_loss": losses,
               "val_loss": [r.get("val_loss") for r in history]}
    _emit(args, payload, "\n".join(f"epoch {r['epoch']:2d}  loss {r['mean_loss']:.6f}" for r in history)
          + f"\nhead {head.version} -> {out}")
    return 0


def _eval_identities(args, manifest) -> list:
    if args.identities:
        return sorted(args.identities)
    splits = Path(manifest.root or ".") / "splits.json"
    if args.task == FINGERPRINTING and splits.exists():
        return sorted(json.loads(splits.read_text())["test_identities"])
    return manifest.identities()


def cmd_eval(args) -> int:
    root = data_dir() / "corpus"
    default = root / ("manifest.jsonl" if args.task == SPOOF_DETECTION else "test.jsonl")
    manifest = load_manifest(args.manifest or default)
    encoder, head = _encoder(args), _head(args)
    identities = _eval_identities(args, manifest)
    policy = args.policy or DEFAULT_POLICY[args.task]
    profiles = {}
    for i in identities:
        p = Path(args.profiles) / f"{i}.json" if args.profiles else None
        if p is not None and p.exists():
            profiles[i] = load_profile(p)
        else:
            profiles[i] = enroll_from_manifest(manifest, i, policy, encoder, head, args.seconds,
                                               [args.seed, *i.encode()])
    result = evaluate_task(profiles, manifest, args.task, encoder, head, identities, args.include_other_targets,
                           config={"run": _run_config(args), "policy": policy})
    out = Path(args.out) if args.out else data_dir() / "reports" / args.task
    path = emit_report(result, out)
    payload = {"report": str(path), "task": args.task, "mean_auc": result.mean_auc,
               "pooled_auc": None if result.pooled is None else result.pooled.auc,
               "operating_threshold": result.operating_threshold, "degenerate": sorted(result.failures)}
    lines = [f"{i}: auc {c.auc:.4f} eer {c.eer:.4f}" for i, c in sorted(result.per_identity.items())]
    lines += [f"{i}: degenerate ({msg})" for i, msg in sorted(result.failures.items())]
    lines.append(f"mean auc {result.mean_auc:.4f}  pooled auc {payload['pooled_auc']:.4f}  -> {path}")
    _emit(args, payload, "\n".join(lines))
    return 0


def _read_curve_csv(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, 1], rows[:, 2]


class _CsvCurve:
    def __init__(self, scope, fpr, tpr, auc):
        self.scope, self.fpr, self.tpr, self.auc = scope, fpr, tpr, auc


def cmd_report(args) -> int:
    """Summarize one or more report directories; optionally overlay pooled ROCs."""
    summaries, curves = [], []
    for d in args.reports:
        d = Path(d)
        p = d / "report.json" if d.is_dir() else d
        if not p.exists():
            raise MissingArtifactError(f"report {p} not found")
        rep = json.loads(p.read_text())
        summaries.append({"report": str(p), "task": rep["task"], "mean_auc": rep["mean_auc"],
                          "pooled_auc": (rep.get("pooled") or {}).get("auc"),
                          "operating_threshold": rep.get("operating_threshold"),
                          "per_identity": {k: v["auc"] for k, v in rep["per_identity"].items()}})
        csv_path = p.parent / f"roc_{POOLED}.csv"
        if csv_path.exists():
            fpr, tpr = _read_curve_csv(csv_path)
            curves.append(_CsvCurve(p.parent.name, fpr, tpr, summaries[-1]["pooled_auc"]))
    if args.svg:
        if not curves:
            raise MissingArtifactError("no pooled ROC CSV files to plot")
        Path(args.svg).write_text(roc_svg(curves, title="pooled ROC"))
    lines = []
    for s in summaries:
        lines.append(f"{s['report']}: {s['task']} mean auc {s['mean_auc']:.4f} pooled auc {s['pooled_auc']:.4f}")
        lines += [f"  {k}: {v:.4f}" for k, v in sorted(s["per_identity"].items())]
    _emit(args, {"reports": summaries}, "\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# parser


GLOBAL_OPTIONS = ("seed", "config", "json", "threads", "verbose")


def _global_options(parser, suppress: bool) -> None:
    """Global flags go on the top parser and again on each subcommand.

    Subcommand copies default to SUPPRESS so they only override the top-level
    value when actually given after the subcommand name.
    """
    def d(v):
        return argparse.SUPPRESS if suppress else v

    parser.add_argument("--seed", type=int, default=d(0), help="master seed (corpus, splits, enrollment, training)")
    parser.add_argument("--config", type=Path, default=d(None), help="JSON file of option defaults (flags override it)")
    parser.add_argument("--json", action="store_true", default=d(False), help="print one-line JSON instead of text")
    parser.add_argument("--threads", type=int, default=d(1), help="worker processes for parallel stages")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_options(common, suppress=True)

    encoder = _Parser(add_help=False)
    encoder.add_argument("--encoder-seed", type=int, default=0, help="seed of the base projection")
    encoder.add_argument("--embeddings", type=Path, help="NDJSON of precomputed embeddings to use instead")

    decision = _Parser(add_help=False)
    decision.add_argument("--threshold", type=float, help="decision threshold on cosine score")
    decision.add_argument("--report", type=Path, help="take the operating threshold from this report")

    parser = _Parser(prog="voicefp", description=__doc__.split("\n")[0])
    _global_options(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", parents=[common], help="synthesize corpus, manifest and splits")
    p.add_argument("--identities", type=int, default=16)
    p.add_argument("--clips-per-pair", type=int, default=6)
    p.add_argument("--real-per-identity", type=int, default=36)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--jitter-factor", type=float, default=SynthParams.synthetic_jitter_factor)
    p.add_argument("--formant-perturbation", type=float, default=SynthParams.formant_perturbation)
    p.add_argument("--test-identities", type=int, default=4, help="0 skips the split")
    p.add_argument("--val-fraction", type=float, default=0.05)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("enroll", parents=[common, encoder], help="build an identity profile")
    p.add_argument("--identity", required=True)
    p.add_argument("--policy", choices=POLICIES, default=REAL_ENROLLMENT)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--clips", nargs="+", type=Path, help="WAV files to enroll instead of manifest entries")
    p.add_argument("--seconds", type=float, default=120.0, help="enrollment audio to select from the manifest")
    p.add_argument("--head", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("detect", parents=[common, encoder, decision], help="real-vs-synthetic check of a clip")
    p.add_argument("--profile", type=Path, required=True)
    p.add_argument("--clip", type=Path, required=True)
    p.add_argument("--head", type=Path)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train-head", parents=[common, encoder], help="fine-tune the projection head")
    p.add_argument("--manifest", type=Path, help="training manifest (default: corpus/train.jsonl)")
    p.add_argument("--val", type=Path)
    p.add_argument("--epochs", type=int, default=AamConfig.epochs)
    p.add_argument("--lr", type=float, default=AamConfig.learning_rate)
    p.add_argument("--margin", type=float, default=AamConfig.margin_m)
    p.add_argument("--scale", type=float, default=AamConfig.scale_s)
    p.add_argument("--batch-size", type=int, default=AamConfig.batch_size)
    p.add_argument("--out", type=Path)
    p.add_argument("--log", type=Path)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("fingerprint", parents=[common, encoder, decision], help="authorized-driver check")
    p.add_argument("--profile", type=Path, required=True)
    p.add_argument("--clip", type=Path, required=True)
    p.add_argument("--head", type=Path, required=True)
    p.set_defaults(func=cmd_fingerprint)

    p = sub.add_parser("eval", parents=[common, encoder], help="ROC evaluation over a manifest")
    p.add_argument("--task", choices=TASKS, default=SPOOF_DETECTION)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--head", type=Path)
    p.add_argument("--identities", nargs="+")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--profiles", type=Path, help="directory of <identity>.json profiles to reuse")
    p.add_argument("--seconds", type=float, default=120.0)
    p.add_argument("--include-other-targets", action="store_true")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="summarize report directories")
    p.add_argument("reports", nargs="+", type=Path)
    p.add_argument("--svg", type=Path, help="overlay the pooled ROC curves into one SVG")
    p.set_defaults(func=cmd_report)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        if not args.config.exists():
            raise MissingArtifactError(f"config file {args.config} not found")
        overlay = json.loads(args.config.read_text())
        if not isinstance(overlay, dict):
            raise ConfigurationError("config file must hold a JSON object")
        overlay = {k.replace("-", "_"): v for k, v in overlay.items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(overlay) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys for {args.command}: {unknown}")
        parser.set_defaults(**{k: v for k, v in overlay.items() if k in GLOBAL_OPTIONS})
        sub.set_defaults(**{k: v for k, v in overlay.items() if k not in GLOBAL_OPTIONS})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except VoiceFPError as exc:
        print(f"voicefp: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"voicefp: I/O error: {exc}", file=sys.stderr)
        return MissingArtifactError.exit_code


if __name__ == "__main__":
    sys.exit(main())
