"""End-to-end experiments over a generated corpus.

Three analyses share one corpus and one cached encoder:

* spoof detection -- every identity enrolled from ~2 min of its real clips,
  scored against its held-out real clips and all synthetic clips in its voice;
* fingerprinting -- held-out identities enrolled from clips they drove
  (mixed-driver policy), scored with the base encoder and again with a head
  trained on the remaining identities;
* self-only confusion check -- enrollment restricted to self-reenactments,
  base encoder, to show how timbre dominates an untrained voiceprint.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .corpus import (
    REAL,
    SYNTHETIC,
    CorpusConfig,
    Manifest,
    SynthParams,
    generate_corpus,
    load_clip,
    make_splits,
    sample_identities,
)
from .embedder import BaseEncoderConfig, CachedEncoder, cosine_similarity, embed_clip, save_head
from .errors import ConfigurationError, EnrollmentEmptyError
from .evaluation import TaskResult, emit_report, evaluate_task
from .forensics import (
    FINGERPRINTING,
    MIXED_DRIVER,
    REAL_ENROLLMENT,
    SELF_ONLY,
    SPOOF_DETECTION,
    enroll,
    select_enrollment,
)
from .trainer import AamConfig, train_head

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig = CorpusConfig()
    aam: AamConfig = AamConfig()
    encoder_seed: int = 0
    n_test_identities: int = 4
    val_fraction: float = 0.05
    enrollment_seconds: float = 120.0
    self_only_clips: int = 3
    include_other_targets: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Inverse of :meth:`to_dict`; missing keys keep their defaults."""
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment settings {sorted(unknown)}")
        corpus = dict(d.pop("corpus", {}) or {})
        synth = SynthParams(**(corpus.pop("synth", {}) or {}))
        return cls(corpus=CorpusConfig(**corpus, synth=synth), aam=AamConfig(**(d.pop("aam", {}) or {})), **d)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, corpus=replace(self.corpus, seed=seed), aam=replace(self.aam, seed=seed))


# ---------------------------------------------------------------------------
# enrollment helpers


def enrollment_candidates(manifest: Manifest, identity: str, policy: str) -> list:
    """Entries that ``policy`` allows to enroll ``identity``."""
    def ok(e):
        lab = e.label
        if policy == REAL_ENROLLMENT:
            return lab.authenticity == REAL and lab.driver == identity
        if policy == MIXED_DRIVER:
            return lab.authenticity == SYNTHETIC and lab.driver == identity
        if policy == SELF_ONLY:
            return lab.is_self_reenactment and lab.driver == identity
        raise ConfigurationError(f"unknown enrollment policy {policy!r}")

    return sorted((e for e in manifest.entries if ok(e)), key=lambda e: e.clip_id)


def enroll_from_manifest(manifest: Manifest, identity: str, policy: str, encoder, head=None,
                         seconds: float = 120.0, seed=0, max_clips: int | None = None):
    """Pick enrollment clips by seeded shuffle and build the profile."""
    pool = enrollment_candidates(manifest, identity, policy)
    chosen = select_enrollment(pool, seconds, seed)
    if max_clips is not None:
        chosen = chosen[:max_clips]
    if not chosen:
        raise EnrollmentEmptyError(f"no {policy} clips for {identity}")
    clips = [load_clip(manifest, e) for e in chosen]
    return enroll(identity, clips, policy, encoder, head, [e.label for e in chosen])


def _identity_seed(seed: int, identity: str, salt: int) -> list:
    return [seed, salt, *identity.encode()]


# ---------------------------------------------------------------------------
# analyses


def spoof_detection(manifest: Manifest, encoder, cfg: ExperimentConfig, head=None) -> TaskResult:
    """Real-enrollment profiles for every identity; real vs synthetic trials."""
    seed = cfg.corpus.seed
    profiles = {
        i: enroll_from_manifest(manifest, i, REAL_ENROLLMENT, encoder, head, cfg.enrollment_seconds,
                                _identity_seed(seed, i, 1))
        for i in manifest.identities()
    }
    return evaluate_task(profiles, manifest, SPOOF_DETECTION, encoder, head,
                         config={"experiment": cfg.to_dict(), "policy": REAL_ENROLLMENT})


def fingerprinting(test: Manifest, identities, encoder, cfg: ExperimentConfig, head=None) -> TaskResult:
    """Mixed-driver profiles for ``identities``; driver vs other-driver trials."""
    seed = cfg.corpus.seed
    profiles = {
        i: enroll_from_manifest(test, i, MIXED_DRIVER, encoder, head, cfg.enrollment_seconds,
                                _identity_seed(seed, i, 2))
        for i in identities
    }
    return evaluate_task(profiles, test, FINGERPRINTING, encoder, head, identities, cfg.include_other_targets,
                         config={"experiment": cfg.to_dict(), "policy": MIXED_DRIVER})


def self_only_check(manifest: Manifest, encoder, cfg: ExperimentConfig) -> dict:
    """Self-reenactment-only enrollment with the base encoder.

    For each identity: mean score of held-out self-reenactments, mean score of
    cross-reenactments it drove, and how many clips driven by others toward
    its voice reach the per-identity EER threshold.
    """
    seed = cfg.corpus.seed
    seconds = cfg.self_only_clips * cfg.corpus.duration_s
    profiles = {
        i: enroll_from_manifest(manifest, i, SELF_ONLY, encoder, None, seconds, _identity_seed(seed, i, 3),
                                max_clips=cfg.self_only_clips)
        for i in manifest.identities()
    }
    result = evaluate_task(profiles, manifest, FINGERPRINTING, encoder, None,
                           config={"experiment": cfg.to_dict(), "policy": SELF_ONLY})
    kinds = {e.clip_id: e.label for e in manifest.entries}
    per_identity = {}
    n_above = n_others = n_lower = 0
    for claimed, curve in sorted(result.per_identity.items()):
        trials = [t for t in result.trials if t.claimed == claimed]
        self_scores = [t.score for t in trials if kinds[t.clip_id].target == claimed and t.positive]
        cross_scores = [t.score for t in trials if kinds[t.clip_id].target != claimed and t.positive]
        others = [t.score for t in trials if not t.positive]
        above = sum(s >= curve.eer_threshold for s in others)
        lower = bool(np.mean(cross_scores) < np.mean(self_scores))
        per_identity[claimed] = {
            "mean_self_score": float(np.mean(self_scores)),
            "mean_cross_score": float(np.mean(cross_scores)),
            "cross_lower_than_self": lower,
            "eer_threshold": curve.eer_threshold,
            "others_above_threshold": int(above),
            "others_total": len(others),
            "auc": curve.auc,
        }
        n_above += above
        n_others += len(others)
        n_lower += lower
    n = len(per_identity)
    return {
        "policy": SELF_ONLY,
        "clips_per_profile": cfg.self_only_clips,
        "fraction_cross_lower": n_lower / n if n else float("nan"),
        "fraction_others_above_threshold": n_above / n_others if n_others else float("nan"),
        "per_identity": per_identity,
        "task": result.to_dict(),
    }


# ---------------------------------------------------------------------------
# full run


@dataclass
class ExperimentResult:
    out_dir: Path
    manifest: Manifest
    spoof: TaskResult
    fingerprint_base: TaskResult
    fingerprint_head: TaskResult
    self_only: dict
    history: list
    test_identities: tuple
    timings: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "spoof_mean_auc": self.spoof.mean_auc,
            "fingerprint_base_mean_auc": self.fingerprint_base.mean_auc,
            "fingerprint_head_mean_auc": self.fingerprint_head.mean_auc,
            "fingerprint_gain": self.fingerprint_head.mean_auc - self.fingerprint_base.mean_auc,
            "self_only_fraction_cross_lower": self.self_only["fraction_cross_lower"],
            "self_only_fraction_others_above_threshold": self.self_only["fraction_others_above_threshold"],
            "epoch_mean_loss": [r["mean_loss"] for r in self.history],
            "test_identities": list(self.test_identities),
            "manifest_sha256": self.manifest.digest(),
        }


def run_experiment(out_dir, cfg: ExperimentConfig = ExperimentConfig(), workers: int = 1) -> ExperimentResult:
    """Generate the corpus and run every analysis, writing artifacts under ``out_dir``.

    Layout::

        corpus/manifest.jsonl, corpus/{train,val,test}.jsonl, corpus/clips/
        head.json, train_log.csv
        reports/{spoof,fingerprint_base,fingerprint_head}/report.json (+ ROC csv/svg)
        reports/self_only.json, summary.json
    """
    out = Path(out_dir)
    timings = {}
    t0 = time.perf_counter()
    identities = sample_identities(cfg.corpus.n_identities, cfg.corpus.seed)
    manifest = generate_corpus(identities, out / "corpus", cfg.corpus, workers)
    train, val, test, spec = make_splits(manifest, cfg.n_test_identities, cfg.val_fraction, cfg.corpus.seed)
    for name, m in (("train", train), ("val", val), ("test", test)):
        m.save(out / "corpus" / f"{name}.jsonl")
    timings["generate"] = time.perf_counter() - t0

    encoder = CachedEncoder(BaseEncoderConfig(seed=cfg.encoder_seed))
    reports = out / "reports"

    t = time.perf_counter()
    spoof = spoof_detection(manifest, encoder, cfg)
    emit_report(spoof, reports / "spoof")
    timings["spoof"] = time.perf_counter() - t

    t = time.perf_counter()
    self_only = self_only_check(manifest, encoder, cfg)
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "self_only.json").write_text(json.dumps(self_only, indent=2, sort_keys=True) + "\n")
    timings["self_only"] = time.perf_counter() - t

    t = time.perf_counter()
    test_ids = spec.test_identities
    base_fp = fingerprint_report(test, test_ids, encoder, cfg, None, reports / "fingerprint_base")
    synthetic_train = train.filter(lambda e: e.label.authenticity == SYNTHETIC)
    synthetic_val = val.filter(lambda e: e.label.authenticity == SYNTHETIC)
    head, history = train_head(synthetic_train, cfg.aam, encoder, out / "train_log.csv", synthetic_val)
    save_head(head, out / "head.json")
    head_fp = fingerprint_report(test, test_ids, encoder, cfg, head, reports / "fingerprint_head")
    timings["fingerprint"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0

    result = ExperimentResult(out, manifest, spoof, base_fp, head_fp, self_only, history, test_ids, timings)
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    log.info("experiment finished in %.1f s: %s", timings["total"], result.summary())
    return result


def fingerprint_report(test: Manifest, identities, encoder, cfg: ExperimentConfig, head, report_dir) -> TaskResult:
    result = fingerprinting(test, identities, encoder, cfg, head)
    emit_report(result, report_dir)
    return result


def score_entries(manifest: Manifest, profile, encoder, head=None) -> dict:
    """Cosine score of every entry against ``profile``, keyed by clip id."""
    return {e.clip_id: cosine_similarity(profile.embedding, embed_clip(load_clip(manifest, e), encoder, head))
            for e in manifest.entries}
