"""ROC analysis of scored trials and per-identity task evaluation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .corpus import REAL, SYNTHETIC, Manifest, load_clip
from .embedder import cosine_similarity, embed_clip, head_version_of
from .errors import ConfigurationError, DegenerateTrialsError, MissingProfileError, PreconditionError, VersionError
from .forensics import FINGERPRINTING, SPOOF_DETECTION, TASKS

REPORT_SCHEMA_VERSION = 1
POOLED = "pooled"


@dataclass(frozen=True)
class ScoredTrial:
    clip_id: str
    claimed: str
    positive: bool
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise PreconditionError(f"trial {self.clip_id}: non-finite score")


@dataclass
class RocCurve:
    """Step ROC with one point per distinct threshold plus the two anchors."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc_exact: Fraction
    eer: float
    eer_threshold: float
    scope: str = POOLED
    n_pos: int = 0
    n_neg: int = 0

    @property
    def auc(self) -> float:
        return float(self.auc_exact)

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def summary(self) -> dict:
        return {"auc": self.auc, "eer": self.eer, "eer_threshold": self.eer_threshold,
                "n_pos": self.n_pos, "n_neg": self.n_neg, "n_thresholds": len(self.thresholds) - 2}


def roc(trials, scope: str = POOLED) -> RocCurve:
    """ROC over distinct score thresholds, descending; tied scores form one step.

    The trapezoid area under this curve is the Mann-Whitney statistic with
    half credit for ties; it is kept as an exact fraction.
    """
    trials = sorted(trials, key=lambda t: (-t.score, t.clip_id))
    n_pos = sum(t.positive for t in trials)
    n_neg = len(trials) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTrialsError(f"{scope}: need positive and negative trials (got {n_pos}/{n_neg})")

    thresholds, tps, fps = [math.inf], [0], [0]
    tp = fp = 0
    i = 0
    while i < len(trials):
        s = trials[i].score
        while i < len(trials) and trials[i].score == s:
            tp += trials[i].positive
            fp += not trials[i].positive
            i += 1
        thresholds.append(s)
        tps.append(tp)
        fps.append(fp)
    thresholds.append(-math.inf)
    tps.append(n_pos)
    fps.append(n_neg)

    area2 = sum((fps[k] - fps[k - 1]) * (tps[k] + tps[k - 1]) for k in range(1, len(tps)))
    auc = Fraction(area2, 2 * n_pos * n_neg)

    fpr = np.array(fps, dtype=np.float64) / n_neg
    tpr = np.array(tps, dtype=np.float64) / n_pos
    eer, eer_threshold = _eer(fpr, tpr, thresholds)
    return RocCurve(np.array(thresholds), fpr, tpr, auc, eer, eer_threshold, scope, n_pos, n_neg)


def _eer(fpr, tpr, thresholds):
    """Linear interpolation of the crossing fpr == 1 - tpr.

    The reported threshold is that of the curve point closest to the
    crossing (ties: the higher threshold); anchors map to the nearest score.
    """
    g = fpr + tpr - 1.0
    k = int(np.argmax(g >= 0.0))
    if g[k] == 0.0 or k == 0:
        eer = float(fpr[k])
        best = k
    else:
        lam = -g[k - 1] / (g[k] - g[k - 1])
        eer = float(fpr[k - 1] + lam * (fpr[k] - fpr[k - 1]))
        gap_prev = abs(fpr[k - 1] - (1.0 - tpr[k - 1]))
        gap_next = abs(fpr[k] - (1.0 - tpr[k]))
        best = k - 1 if gap_prev <= gap_next else k
    best = min(max(best, 1), len(thresholds) - 2)
    return eer, float(thresholds[best])


def trapezoid_auc(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


# ---------------------------------------------------------------------------
# task evaluation


def build_trials(manifest: Manifest, claimed: str, task: str, exclude=(), include_other_targets: bool = False):
    """``(entry, positive)`` pairs for one claimed identity.

    spoof-detection: real clips of ``claimed`` vs. synthetic clips in its voice.
    fingerprinting: synthetic clips driven by ``claimed`` vs. synthetic clips in
    its voice driven by someone else (optionally also others -> others).
    """
    exclude = set(exclude)
    out = []
    for e in sorted(manifest.entries, key=lambda e: e.clip_id):
        if e.clip_id in exclude:
            continue
        lab = e.label
        if task == SPOOF_DETECTION:
            if lab.authenticity == REAL and lab.driver == claimed:
                out.append((e, True))
            elif lab.authenticity == SYNTHETIC and lab.target == claimed:
                out.append((e, False))
        elif task == FINGERPRINTING:
            if lab.authenticity != SYNTHETIC:
                continue
            if lab.driver == claimed:
                out.append((e, True))
            elif lab.target == claimed or include_other_targets:
                out.append((e, False))
        else:
            raise ConfigurationError(f"unknown task {task!r}")
    return out


@dataclass
class TaskResult:
    task: str
    per_identity: dict
    pooled: RocCurve | None
    trials: list
    failures: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def mean_auc(self) -> float:
        aucs = [c.auc for c in self.per_identity.values()]
        return float(np.mean(aucs)) if aucs else float("nan")

    @property
    def operating_threshold(self) -> float | None:
        return None if self.pooled is None else self.pooled.eer_threshold

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "mean_auc": self.mean_auc,
            "pooled": None if self.pooled is None else self.pooled.summary(),
            "operating_threshold": self.operating_threshold,
            "per_identity": {k: self.per_identity[k].summary() for k in sorted(self.per_identity)},
            "degenerate": dict(sorted(self.failures.items())),
            "config": self.config,
        }


def evaluate_task(profiles, manifest: Manifest, task: str, encoder, head=None, identities=None,
                  include_other_targets: bool = False, config: dict | None = None) -> TaskResult:
    """Score trials for each claimed identity against its profile and build ROCs.

    ``profiles`` maps identity -> IdentityProfile. Enrollment clips recorded in
    a profile are never used as trials. An identity whose trial set is
    single-class is reported under ``failures`` without affecting the others.
    """
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}")
    identities = sorted(identities if identities is not None else manifest.identities())
    missing = [i for i in identities if i not in profiles]
    if missing:
        raise MissingProfileError(f"no profile for identities {missing}")
    version = head_version_of(head)
    per_identity, failures, all_trials = {}, {}, []
    for claimed in identities:
        profile = profiles[claimed]
        if profile.head_version != version:
            raise VersionError(f"profile {claimed} enrolled with {profile.head_version}, evaluating with {version}")
        trials = []
        for entry, positive in build_trials(manifest, claimed, task, profile.clip_ids, include_other_targets):
            emb = embed_clip(load_clip(manifest, entry), encoder, head)
            trials.append(ScoredTrial(entry.clip_id, claimed, positive, cosine_similarity(profile.embedding, emb)))
        try:
            per_identity[claimed] = roc(trials, claimed)
        except DegenerateTrialsError as exc:
            failures[claimed] = str(exc)
            continue
        all_trials.extend(trials)
    pooled = roc(all_trials, POOLED) if per_identity else None
    cfg = {"head_version": version, "include_other_targets": include_other_targets, **(config or {})}
    return TaskResult(task, per_identity, pooled, all_trials, failures, cfg)


# ---------------------------------------------------------------------------
# report files


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def roc_svg(curves, size: int = 640, title: str = "") -> str:
    """SVG with one polyline per curve over the unit square and a chance diagonal."""
    pad = 40
    span = size - 2 * pad

    def xy(f, t):
        return f"{pad + f * span:.3f},{pad + (1.0 - t) * span:.3f}"

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + span}" x2="{pad + span}" y2="{pad}" stroke="gray" stroke-dasharray="4 4"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="14">false positive rate</text>',
        f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 14 {size / 2})">true positive rate</text>',
    ]
    if title:
        parts.append(f'<text x="{size / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>')
    for i, c in enumerate(curves):
        pts = " ".join(xy(f, t) for f, t in zip(c.fpr, c.tpr))
        color = palette[i % len(palette)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}">'
                     f"<title>{escape(c.scope)} AUC={c.auc:.4f}</title></polyline>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(result: TaskResult, out_dir) -> Path:
    """Write report.json plus roc_<scope>.csv / .svg for every curve."""
    if result.pooled is None and not result.per_identity:
        detail = "; ".join(f"{i}: {m}" for i, m in sorted(result.failures.items()))
        raise DegenerateTrialsError(f"every trial set is degenerate ({detail})" if detail else "no trials to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves = dict(result.per_identity)
    if result.pooled is not None:
        curves[POOLED] = result.pooled
    for scope, curve in curves.items():
        write_roc_csv(curve, out / f"roc_{scope}.csv")
        (out / f"roc_{scope}.svg").write_text(roc_svg([curve], title=f"{result.task}: {scope}"))
    path = out / "report.json"
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
