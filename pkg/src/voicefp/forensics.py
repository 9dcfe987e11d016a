"""Enrollment profiles, cosine scoring and threshold decisions.

Two tasks share the machinery:

``spoof-detection``
    profile built from verified real speech; a non-match means *synthetic*.
``fingerprinting``
    profile built from synthetic speech driven by the authorized identity;
    a non-match means *unauthorized driver*.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio_io import AudioClip
from .corpus import REAL, SYNTHETIC, ReenactmentLabel
from .embedder import (
    UNIT_NORM_TOL,
    EmbeddingBackend,
    ProjectionHead,
    SpeakerEmbedding,
    cosine_similarity,
    embed_clip,
    head_version_of,
    l2_normalize,
)
from .errors import (
    ConfigurationError,
    CorruptProfileError,
    EnrollmentEmptyError,
    InsufficientAudioError,
    MissingArtifactError,
    PolicyViolationError,
    PreconditionError,
    VersionError,
)
from .features import MIN_DURATION_S

PROFILE_SCHEMA_VERSION = 1

REAL_ENROLLMENT = "real-enrollment"
MIXED_DRIVER = "mixed-driver"
SELF_ONLY = "self-reenactment-only"
POLICIES = (REAL_ENROLLMENT, MIXED_DRIVER, SELF_ONLY)

SPOOF_DETECTION = "spoof-detection"
FINGERPRINTING = "fingerprinting"
TASKS = (SPOOF_DETECTION, FINGERPRINTING)


@dataclass(frozen=True)
class IdentityProfile:
    identity: str
    mean_embedding: np.ndarray
    policy: str
    clip_ids: tuple
    total_enrollment_seconds: float
    head_version: str

    def validate(self) -> "IdentityProfile":
        v = np.asarray(self.mean_embedding)
        if not np.all(np.isfinite(v)) or abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
            raise CorruptProfileError(f"profile {self.identity}: mean embedding is not unit-norm")
        if not self.clip_ids:
            raise CorruptProfileError(f"profile {self.identity}: no enrollment clips recorded")
        if not self.total_enrollment_seconds > 0:
            raise CorruptProfileError(f"profile {self.identity}: non-positive enrollment duration")
        if self.policy not in POLICIES:
            raise CorruptProfileError(f"profile {self.identity}: unknown policy {self.policy!r}")
        return self

    @property
    def embedding(self) -> SpeakerEmbedding:
        return SpeakerEmbedding(self.mean_embedding, self.head_version)


@dataclass(frozen=True)
class Verdict:
    score: float
    threshold: float
    decision: bool
    task: str

    def __post_init__(self):
        if self.decision != (self.score >= self.threshold):
            raise PreconditionError(f"decision {self.decision} inconsistent with score {self.score} / threshold {self.threshold}")

    @property
    def outcome(self) -> str:
        if self.decision:
            return "genuine" if self.task == SPOOF_DETECTION else "authorized"
        return "synthetic" if self.task == SPOOF_DETECTION else "unauthorized driver"


def check_policy(identity: str, policy: str, label: ReenactmentLabel | None) -> None:
    """Raise :class:`PolicyViolationError` if ``label`` may not enroll under ``policy``."""
    if policy not in POLICIES:
        raise PolicyViolationError(f"unknown enrollment policy {policy!r}")
    if label is None:
        if policy != REAL_ENROLLMENT:
            raise PolicyViolationError(f"policy {policy} requires reenactment labels")
        return
    if policy == REAL_ENROLLMENT:
        ok = label.authenticity == REAL and label.driver == identity
    elif policy == MIXED_DRIVER:
        ok = label.authenticity == SYNTHETIC and label.driver == identity
    else:
        ok = label.authenticity == SYNTHETIC and label.driver == identity and label.target == identity
    if not ok:
        raise PolicyViolationError(
            f"clip {label.clip_id or '?'} ({label.driver}->{label.target}, {label.authenticity}) "
            f"cannot enroll {identity} under {policy}"
        )


def mean_direction(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Normalized arithmetic mean; exactly rounded sums make it order-independent."""
    stacked = np.asarray(vectors, dtype=np.float64)
    total = np.array([math.fsum(col) for col in stacked.T])
    return l2_normalize(total / len(stacked))


def enroll(identity: str, clips: Sequence[AudioClip], policy: str, encoder: EmbeddingBackend,
           head: ProjectionHead | None = None, labels: Sequence[ReenactmentLabel] | None = None) -> IdentityProfile:
    """Average the embeddings of ``clips`` into a unit-norm profile."""
    if not clips:
        raise EnrollmentEmptyError(f"no enrollment clips for {identity}")
    if labels is not None and len(labels) != len(clips):
        raise PolicyViolationError("one label per enrollment clip is required")
    for i, clip in enumerate(clips):
        check_policy(identity, policy, None if labels is None else labels[i])
        if clip.duration_s < MIN_DURATION_S:
            raise InsufficientAudioError(f"enrollment clip {clip.source_id} shorter than {MIN_DURATION_S} s")
    vectors = [embed_clip(c, encoder, head).vector for c in clips]
    return IdentityProfile(
        identity=identity,
        mean_embedding=mean_direction(vectors),
        policy=policy,
        clip_ids=tuple(c.source_id for c in clips),
        total_enrollment_seconds=float(sum(c.duration_s for c in clips)),
        head_version=head_version_of(head),
    ).validate()


def score(profile: IdentityProfile, clip: AudioClip, encoder: EmbeddingBackend,
          head: ProjectionHead | None = None) -> float:
    if clip.duration_s < MIN_DURATION_S:
        raise InsufficientAudioError(f"clip {clip.source_id} shorter than {MIN_DURATION_S} s")
    if head_version_of(head) != profile.head_version:
        raise VersionError(f"profile enrolled with {profile.head_version}, scoring with {head_version_of(head)}")
    return cosine_similarity(profile.embedding, embed_clip(clip, encoder, head))


def decide(score: float, threshold: float, task: str) -> Verdict:
    """Match iff ``score >= threshold`` (ties match)."""
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}")
    return Verdict(float(score), float(threshold), bool(score >= threshold), task)


def select_enrollment(entries, seconds: float, seed) -> list:
    """Uniformly shuffled prefix of ``entries`` totalling at least ``seconds``."""
    entries = sorted(entries, key=lambda e: e.clip_id)
    order = np.random.default_rng(seed).permutation(len(entries))
    chosen, total = [], 0.0
    for i in order:
        if total >= seconds:
            break
        chosen.append(entries[i])
        total += entries[i].duration_s
    return chosen


# ---------------------------------------------------------------------------
# profile files


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_profile(profile: IdentityProfile, path) -> None:
    profile.validate()
    emb = "[" + ",".join(_fmt(v) for v in profile.mean_embedding) + "]"
    text = (
        "{"
        f'"schema_version": {PROFILE_SCHEMA_VERSION}, '
        f'"identity": {json.dumps(profile.identity)}, '
        f'"policy": {json.dumps(profile.policy)}, '
        f'"head_version": {json.dumps(profile.head_version)}, '
        f'"D": {len(profile.mean_embedding)}, '
        f'"embedding": {emb}, '
        f'"clip_ids": {json.dumps(list(profile.clip_ids))}, '
        f'"seconds": {_fmt(profile.total_enrollment_seconds)}'
        "}\n"
    )
    Path(path).write_text(text)


def load_profile(path) -> IdentityProfile:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"profile file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptProfileError(f"profile {p} is not valid JSON: {exc}") from None
    if doc.get("schema_version") != PROFILE_SCHEMA_VERSION:
        raise VersionError(f"unsupported profile schema {doc.get('schema_version')!r}")
    emb = np.asarray(doc.get("embedding", []), dtype=np.float64)
    if emb.size != doc.get("D"):
        raise CorruptProfileError(f"profile {p}: embedding length {emb.size} != D={doc.get('D')}")
    return IdentityProfile(
        identity=doc["identity"],
        mean_embedding=emb,
        policy=doc["policy"],
        clip_ids=tuple(doc["clip_ids"]),
        total_enrollment_seconds=float(doc["seconds"]),
        head_version=doc["head_version"],
    ).validate()


@dataclass
class ProfileStore:
    """In-memory profiles keyed by identity."""

    profiles: dict = field(default_factory=dict)

    def add(self, profile: IdentityProfile) -> None:
        self.profiles[profile.identity] = profile.validate()

    def __getitem__(self, identity: str) -> IdentityProfile:
        return self.profiles[identity]

    def __contains__(self, identity: str) -> bool:
        return identity in self.profiles

    def __iter__(self):
        return iter(sorted(self.profiles))
