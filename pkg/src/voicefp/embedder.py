"""Stats-pooling voiceprint encoder, trainable projection head, cosine scoring.

The base encoder pools per-channel mean and standard deviation over time and
applies a fixed seeded random projection. Anything implementing
``base_embedding(clip) -> unit vector`` (see :class:`EmbeddingBackend`) can
stand in for it, e.g. :class:`ExternalEmbeddings` loaded from a file of
precomputed voiceprints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .audio_io import AudioClip
from .errors import (
    ConfigurationError,
    DegenerateEmbeddingError,
    DimensionError,
    InsufficientAudioError,
    MissingArtifactError,
    PreconditionError,
    VersionError,
)
from .features import N_CHANNELS, FeatureMatrix, extract_features

EMBEDDING_DIM = 192
HEAD_FILE_VERSION = 1
BASE_VERSION = "base"
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class SpeakerEmbedding:
    vector: np.ndarray
    head_version: str = BASE_VERSION

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise DegenerateEmbeddingError("embedding has non-finite entries")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
            raise PreconditionError(f"embedding norm {np.linalg.norm(v)} is not 1")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.size


def l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateEmbeddingError("cannot normalize a zero vector")
    return v / norm


@runtime_checkable
class EmbeddingBackend(Protocol):
    dim: int

    def base_embedding(self, clip: AudioClip) -> np.ndarray:
        """Unit-norm base voiceprint for ``clip``."""


@dataclass(frozen=True)
class BaseEncoderConfig:
    """Fixed stats-pooling encoder; the projection is a pure function of ``seed``."""

    input_channels: int = N_CHANNELS
    dim: int = EMBEDDING_DIM
    seed: int = 0

    @property
    def pooled_dim(self) -> int:
        return 2 * self.input_channels

    @cached_property
    def projection(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        p = rng.standard_normal((self.pooled_dim, self.dim)) / np.sqrt(self.pooled_dim)
        p.setflags(write=False)
        return p

    def base_embedding(self, clip: AudioClip) -> np.ndarray:
        return embed_base(extract_features(clip), self).vector


def stats_pool(frames: np.ndarray) -> np.ndarray:
    """Concatenated per-channel mean and population standard deviation.

    Statistics are taken on data shifted by the first frame, so a constant
    channel gets a standard deviation of exactly zero.
    """
    ref = frames[:1]
    d = frames - ref
    return np.concatenate([ref[0] + d.mean(axis=0), d.std(axis=0)])


def embed_base(feat: FeatureMatrix, cfg: BaseEncoderConfig) -> SpeakerEmbedding:
    if feat.frames.shape[0] == 0:
        raise InsufficientAudioError("feature matrix has no frames")
    if feat.frames.shape[1] != cfg.input_channels:
        raise DimensionError(f"encoder expects {cfg.input_channels} channels, got {feat.frames.shape[1]}")
    return SpeakerEmbedding(l2_normalize(stats_pool(feat.frames) @ cfg.projection), BASE_VERSION)


@dataclass
class ProjectionHead:
    """``x -> normalize(tanh(W x + b))`` applied on top of the base embedding."""

    weight: np.ndarray
    bias: np.ndarray
    base_seed: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        d = self.bias.size
        if self.weight.shape != (d, d):
            raise DimensionError(f"head weight {self.weight.shape} does not match bias length {d}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ConfigurationError("head parameters must be finite")

    @classmethod
    def identity(cls, dim: int = EMBEDDING_DIM, base_seed: int = 0) -> "ProjectionHead":
        return cls(np.eye(dim), np.zeros(dim), base_seed)

    @property
    def dim(self) -> int:
        return self.bias.size

    @property
    def version(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.weight).tobytes())
        h.update(np.ascontiguousarray(self.bias).tobytes())
        return "head-" + h.hexdigest()[:16]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.weight.copy(), self.bias.copy(), self.base_seed, dict(self.provenance))

    def pre_normalized(self, base: np.ndarray) -> np.ndarray:
        return np.tanh(self.weight @ base + self.bias)

    def apply(self, base: np.ndarray) -> np.ndarray:
        if base.size != self.dim:
            raise DimensionError(f"head is {self.dim}-dimensional, embedding is {base.size}")
        return l2_normalize(self.pre_normalized(base))


def embed(feat: FeatureMatrix, cfg: BaseEncoderConfig, head: ProjectionHead | None = None) -> SpeakerEmbedding:
    base = embed_base(feat, cfg)
    if head is None:
        return base
    return apply_head(base.vector, head)


def apply_head(base: np.ndarray, head: ProjectionHead | None) -> SpeakerEmbedding:
    if head is None:
        return SpeakerEmbedding(base, BASE_VERSION)
    return SpeakerEmbedding(head.apply(np.asarray(base, dtype=np.float64)), head.version)


def head_version_of(head: ProjectionHead | None) -> str:
    return BASE_VERSION if head is None else head.version


def embed_clip(clip: AudioClip, encoder: EmbeddingBackend, head: ProjectionHead | None = None) -> SpeakerEmbedding:
    base = np.asarray(encoder.base_embedding(clip), dtype=np.float64)
    if head is not None and base.size != head.dim:
        raise DimensionError(f"head is {head.dim}-dimensional, encoder emits {base.size}")
    return apply_head(base, head)


def cosine_similarity(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    if a.dim != b.dim:
        raise DimensionError(f"cannot compare {a.dim}-d and {b.dim}-d embeddings")
    # a*b == b*a elementwise and the reduction order is fixed: exactly symmetric
    return float(min(1.0, max(-1.0, np.sum(a.vector * b.vector))))


class CachedEncoder:
    """Memoizes ``base_embedding`` by ``clip.source_id``."""

    def __init__(self, encoder: EmbeddingBackend):
        self.encoder = encoder
        self.dim = encoder.dim
        self._cache: dict[str, np.ndarray] = {}

    def base_embedding(self, clip: AudioClip) -> np.ndarray:
        key = clip.source_id
        if not key:
            return self.encoder.base_embedding(clip)
        if key not in self._cache:
            self._cache[key] = self.encoder.base_embedding(clip)
        return self._cache[key]


class ExternalEmbeddings:
    """Backend serving precomputed voiceprints keyed by clip id.

    File format: newline-delimited JSON, one ``{"clip_id": str, "vector": [D floats]}``
    per line. Vectors are L2-normalized on load.
    """

    def __init__(self, table: dict[str, np.ndarray]):
        dims = {v.size for v in table.values()}
        if len(dims) > 1:
            raise DimensionError(f"mixed embedding dimensions {sorted(dims)}")
        self.dim = dims.pop() if dims else EMBEDDING_DIM
        self.table = {k: l2_normalize(np.asarray(v, dtype=np.float64)) for k, v in table.items()}

    @classmethod
    def load(cls, path) -> "ExternalEmbeddings":
        table = {}
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    table[rec["clip_id"]] = np.asarray(rec["vector"], dtype=np.float64)
        return cls(table)

    def base_embedding(self, clip: AudioClip) -> np.ndarray:
        try:
            return self.table[clip.source_id]
        except KeyError:
            raise MissingArtifactError(f"no external embedding for clip {clip.source_id!r}") from None


def _fmt_array(a: np.ndarray) -> str:
    return "[" + ",".join(format(float(v), ".17g") for v in np.ravel(a)) + "]"


def save_head(head: ProjectionHead, path) -> None:
    """Write the versioned JSON head file; floats carry 17 significant digits."""
    meta = json.dumps(head.provenance, sort_keys=True)
    text = (
        "{"
        f'"version": {HEAD_FILE_VERSION}, '
        f'"D": {head.dim}, '
        f'"seed_of_base": {int(head.base_seed)}, '
        f'"head_version": "{head.version}", '
        f'"provenance": {meta}, '
        f'"weight": {_fmt_array(head.weight)}, '
        f'"bias": {_fmt_array(head.bias)}'
        "}\n"
    )
    Path(path).write_text(text)


def load_head(path) -> ProjectionHead:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"head file {p} not found")
    doc = json.loads(p.read_text())
    if doc.get("version") != HEAD_FILE_VERSION:
        raise VersionError(f"unsupported head file version {doc.get('version')!r}")
    d = int(doc["D"])
    weight = np.asarray(doc["weight"], dtype=np.float64)
    if weight.size != d * d:
        raise DimensionError(f"head weight has {weight.size} entries, expected {d * d}")
    return ProjectionHead(weight.reshape(d, d), doc["bias"], int(doc["seed_of_base"]), doc.get("provenance", {}))
