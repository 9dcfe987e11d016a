"""Reenactment simulator and dataset tooling.

Voices are produced by a small source-filter synthesizer whose parameters are
split in two groups:

* timbre (formants, bandwidths, spectral tilt, F0 register) comes from the
  *target* identity -- how the voice sounds;
* mannerism (syllable timing, pauses, pitch/energy modulation, jitter) comes
  from the *driver* identity -- how the person talks.

A synthetic clip ``i -> j`` therefore sounds like ``j`` and talks like ``i``.
Synthetic clips additionally carry two clone artifacts: jitter is scaled down
(over-smoothing) and formants are perturbed per clip (imperfect cloning).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .audio_io import CANONICAL_RATE, AudioClip, read_wav, write_wav
from .errors import ConfigurationError, InsufficientIdentitiesError, VersionError

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
REAL = "real"
SYNTHETIC = "synthetic"
PAUSE_GAMMA_SHAPE = 32.0

# uniform sampling ranges; the validity envelope in ``IdentityFactors.validate`` is wider
TIMBRE_RANGES = {
    "f1": (300.0, 800.0),
    "f2": (900.0, 2200.0),
    "f3": (2400.0, 3400.0),
    "b1": (40.0, 80.0),
    "b2": (50.0, 110.0),
    "b3": (70.0, 150.0),
    "tilt_db_per_octave": (-9.0, -3.0),
    "f0_register_hz": (90.0, 250.0),
}
MANNERISM_RANGES = {
    "syllable_rate_hz": (2.5, 7.5),
    "pause_probability": (0.05, 0.6),
    "pause_mean_s": (0.08, 0.4),
    "f0_mod_depth": (0.02, 0.25),
    "f0_mod_rate_hz": (1.5, 6.0),
    "energy_mod_depth": (0.05, 0.8),
    "jitter_sigma": (0.02, 0.05),
}


@dataclass(frozen=True)
class Timbre:
    formants_hz: tuple
    bandwidths_hz: tuple
    tilt_db_per_octave: float
    f0_register_hz: float


@dataclass(frozen=True)
class Mannerism:
    syllable_rate_hz: float
    pause_probability: float
    pause_mean_s: float
    f0_mod_depth: float
    f0_mod_rate_hz: float
    energy_mod_depth: float
    jitter_sigma: float


@dataclass(frozen=True)
class IdentityFactors:
    identity: str
    timbre: Timbre
    mannerism: Mannerism

    def validate(self) -> "IdentityFactors":
        f1, f2, f3 = self.timbre.formants_hz
        if not 200.0 <= f1 < f2 < f3 <= 3500.0:
            raise ConfigurationError(f"{self.identity}: formants must satisfy 200 <= F1 < F2 < F3 <= 3500")
        if not 80.0 <= self.timbre.f0_register_hz <= 300.0:
            raise ConfigurationError(f"{self.identity}: F0 register outside 80-300 Hz")
        m = self.mannerism
        if not 2.0 <= m.syllable_rate_hz <= 8.0:
            raise ConfigurationError(f"{self.identity}: syllable rate outside 2-8 Hz")
        if not 0.0 <= m.pause_probability <= 1.0:
            raise ConfigurationError(f"{self.identity}: pause probability outside [0, 1]")
        if not 0.0 <= m.jitter_sigma <= 0.05:
            raise ConfigurationError(f"{self.identity}: jitter sigma outside [0, 0.05]")
        return self

    def normalized_vector(self) -> np.ndarray:
        """All factors mapped to [0, 1] by their sampling ranges."""
        t, m = self.timbre, self.mannerism
        raw = {
            "f1": t.formants_hz[0], "f2": t.formants_hz[1], "f3": t.formants_hz[2],
            "b1": t.bandwidths_hz[0], "b2": t.bandwidths_hz[1], "b3": t.bandwidths_hz[2],
            "tilt_db_per_octave": t.tilt_db_per_octave, "f0_register_hz": t.f0_register_hz,
            **asdict(m),
        }
        ranges = {**TIMBRE_RANGES, **MANNERISM_RANGES}
        return np.array([(raw[k] - lo) / (hi - lo) for k, (lo, hi) in ranges.items()])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IdentityFactors":
        t = d["timbre"]
        timbre = Timbre(tuple(t["formants_hz"]), tuple(t["bandwidths_hz"]), t["tilt_db_per_octave"], t["f0_register_hz"])
        return cls(d["identity"], timbre, Mannerism(**d["mannerism"]))


def identity_name(i: int) -> str:
    return f"id{i:02d}"


def sample_identities(n: int, seed: int) -> list[IdentityFactors]:
    """Draw ``n`` identities from the uniform factor ranges, deterministically."""
    if n < 2:
        raise InsufficientIdentitiesError(f"need at least 2 identities, got {n}")
    rng = np.random.default_rng([seed, 0x1D])
    out = []
    for i in range(n):
        t = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in TIMBRE_RANGES.items()}
        m = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in MANNERISM_RANGES.items()}
        timbre = Timbre((t["f1"], t["f2"], t["f3"]), (t["b1"], t["b2"], t["b3"]),
                        t["tilt_db_per_octave"], t["f0_register_hz"])
        out.append(IdentityFactors(identity_name(i), timbre, Mannerism(**m)).validate())
    return out


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthParams:
    sample_rate_hz: int = CANONICAL_RATE
    synthetic_jitter_factor: float = 0.2
    formant_perturbation: float = 0.02
    onset_s: float = 0.075
    onset_level: float = 0.03
    aspiration_level: float = 0.03
    noise_floor: float = 2e-3
    peak: float = 0.9


@dataclass(frozen=True)
class ReenactmentLabel:
    driver: str
    target: str
    authenticity: str
    clip_id: str = ""

    def __post_init__(self):
        if self.authenticity not in (REAL, SYNTHETIC):
            raise ConfigurationError(f"authenticity must be 'real' or 'synthetic', got {self.authenticity!r}")
        if self.authenticity == REAL and self.driver != self.target:
            raise ConfigurationError("a real clip must have driver == target")

    @property
    def is_self_reenactment(self) -> bool:
        return self.authenticity == SYNTHETIC and self.driver == self.target

    @property
    def is_cross_reenactment(self) -> bool:
        return self.authenticity == SYNTHETIC and self.driver != self.target


def _syllable_plan(m: Mannerism, duration_s: float, rng: np.random.Generator, phase: float = 0.0):
    """List of (start_s, end_s, gain) syllables; pauses fall in between.

    Pauses use systematic sampling: a running accumulator with a uniform
    random phase gains ``pause_probability`` per boundary and a pause is
    inserted whenever it wraps. Every boundary still pauses with marginal
    probability ``p``, but the pause count per clip has minimal variance.
    Syllable loudness follows the pitch contour (same rate and ``phase``):
    louder where the voice is higher, as in stressed speech.
    """
    syllables = []
    t = rng.uniform(0.02, 0.1)
    acc = rng.random()
    while t < duration_s:
        length = rng.lognormal(0.0, 0.1) / m.syllable_rate_hz
        gain = math.exp(m.energy_mod_depth * math.sin(2.0 * math.pi * m.f0_mod_rate_hz * t + phase))
        syllables.append((t, min(t + length, duration_s), gain))
        t += length
        acc += m.pause_probability
        if acc >= 1.0:
            acc -= 1.0
            t += rng.gamma(PAUSE_GAMMA_SHAPE, m.pause_mean_s / PAUSE_GAMMA_SHAPE)
    return syllables


def _resonator(x, freq, bw, sr):
    c = -math.exp(-2.0 * math.pi * bw / sr)
    b = 2.0 * math.exp(-math.pi * bw / sr) * math.cos(2.0 * math.pi * freq / sr)
    a = 1.0 - b - c
    return lfilter([a], [1.0, -b, -c], x)


def _apply_tilt(x, tilt_db_per_octave, sr):
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1.0 / sr)
    spec *= (np.maximum(f, 100.0) / 100.0) ** (tilt_db_per_octave / (20.0 * math.log10(2.0)))
    return np.fft.irfft(spec, x.size)


def render(driver: IdentityFactors, target: IdentityFactors, duration_s: float, synthetic: bool,
           seed, params: SynthParams = SynthParams()):
    """Source-filter rendering. Returns ``(samples, formants_used_hz)``."""
    rng = np.random.default_rng(seed)
    sr = params.sample_rate_hz
    n = int(round(duration_s * sr))
    m, tb = driver.mannerism, target.timbre

    formants = np.array(tb.formants_hz, dtype=np.float64)
    if synthetic:
        formants = np.sort(formants * (1.0 + params.formant_perturbation * rng.standard_normal(3)))
    jitter = m.jitter_sigma * (params.synthetic_jitter_factor if synthetic else 1.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)

    def f0_at(t):
        return tb.f0_register_hz * (1.0 + m.f0_mod_depth * math.sin(2.0 * math.pi * m.f0_mod_rate_hz * t + phase))

    voiced = np.zeros(n)
    envelope = np.zeros(n)
    unvoiced = np.zeros(n)
    for start, end, gain in _syllable_plan(m, duration_s, rng, phase):
        onset_end = min(start + params.onset_s, end)
        i0, i1, i2 = int(start * sr), int(onset_end * sr), int(end * sr)
        if i1 > i0:
            burst = np.hanning(i1 - i0 + 2)[1:-1]
            unvoiced[i0:i1] += params.onset_level * gain * burst * rng.standard_normal(i1 - i0)
        if i2 - i1 < 4:
            continue
        envelope[i1:i2] = gain * np.sin(np.pi * (np.arange(i2 - i1) + 0.5) / (i2 - i1))
        t = onset_end + rng.uniform(0.0, 1.0 / f0_at(onset_end))
        while t < end:
            pos = t * sr
            k = int(pos)
            if k + 1 >= n:
                break
            frac = pos - k
            voiced[k] += 1.0 - frac
            voiced[k + 1] += frac
            t += (1.0 + jitter * rng.standard_normal()) / f0_at(t)
    excitation = voiced * envelope
    excitation += params.aspiration_level * envelope * rng.standard_normal(n)

    y = excitation
    impulse = np.zeros(2048)
    impulse[0] = 1.0
    for f, bw in zip(formants, tb.bandwidths_hz):
        y = _resonator(y, f, bw, sr)
        impulse = _resonator(impulse, f, bw, sr)
    y = _apply_tilt(y, tb.tilt_db_per_octave, sr)
    impulse = _apply_tilt(impulse, tb.tilt_db_per_octave, sr)
    # onset noise is not glottal: it skips the resonances (a narrow F1 would
    # make it quasi-periodic) and the source tilt (which would make it
    # low-passed), but keeps the energy it would have had through both
    y = y + unvoiced * np.sqrt(np.sum(impulse ** 2))
    peak = np.max(np.abs(y))
    if peak > 0:
        y = y / peak
    y = y + params.noise_floor * rng.standard_normal(n)
    y *= params.peak / np.max(np.abs(y))
    return y, tuple(float(f) for f in formants)


def synthesize_clip(driver: IdentityFactors, target: IdentityFactors, duration_s: float,
                    authenticity: str, seed, params: SynthParams = SynthParams(), clip_id: str = ""):
    """Render one clip of ``target``'s voice with ``driver``'s mannerism."""
    if not 2.0 <= duration_s <= 10.0:
        raise ConfigurationError(f"clip duration must be within 2-10 s, got {duration_s}")
    label = ReenactmentLabel(driver.identity, target.identity, authenticity, clip_id)
    driver.validate()
    target.validate()
    samples, _ = render(driver, target, duration_s, authenticity == SYNTHETIC, seed, params)
    return AudioClip(samples, params.sample_rate_hz, clip_id or f"{driver.identity}->{target.identity}"), label


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    label: ReenactmentLabel
    duration_s: float
    sha256: str = ""

    def to_record(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "path": self.path,
            "driver": self.label.driver,
            "target": self.label.target,
            "authenticity": self.label.authenticity,
            "duration_s": self.duration_s,
            "sha256": self.sha256,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ManifestEntry":
        label = ReenactmentLabel(rec["driver"], rec["target"], rec["authenticity"], rec["clip_id"])
        return cls(rec["clip_id"], rec["path"], label, float(rec["duration_s"]), rec.get("sha256", ""))


@dataclass
class Manifest:
    entries: list
    corpus_seed: int = 0
    generator_params: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        ids = [e.clip_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ConfigurationError("manifest clip ids are not unique")

    def __len__(self):
        return len(self.entries)

    def identities(self) -> list[str]:
        return sorted({e.label.driver for e in self.entries} | {e.label.target for e in self.entries})

    def subset(self, entries) -> "Manifest":
        return Manifest(sorted(entries, key=lambda e: e.clip_id), self.corpus_seed, self.generator_params, self.root)

    def filter(self, pred) -> "Manifest":
        return self.subset([e for e in self.entries if pred(e)])

    def counts(self) -> dict:
        real = sum(e.label.authenticity == REAL for e in self.entries)
        self_ = sum(e.label.is_self_reenactment for e in self.entries)
        cross = sum(e.label.is_cross_reenactment for e in self.entries)
        return {"real": real, "self": self_, "cross": cross, "total": len(self.entries)}

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def text(self) -> str:
        header = {"schema_version": MANIFEST_SCHEMA_VERSION, "corpus_seed": self.corpus_seed,
                  "generator_params": self.generator_params}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(e.to_record(), sort_keys=True) for e in sorted(self.entries, key=lambda e: e.clip_id)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.text())


def load_manifest(path) -> Manifest:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError(f"manifest {path} is empty")
    header = json.loads(lines[0])
    if header.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise VersionError(f"unsupported manifest schema {header.get('schema_version')!r}")
    entries = [ManifestEntry.from_record(json.loads(ln)) for ln in lines[1:]]
    return Manifest(entries, header.get("corpus_seed", 0), header.get("generator_params", {}), path.parent)


def load_clip(manifest: Manifest, entry: ManifestEntry) -> AudioClip:
    clip = read_wav(manifest.resolve(entry))
    clip.source_id = entry.clip_id
    return clip


# ---------------------------------------------------------------------------
# corpus generation


@dataclass(frozen=True)
class CorpusConfig:
    n_identities: int = 16
    clips_per_pair: int = 6
    real_per_identity: int = 36
    duration_s: float = 4.0
    seed: int = 0
    synth: SynthParams = SynthParams()

    def to_dict(self) -> dict:
        return asdict(self)


def clip_id_for(seed: int, driver: str, target: str, authenticity: str, index: int, duration_s: float,
                params: SynthParams) -> str:
    key = json.dumps([seed, driver, target, authenticity, index, duration_s, asdict(params)], sort_keys=True)
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def _clip_jobs(identities, cfg: CorpusConfig):
    for d_idx, drv in enumerate(identities):
        for k in range(cfg.real_per_identity):
            yield drv, drv, REAL, k, [cfg.seed, d_idx, d_idx, 0, k]
        for t_idx, tgt in enumerate(identities):
            for k in range(cfg.clips_per_pair):
                yield drv, tgt, SYNTHETIC, k, [cfg.seed, d_idx, t_idx, 1, k]


def _materialize(job, cfg: CorpusConfig, out_dir: Path):
    drv, tgt, auth, k, seed = job
    cid = clip_id_for(cfg.seed, drv.identity, tgt.identity, auth, k, cfg.duration_s, cfg.synth)
    clip, label = synthesize_clip(drv, tgt, cfg.duration_s, auth, seed, cfg.synth, cid)
    rel = Path("clips") / cid[:2] / f"{cid}.wav"
    dest = out_dir / rel
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_wav(clip, dest)
    digest = hashlib.sha256(dest.read_bytes()).hexdigest()
    return ManifestEntry(cid, rel.as_posix(), label, cfg.duration_s, digest)


def generate_corpus(identities: list[IdentityFactors], out_dir, cfg: CorpusConfig = CorpusConfig(),
                    workers: int = 1) -> Manifest:
    """Render real clips plus the full ordered (driver, target) synthetic matrix.

    Writes ``clips/<xx>/<clip_id>.wav`` and ``manifest.jsonl`` under ``out_dir``.
    """
    if len(identities) < 2:
        raise InsufficientIdentitiesError(f"need at least 2 identities, got {len(identities)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = list(_clip_jobs(identities, cfg))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            entries = list(pool.map(_materialize, jobs, [cfg] * len(jobs), [out_dir] * len(jobs), chunksize=16))
    else:
        entries = [_materialize(j, cfg, out_dir) for j in jobs]
    params = {"corpus": cfg.to_dict(), "identities": [f.to_dict() for f in identities]}
    manifest = Manifest(sorted(entries, key=lambda e: e.clip_id), cfg.seed, params, out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    log.info("generated %s", manifest.counts())
    return manifest


def identities_from_manifest(manifest: Manifest) -> list[IdentityFactors]:
    return [IdentityFactors.from_dict(d) for d in manifest.generator_params.get("identities", [])]


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    train_identities: tuple
    test_identities: tuple
    val_fraction: float = 0.05

    def validate(self, train: Manifest, val: Manifest, test_ids=None) -> None:
        test = set(self.test_identities if test_ids is None else test_ids)
        if set(self.train_identities) & test:
            raise ConfigurationError("train and test identities overlap")
        for e in train.entries + val.entries:
            if e.label.driver in test or e.label.target in test:
                raise ConfigurationError(f"entry {e.clip_id} references a test identity")


class Splits(NamedTuple):
    train: Manifest
    val: Manifest
    test: Manifest
    spec: SplitSpec


def make_splits(manifest: Manifest, n_test_identities: int, val_fraction: float = 0.05, seed: int = 0):
    """Identity-disjoint split into :class:`Splits` ``(train, val, test, spec)``.

    Test identities are drawn by ``seed``. Any entry with a test identity as
    driver *or* target goes to the test manifest; the rest is divided at clip
    level into validation (``round(val_fraction * n)`` clips) and training.
    """
    ids = manifest.identities()
    if not 1 <= n_test_identities < len(ids) - 1:
        raise ConfigurationError(f"cannot hold out {n_test_identities} of {len(ids)} identities")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigurationError("val_fraction must lie in [0, 1)")
    rng = np.random.default_rng([seed, 0x5B])
    test_ids = tuple(sorted(rng.choice(ids, size=n_test_identities, replace=False).tolist()))
    test_set = set(test_ids)
    entries = sorted(manifest.entries, key=lambda e: e.clip_id)
    test = [e for e in entries if e.label.driver in test_set or e.label.target in test_set]
    pool = [e for e in entries if e.label.driver not in test_set and e.label.target not in test_set]
    n_val = int(round(val_fraction * len(pool)))
    order = rng.permutation(len(pool))
    val_idx = set(order[:n_val].tolist())
    val = [e for i, e in enumerate(pool) if i in val_idx]
    train = [e for i, e in enumerate(pool) if i not in val_idx]
    spec = SplitSpec(tuple(i for i in ids if i not in test_set), test_ids, val_fraction)
    train_m, val_m, test_m = manifest.subset(train), manifest.subset(val), manifest.subset(test)
    spec.validate(train_m, val_m)
    return Splits(train_m, val_m, test_m, spec)
