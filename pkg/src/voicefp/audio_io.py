"""Mono PCM clip container, RIFF/WAVE reader/writer and sinc resampler."""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AudioFormatError,
    PreconditionError,
    UnsupportedChannelsError,
    UnsupportedCodecError,
    UnsupportedRateError,
)

CANONICAL_RATE = 16000
INT16_SCALE = 32768.0
MIN_RESAMPLE_RATE = 8000

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    """A monophonic clip. ``samples`` are float64 amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.sample_rate_hz = int(self.sample_rate_hz)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def validate(self) -> "AudioClip":
        if self.sample_rate_hz <= 0:
            raise PreconditionError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.samples.size == 0:
            raise PreconditionError("clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise PreconditionError("clip contains non-finite samples")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0:
            raise PreconditionError(f"sample magnitude {peak} outside [-1, 1]")
        return self


def _parse_chunks(blob: bytes) -> tuple[bytes | None, bytes | None]:
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise AudioFormatError("not a RIFF/WAVE file")
    fmt = data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id, size = struct.unpack_from("<4sI", blob, pos)
        pos += 8
        body = blob[pos : pos + size]
        if len(body) < size:
            raise AudioFormatError(f"chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += size + (size & 1)
    return fmt, data


def read_wav(path) -> AudioClip:
    """Read a mono PCM16 or float32 WAV file.

    int16 samples are divided by 32768, so the result lies in [-1, 1).
    """
    blob = Path(path).read_bytes()
    fmt, data = _parse_chunks(blob)
    if fmt is None or len(fmt) < 16:
        raise AudioFormatError("missing or short fmt chunk")
    if data is None:
        raise AudioFormatError("missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise AudioFormatError("truncated WAVE_FORMAT_EXTENSIBLE header")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if channels != 1:
        raise UnsupportedChannelsError(f"expected 1 channel, file has {channels}")
    if rate == 0:
        raise AudioFormatError("sample rate of 0 in header")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedCodecError(f"format tag {tag:#06x} with {bits} bits is not supported")
    if block_align != dtype.itemsize:
        raise AudioFormatError(f"block align {block_align} inconsistent with {bits}-bit mono")
    n = len(data) // dtype.itemsize
    if n == 0:
        raise AudioFormatError("zero-length data chunk")
    raw = np.frombuffer(data[: n * dtype.itemsize], dtype=dtype)
    if dtype.kind == "i":
        samples = raw.astype(np.float64) / INT16_SCALE
    else:
        samples = raw.astype(np.float64)
        if not np.all(np.isfinite(samples)) or np.max(np.abs(samples)) > 1.0:
            raise PreconditionError("float samples outside [-1, 1]")
    return AudioClip(samples, rate, source_id=str(path))


def quantize_int16(samples: np.ndarray) -> np.ndarray:
    q = np.round(np.asarray(samples, dtype=np.float64) * INT16_SCALE)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as 16-bit PCM mono."""
    clip.validate()
    with open(path, "wb") as fh, wave.open(fh, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(quantize_int16(clip.samples).tobytes())


def _phase_table(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc taps, one row of 64 per fractional phase."""
    cutoff = min(1.0, up / down)
    half = TAPS_PER_PHASE // 2
    j = np.arange(-half + 1, half + 1)
    frac = np.arange(up)[:, None] / up
    d = frac - j[None, :]
    window = np.i0(KAISER_BETA * np.sqrt(np.clip(1.0 - (d / half) ** 2, 0.0, None))) / np.i0(KAISER_BETA)
    taps = cutoff * np.sinc(cutoff * d) * window
    return taps / taps.sum(axis=1, keepdims=True)


def resample(clip: AudioClip, target_rate_hz: int, chunk: int = 8192) -> AudioClip:
    """Band-limited rate conversion by polyphase windowed-sinc interpolation.

    Output length is ``round(n * target / source)``. Values are clipped to
    [-1, 1] afterwards so the result is again a valid clip.
    """
    clip.validate()
    target_rate_hz = int(target_rate_hz)
    if target_rate_hz < MIN_RESAMPLE_RATE:
        raise UnsupportedRateError(f"target rate {target_rate_hz} Hz below {MIN_RESAMPLE_RATE} Hz")
    if target_rate_hz == clip.sample_rate_hz:
        return AudioClip(clip.samples.copy(), clip.sample_rate_hz, clip.source_id)

    g = math.gcd(target_rate_hz, clip.sample_rate_hz)
    up, down = target_rate_hz // g, clip.sample_rate_hz // g
    n_in = clip.samples.size
    n_out = max(1, (2 * n_in * up + down) // (2 * down))
    table = _phase_table(up, down)

    half = TAPS_PER_PHASE // 2
    pad = half + 1
    x = np.concatenate([np.zeros(pad), clip.samples, np.zeros(pad + TAPS_PER_PHASE)])
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(n_out)
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(start + chunk, n_out), dtype=np.int64)
        base = (n * down) // up
        phase = (n * down) % up
        idx = base[:, None] + offsets[None, :] + pad
        out[start : start + n.size] = np.einsum("ij,ij->i", table[phase], x[idx])
    np.clip(out, -1.0, 1.0, out=out)
    return AudioClip(out, target_rate_hz, clip.source_id)
