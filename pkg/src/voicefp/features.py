"""Frame-level acoustic features: 80 log-mel bands plus three prosody channels.

The prosody block (log-F0, log energy, voicing flag) exists so that pooled
statistics carry speaking-style information and not only spectral envelope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import CANONICAL_RATE, AudioClip
from .errors import InsufficientAudioError, PreconditionError

FRAME_LEN = 400
HOP = 160
NFFT = 512
N_MELS = 80
MEL_FMIN = 20.0
MEL_FMAX = 7600.0
PRE_EMPHASIS = 0.97
LOG_FLOOR = 1e-10

F0_MIN = 50.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.5
VOICING_MIN_RMS = 1e-4
# path costs for period tracking within a voiced run (per octave)
OCTAVE_JUMP_COST = 0.5
OCTAVE_COST = 0.05
N_CANDIDATES = 6

MIN_DURATION_S = 1.0

CHANNEL_LAYOUT = tuple(f"logmel_{i:02d}" for i in range(N_MELS)) + ("log_f0", "log_energy", "voicing")
N_CHANNELS = len(CHANNEL_LAYOUT)


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    channel_layout: tuple = field(default=CHANNEL_LAYOUT)
    frame_hop_s: float = HOP / CANONICAL_RATE
    frame_len_s: float = FRAME_LEN / CANONICAL_RATE

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def validate(self) -> "FeatureMatrix":
        if self.frames.ndim != 2 or self.frames.shape[1] != len(self.channel_layout):
            raise PreconditionError(f"feature matrix shape {self.frames.shape} does not match layout")
        if not np.all(np.isfinite(self.frames)):
            raise PreconditionError("feature matrix has NaN/Inf entries")
        if "voicing" in self.channel_layout:
            v = self.frames[:, self.channel_layout.index("voicing")]
            f0 = self.frames[:, self.channel_layout.index("log_f0")]
            if not np.all((v == 0.0) | (v == 1.0)):
                raise PreconditionError("voicing channel must be 0 or 1")
            if np.any(f0[v == 0.0] != 0.0):
                raise PreconditionError("log-F0 must be 0 on unvoiced frames")
        return self

    def to_csv(self, path) -> None:
        """Debug dump, row-major, header = channel layout."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.channel_layout)
            for row in self.frames:
                w.writerow([repr(float(v)) for v in row])


def num_frames(num_samples: int) -> int:
    return (num_samples - FRAME_LEN) // HOP + 1


def _check_clip(clip: AudioClip) -> np.ndarray:
    clip.validate()
    if clip.sample_rate_hz != CANONICAL_RATE:
        raise PreconditionError(f"features expect {CANONICAL_RATE} Hz input, got {clip.sample_rate_hz}; resample first")
    if clip.samples.size < MIN_DURATION_S * CANONICAL_RATE:
        raise InsufficientAudioError(f"clip is {clip.duration_s:.3f} s, need at least {MIN_DURATION_S} s")
    return clip.samples


def _frame(x: np.ndarray, width: int = FRAME_LEN) -> np.ndarray:
    t = num_frames(x.size)
    idx = np.arange(t)[:, None] * HOP + np.arange(width)[None, :]
    return x[idx]


def frame_and_window(clip: AudioClip) -> np.ndarray:
    """Pre-emphasize, cut 400-sample frames every 160 samples, apply Hann."""
    x = _check_clip(clip)
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - PRE_EMPHASIS * x[:-1]
    return _frame(y) * np.hanning(FRAME_LEN + 2)[1:-1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(n_mels: int = N_MELS, nfft: int = NFFT, sr: int = CANONICAL_RATE,
                   fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    """Triangular filters (peak 1) on the HTK mel scale, shape (n_mels, nfft//2+1)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.arange(nfft // 2 + 1) * sr / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (mid - lo)
    falling = (hi - bins[None, :]) / (hi - mid)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    fb.setflags(write=False)
    return fb


def mel_centers(n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def log_mel(frames: np.ndarray) -> np.ndarray:
    """Natural log of mel-filtered power spectrum (|FFT|^2), floored at 1e-10.

    Power convention: scaling the input by ``a`` adds ``2 ln|a|`` to every
    unfloored cell.
    """
    power = np.abs(sfft.rfft(frames, n=NFFT, axis=1)) ** 2
    mel = power @ mel_filterbank().T
    return np.log(np.maximum(mel, LOG_FLOOR))


def _nccf(x: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation of each frame with its lagged copy.

    The lagged window extends past the frame end (the signal is zero-padded
    by ``max_lag``) so every lag is estimated from a full 400-sample overlap.
    """
    t = num_frames(x.size)
    ext = np.concatenate([x, np.zeros(max_lag)])
    span = FRAME_LEN + max_lag
    tail = sliding_window_view(ext, span)[: t * HOP : HOP]
    # circular correlation is exact for lags <= max_lag once n >= span
    n = sfft.next_fast_len(span, real=True)
    spec_head = sfft.rfft(tail[:, :FRAME_LEN], n, axis=1)
    spec_tail = sfft.rfft(tail, n, axis=1)
    corr = sfft.irfft(spec_head.conj() * spec_tail, n, axis=1)[:, min_lag : max_lag + 1]
    # energy of every 400-sample window, then pick the lagged ones per frame
    cs = np.concatenate([[0.0], np.cumsum(ext * ext)])
    win = np.maximum(cs[FRAME_LEN:] - cs[:-FRAME_LEN], 0.0)
    e_lag = sliding_window_view(win, max_lag + 1)[: t * HOP : HOP]
    denom = np.sqrt(e_lag[:, :1] * e_lag[:, min_lag:])
    r = np.zeros_like(corr)
    np.divide(corr, denom, out=r, where=denom > 0)
    return r


def _pick_period(r: np.ndarray, min_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest-lag local peak within 10% of the best peak, refined parabolically."""
    t, n = r.shape
    best = r.max(axis=1)
    interior = np.zeros_like(r, dtype=bool)
    interior[:, 1:-1] = (r[:, 1:-1] >= r[:, :-2]) & (r[:, 1:-1] >= r[:, 2:])
    interior[:, -1] = r[:, -1] >= r[:, -2]
    ok = interior & (r >= 0.9 * best[:, None])
    k = np.where(ok.any(axis=1), ok.argmax(axis=1), r.argmax(axis=1))
    peak = r[np.arange(t), k]
    km = np.clip(k - 1, 0, n - 1)
    kp = np.clip(k + 1, 0, n - 1)
    a, b, c = r[np.arange(t), km], peak, r[np.arange(t), kp]
    den = a - 2 * b + c
    shift = np.where((k > 0) & (k < n - 1) & (den < 0), 0.5 * (a - c) / np.where(den < 0, den, -1.0), 0.0)
    return k + min_lag + np.clip(shift, -0.5, 0.5), peak


def _candidates(r: np.ndarray, min_lag: int, fallback: np.ndarray, fallback_peak: np.ndarray):
    """Top local NCCF peaks per frame as (lags, values), refined parabolically.

    The single-frame pick is always included so a frame is never left
    without a candidate; missing slots carry value -inf.
    """
    t, n = r.shape
    k = N_CANDIDATES - 1
    interior = np.zeros_like(r, dtype=bool)
    interior[:, 1:-1] = (r[:, 1:-1] >= r[:, :-2]) & (r[:, 1:-1] > r[:, 2:])
    score = np.where(interior, r, -np.inf)
    idx = np.argsort(-score, axis=1, kind="stable")[:, :k]
    val = np.take_along_axis(score, idx, 1)
    a = np.take_along_axis(r, np.clip(idx - 1, 0, n - 1), 1)
    c = np.take_along_axis(r, np.clip(idx + 1, 0, n - 1), 1)
    den = a - 2 * val + c
    ok = np.isfinite(val) & (den < 0)
    shift = np.where(ok, 0.5 * (a - c) / np.where(ok, den, -1.0), 0.0)
    lags = idx + min_lag + np.clip(shift, -0.5, 0.5)
    return np.column_stack([lags, fallback]), np.column_stack([val, fallback_peak])


def _track_periods(lags: np.ndarray, vals: np.ndarray, voiced: np.ndarray, min_lag: int) -> np.ndarray:
    """Cheapest candidate path through each voiced run.

    Local cost is ``-r`` plus a small per-octave penalty on long lags;
    moving between frames costs ``OCTAVE_JUMP_COST`` per octave. A lone
    frame that picked a formant or a subharmonic gets pulled back in line
    with its neighbours.
    """
    local = np.where(np.isfinite(vals), -vals + OCTAVE_COST * np.log2(lags / min_lag), np.inf)
    log_lag = np.log2(lags)
    period = np.zeros(voiced.size)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        cost = local[start].copy()
        back = []
        for i in range(start + 1, stop):
            total = cost[None, :] + OCTAVE_JUMP_COST * np.abs(log_lag[i][:, None] - log_lag[i - 1][None, :])
            b = np.argmin(total, axis=1)
            back.append(b)
            cost = total[np.arange(b.size), b] + local[i]
        j = int(np.argmin(cost))
        for i in range(stop - 1, start - 1, -1):
            period[i] = lags[i, j]
            if i > start:
                j = back[i - start - 1][j]
    return period


def prosody_channels(clip: AudioClip) -> np.ndarray:
    """Per-frame [log F0 (0 if unvoiced), ln(RMS + 1e-10), voicing flag].

    Voicing is decided frame by frame; the period within a voiced run is
    the best continuous path through each frame's correlation peaks.
    """
    x = _check_clip(clip)
    sr = clip.sample_rate_hz
    min_lag = int(np.floor(sr / F0_MAX))
    max_lag = int(np.ceil(sr / F0_MIN))
    raw = _frame(x)
    rms = np.sqrt(np.mean(raw ** 2, axis=1))
    r = _nccf(x, min_lag, max_lag)
    single, peak = _pick_period(r, min_lag)
    voiced = (peak >= VOICING_THRESHOLD) & (rms >= VOICING_MIN_RMS)
    lags, vals = _candidates(r, min_lag, single, peak)
    period = _track_periods(lags, vals, voiced, min_lag)
    log_f0 = np.where(voiced, np.log(sr / np.where(voiced, period, 1.0)), 0.0)
    return np.column_stack([log_f0, np.log(rms + LOG_FLOOR), voiced.astype(np.float64)])


def extract_features(clip: AudioClip) -> FeatureMatrix:
    mel = log_mel(frame_and_window(clip))
    pros = prosody_channels(clip)
    t = min(mel.shape[0], pros.shape[0])
    return FeatureMatrix(np.hstack([mel[:t], pros[:t]])).validate()
