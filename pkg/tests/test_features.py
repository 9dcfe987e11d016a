import csv

import numpy as np
import pytest

from conftest import sine
from oracles import triangle
from voicefp.audio_io import AudioClip
from voicefp.corpus import sample_identities, synthesize_clip
from voicefp.errors import InsufficientAudioError, PreconditionError
from voicefp.features import (
    CHANNEL_LAYOUT,
    LOG_FLOOR,
    FeatureMatrix,
    extract_features,
    frame_and_window,
    hz_to_mel,
    log_mel,
    mel_centers,
    mel_filterbank,
    mel_to_hz,
    prosody_channels,
)


def pulse_train(f0=200.0, seconds=1.0, rate=16000):
    x = np.zeros(int(seconds * rate))
    x[:: int(rate / f0)] = 0.8
    return AudioClip(x, rate, "pulses")


def voiced_clip(seconds=2.0, seed=0):
    ids = sample_identities(2, 5)
    clip, _ = synthesize_clip(ids[0], ids[1], seconds, "synthetic", seed)
    return clip


class TestFraming:
    def test_frame_count(self):
        assert frame_and_window(sine(seconds=1.0)).shape == (98, 400)

    def test_zero_clip(self):
        frames = frame_and_window(AudioClip(np.zeros(16000), 16000))
        assert not frames.any()

    def test_short_clip(self):
        with pytest.raises(InsufficientAudioError):
            frame_and_window(sine(seconds=0.5))

    def test_wrong_rate(self):
        with pytest.raises(PreconditionError):
            frame_and_window(sine(seconds=1.0, rate=8000))

    def test_pre_emphasis_and_window(self):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, 16000)
        frames = frame_and_window(AudioClip(x, 16000))
        n = np.arange(400)
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * (n + 1) / 401)
        k = 5
        seg = x[k * 160 : k * 160 + 400]
        prev = x[k * 160 - 1 : k * 160 + 399]
        np.testing.assert_allclose(frames[k], (seg - 0.97 * prev) * hann, atol=1e-12)


class TestMel:
    def test_mel_scale_round_trip(self):
        f = np.linspace(0, 8000, 33)
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
        assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2))

    def test_filterbank_matches_direct_evaluation(self):
        fb = mel_filterbank()
        edges = mel_to_hz(np.linspace(hz_to_mel(20.0), hz_to_mel(7600.0), 82))
        bins = np.arange(257) * 16000 / 512
        expect = np.array([[triangle(f, edges[i], edges[i + 1], edges[i + 2]) for f in bins] for i in range(80)])
        assert fb.shape == (80, 257)
        np.testing.assert_allclose(fb, expect, atol=1e-12)

    def test_tone_lands_in_one_band(self):
        mel = log_mel(frame_and_window(sine(1000.0, 1.0, amp=0.5)))
        band = np.bincount(mel.argmax(axis=1)).argmax()
        assert abs(mel_centers()[band] - 1000.0) < 100.0

    def test_silence_floor(self):
        mel = log_mel(frame_and_window(AudioClip(np.zeros(16000), 16000)))
        assert np.all(mel == np.log(LOG_FLOOR))

    def test_power_convention(self):
        x = np.random.default_rng(1).uniform(-0.2, 0.2, 16000)
        a = log_mel(frame_and_window(AudioClip(x, 16000)))
        b = log_mel(frame_and_window(AudioClip(2 * x, 16000)))
        np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-9)


class TestProsody:
    def test_pulse_train_f0(self):
        pros = prosody_channels(pulse_train(200.0))
        voiced = pros[:, 2] == 1
        assert voiced.mean() > 0.5
        f0 = np.exp(pros[voiced, 0])
        assert np.mean(np.abs(f0 - 200.0) <= 5.0) >= 0.9

    @pytest.mark.parametrize("f0", [80.0, 125.0, 320.0])
    def test_other_pitches(self, f0):
        rate = 16000
        t = np.arange(rate) / rate
        # a few harmonics with decaying amplitude, like a voiced vowel
        x = sum(0.3 / k * np.sin(2 * np.pi * k * f0 * t) for k in range(1, 6))
        pros = prosody_channels(AudioClip(x / np.max(np.abs(x)) * 0.8, rate))
        voiced = pros[:, 2] == 1
        assert voiced.mean() >= 0.9
        np.testing.assert_allclose(np.median(np.exp(pros[voiced, 0])), f0, rtol=0.02)

    def test_white_noise_unvoiced(self):
        x = np.random.default_rng(2).standard_normal(32000) * 0.1
        pros = prosody_channels(AudioClip(np.clip(x, -1, 1), 16000))
        assert np.mean(pros[:, 2] == 0) >= 0.9

    def test_silence(self):
        pros = prosody_channels(AudioClip(np.zeros(16000), 16000))
        assert not pros[:, 2].any()
        assert np.all(pros[:, 0] == 0.0)
        assert np.all(pros[:, 1] == np.log(LOG_FLOOR))

    def test_log_energy(self):
        clip = sine(500.0, 1.0, amp=0.5)
        pros = prosody_channels(clip)
        frames = clip.samples[: 400 + 160 * 97].copy()
        rms = np.sqrt(np.mean(np.lib.stride_tricks.sliding_window_view(frames, 400)[::160] ** 2, axis=1))
        np.testing.assert_allclose(pros[:, 1], np.log(rms + 1e-10), atol=1e-12)


class TestExtract:
    def test_shape(self):
        feat = extract_features(sine(seconds=2.0))
        assert feat.frames.shape == (198, 83)
        assert feat.channel_layout == CHANNEL_LAYOUT
        assert feat.frame_hop_s == 0.01 and feat.frame_len_s == 0.025

    def test_deterministic(self):
        clip = voiced_clip()
        np.testing.assert_array_equal(extract_features(clip).frames, extract_features(clip).frames)

    def test_finite_and_valid(self):
        for seed in range(3):
            feat = extract_features(voiced_clip(seed=seed))
            assert np.all(np.isfinite(feat.frames))
            v = feat.frames[:, -1]
            assert set(np.unique(v)) <= {0.0, 1.0}
            assert np.all(feat.frames[v == 0, -3] == 0.0)

    def test_hop_shift_covariance(self):
        clip = voiced_clip(3.0, seed=4)
        shifted = AudioClip(clip.samples[160:], 16000)
        a = extract_features(clip).frames
        b = extract_features(shifted).frames
        np.testing.assert_allclose(b[1:-1], a[2 : b.shape[0]], atol=1e-9)

    def test_validate_rejects(self):
        good = extract_features(sine(seconds=1.0)).frames
        bad = good.copy()
        bad[0, 0] = np.nan
        with pytest.raises(PreconditionError):
            FeatureMatrix(bad).validate()
        bad = good.copy()
        bad[:, -1] = 0.5
        with pytest.raises(PreconditionError):
            FeatureMatrix(bad).validate()
        with pytest.raises(PreconditionError):
            FeatureMatrix(good[:, :10]).validate()

    def test_csv_dump(self, tmp_path):
        feat = extract_features(sine(seconds=1.0))
        feat.to_csv(tmp_path / "f.csv")
        with open(tmp_path / "f.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == CHANNEL_LAYOUT
        assert len(rows) == feat.num_frames + 1
        np.testing.assert_array_equal(np.array(rows[1:], dtype=float), feat.frames)
