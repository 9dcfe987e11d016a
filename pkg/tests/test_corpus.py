import hashlib
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from oracles import lpc_formants, pearson, syllable_rate
from voicefp.audio_io import AudioClip
from voicefp.corpus import (
    MANNERISM_RANGES,
    REAL,
    SYNTHETIC,
    TIMBRE_RANGES,
    CorpusConfig,
    Manifest,
    ManifestEntry,
    ReenactmentLabel,
    SplitSpec,
    _clip_jobs,
    generate_corpus,
    identities_from_manifest,
    load_clip,
    load_manifest,
    make_splits,
    render,
    sample_identities,
    synthesize_clip,
)
from voicefp.errors import ConfigurationError, InsufficientIdentitiesError, VersionError
from voicefp.features import prosody_channels


class TestSampleIdentities:
    def test_deterministic(self):
        a = sample_identities(46, 1)
        b = sample_identities(46, 1)
        assert [x.to_dict() for x in a] == [x.to_dict() for x in b]
        assert [x.to_dict() for x in sample_identities(46, 2)] != [x.to_dict() for x in a]

    def test_ranges(self):
        ids = sample_identities(1000, 0)
        for f in ids:
            f.validate()
            v = f.normalized_vector()
            assert np.all((v >= 0.0) & (v <= 1.0))
        assert len({f.identity for f in ids}) == 1000

    def test_distinct(self):
        vecs = [f.normalized_vector() for f in sample_identities(46, 1)]
        assert min(np.linalg.norm(a - b) for a, b in combinations(vecs, 2)) > 0.0

    def test_too_few(self):
        with pytest.raises(InsufficientIdentitiesError):
            sample_identities(1, 0)

    def test_dict_round_trip(self):
        f = sample_identities(3, 4)[2]
        assert type(f).from_dict(f.to_dict()) == f

    def test_validate_envelope(self):
        f = sample_identities(2, 0)[0]
        bad = replace(f, timbre=replace(f.timbre, formants_hz=(900.0, 800.0, 2500.0)))
        with pytest.raises(ConfigurationError):
            bad.validate()
        with pytest.raises(ConfigurationError):
            replace(f, mannerism=replace(f.mannerism, syllable_rate_hz=9.0)).validate()
        with pytest.raises(ConfigurationError):
            replace(f, mannerism=replace(f.mannerism, jitter_sigma=0.2)).validate()

    def test_range_tables_sit_inside_envelope(self):
        assert TIMBRE_RANGES["f0_register_hz"][0] >= 80 and TIMBRE_RANGES["f0_register_hz"][1] <= 300
        assert MANNERISM_RANGES["syllable_rate_hz"][0] >= 2 and MANNERISM_RANGES["syllable_rate_hz"][1] <= 8


class TestSynthesis:
    ids = sample_identities(200, 11)

    def test_shape_and_label(self):
        a, b = self.ids[:2]
        clip, label = synthesize_clip(a, b, 3.0, SYNTHETIC, [0])
        assert clip.samples.size == 48000 and clip.sample_rate_hz == 16000
        assert np.max(np.abs(clip.samples)) == pytest.approx(0.9)
        assert label == ReenactmentLabel(a.identity, b.identity, SYNTHETIC)
        assert label.is_cross_reenactment and not label.is_self_reenactment

    def test_seeded(self):
        a, b = self.ids[:2]
        x, _ = render(a, b, 2.0, True, [5])
        y, _ = render(a, b, 2.0, True, [5])
        np.testing.assert_array_equal(x, y)
        assert not np.array_equal(x, render(a, b, 2.0, True, [6])[0])

    def test_real_cross_rejected(self):
        a, b = self.ids[:2]
        with pytest.raises(ConfigurationError):
            synthesize_clip(a, b, 3.0, REAL, [0])
        with pytest.raises(ConfigurationError):
            ReenactmentLabel("a", "b", REAL)

    @pytest.mark.parametrize("seconds", [1.9, 10.5])
    def test_duration_bounds(self, seconds):
        a = self.ids[0]
        with pytest.raises(ConfigurationError):
            synthesize_clip(a, a, seconds, SYNTHETIC, [0])

    def test_formant_perturbation_only_for_synthetic(self):
        a = self.ids[3]
        _, real_f = render(a, a, 2.0, False, [1])
        _, synth_f = render(a, a, 2.0, True, [1])
        assert real_f == pytest.approx(a.timbre.formants_hz, abs=1e-9)
        assert synth_f != pytest.approx(a.timbre.formants_hz, abs=1e-9)
        assert np.all(np.abs(np.array(synth_f) / a.timbre.formants_hz - 1) < 0.1)

    def test_self_reenactment_register(self):
        # mean F0 as measured by the feature extractor, one value per clip
        errs = []
        for k, f in enumerate(self.ids[:40]):
            clip, _ = synthesize_clip(f, f, 4.0, SYNTHETIC, [k])
            p = prosody_channels(clip)
            f0 = np.exp(p[p[:, 2] == 1, 0])
            errs.append(abs(f0.mean() / f.timbre.f0_register_hz - 1))
        errs = np.array(errs)
        assert np.median(errs) < 0.02
        assert np.mean(errs < 0.05) >= 0.9

    def test_controllability(self):
        rng = np.random.default_rng(0)
        rate_true, rate_meas, f1_true, f1_meas, f2_true, f2_meas = ([] for _ in range(6))
        close = []
        for n in range(100):
            i, j = rng.choice(len(self.ids), 2, replace=False)
            drv, tgt = self.ids[i], self.ids[j]
            y, used = render(drv, tgt, 4.0, True, [n])
            p = prosody_channels(AudioClip(y, 16000))
            rate_true.append(drv.mannerism.syllable_rate_hz)
            rate_meas.append(syllable_rate(p[:, 2], p[:, 1]))
            peaks = lpc_formants(y, p[:, 2])
            assert peaks.size > 0
            near = [peaks[np.argmin(np.abs(peaks - u))] for u in used[:2]]
            f1_true.append(tgt.timbre.formants_hz[0])
            f2_true.append(tgt.timbre.formants_hz[1])
            f1_meas.append(near[0])
            f2_meas.append(near[1])
            close.append([abs(m / u - 1) < 0.05 for m, u in zip(near, used[:2])])
        rate_true, rate_meas = np.array(rate_true), np.array(rate_meas)
        assert pearson(rate_true, rate_meas) > 0.8
        assert pearson(f1_true, f1_meas) > 0.8
        assert pearson(f2_true, f2_meas) > 0.8
        assert np.mean(np.abs(rate_meas / rate_true - 1) < 0.10) >= 0.9
        assert np.all(np.mean(close, axis=0) >= 0.9)


def fake_manifest(n_ids, k=1, r=0):
    """Labels only; nothing is rendered."""
    ids = sample_identities(n_ids, 0)
    cfg = CorpusConfig(n_identities=n_ids, clips_per_pair=k, real_per_identity=r)
    entries = []
    for drv, tgt, auth, idx, _ in _clip_jobs(ids, cfg):
        cid = f"{drv.identity}-{tgt.identity}-{auth[0]}{idx}"
        entries.append(ManifestEntry(cid, cid + ".wav", ReenactmentLabel(drv.identity, tgt.identity, auth, cid), 4.0))
    return Manifest(entries)


class TestGenerate:
    def test_counts_at_scale(self):
        assert fake_manifest(46, k=1).counts() == {"real": 0, "self": 46, "cross": 2070, "total": 2116}

    def test_counts_rendered(self, tmp_path):
        ids = sample_identities(8, 2)
        cfg = CorpusConfig(n_identities=8, clips_per_pair=2, real_per_identity=2, duration_s=2.0, seed=2)
        m = generate_corpus(ids, tmp_path, cfg)
        assert m.counts() == {"real": 16, "self": 16, "cross": 112, "total": 144}
        assert len(list(tmp_path.glob("clips/*/*.wav"))) == 144

    def test_regeneration_identical(self, small_corpus, tmp_path):
        manifest, ids, cfg = small_corpus
        again = generate_corpus(ids, tmp_path, cfg)
        assert again.text() == manifest.text()
        for e in again.entries[:10]:
            assert hashlib.sha256((tmp_path / e.path).read_bytes()).hexdigest() == e.sha256

    def test_seed_changes_ids(self, small_corpus, tmp_path):
        manifest, ids, cfg = small_corpus
        other = generate_corpus(ids[:2], tmp_path, replace(cfg, seed=cfg.seed + 1, real_per_identity=0))
        assert not {e.clip_id for e in other.entries} & {e.clip_id for e in manifest.entries}

    def test_too_few(self, tmp_path):
        with pytest.raises(InsufficientIdentitiesError):
            generate_corpus(sample_identities(2, 0)[:1], tmp_path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            generate_corpus(sample_identities(2, 0), blocker / "out", CorpusConfig(clips_per_pair=1, real_per_identity=0))


class TestManifest:
    def test_round_trip(self, small_corpus):
        manifest, ids, _ = small_corpus
        back = load_manifest(manifest.root / "manifest.jsonl")
        assert back.text() == manifest.text()
        assert back.digest() == manifest.digest()
        assert [f.to_dict() for f in identities_from_manifest(back)] == [f.to_dict() for f in ids]
        e = back.entries[0]
        clip = load_clip(back, e)
        assert clip.source_id == e.clip_id and clip.duration_s == pytest.approx(e.duration_s)

    def test_duplicate_ids(self):
        lab = ReenactmentLabel("a", "a", REAL)
        with pytest.raises(ConfigurationError):
            Manifest([ManifestEntry("x", "x.wav", lab, 2.0), ManifestEntry("x", "y.wav", lab, 2.0)])

    def test_schema_and_empty(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"schema_version": 9}\n')
        with pytest.raises(VersionError):
            load_manifest(tmp_path / "m.jsonl")
        (tmp_path / "m.jsonl").write_text("")
        with pytest.raises(ConfigurationError):
            load_manifest(tmp_path / "m.jsonl")


class TestSplits:
    def test_disjoint_exhaustive(self):
        m = fake_manifest(46, k=1, r=2)
        s = make_splits(m, 6, 0.05, seed=3)
        test_ids = set(s.spec.test_identities)
        assert len(test_ids) == 6 and len(s.spec.train_identities) == 40
        for e in s.train.entries + s.val.entries:
            assert e.label.driver not in test_ids and e.label.target not in test_ids
        for e in s.test.entries:
            assert e.label.driver in test_ids or e.label.target in test_ids
        assert len(s.train) + len(s.val) + len(s.test) == len(m)

    def test_val_fraction(self):
        m = fake_manifest(46, k=1, r=2)
        s = make_splits(m, 6, 0.05, seed=3)
        pool = len(s.train) + len(s.val)
        assert abs(len(s.val) - round(0.05 * pool)) <= 1

    def test_no_validation(self):
        s = make_splits(fake_manifest(10), 2, 0.0)
        assert len(s.val) == 0 and len(s.train) == 64

    def test_seeded(self):
        m = fake_manifest(20)
        a, b = make_splits(m, 4, 0.1, seed=1), make_splits(m, 4, 0.1, seed=1)
        assert a.spec == b.spec and a.val.text() == b.val.text()
        assert make_splits(m, 4, 0.1, seed=2).spec.test_identities != a.spec.test_identities

    @pytest.mark.parametrize("n_test", [0, 9, 10])
    def test_infeasible(self, n_test):
        with pytest.raises(ConfigurationError):
            make_splits(fake_manifest(10), n_test)

    def test_spec_rejects_leak(self):
        m = fake_manifest(4)
        spec = SplitSpec(("id00", "id01", "id02"), ("id03",))
        leaky = m.filter(lambda e: e.label.driver == "id03")
        with pytest.raises(ConfigurationError):
            spec.validate(leaky, m.subset([]))
        with pytest.raises(ConfigurationError):
            SplitSpec(("id00",), ("id00",)).validate(m.subset([]), m.subset([]))
