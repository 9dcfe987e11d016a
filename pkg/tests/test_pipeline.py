import json
import math

import pytest

from voicefp.corpus import CorpusConfig, load_manifest
from voicefp.embedder import load_head
from voicefp.errors import ConfigurationError
from voicefp.forensics import SELF_ONLY
from voicefp.pipeline import ExperimentConfig, run_experiment
from voicefp.trainer import AamConfig

SMALL = ExperimentConfig(
    corpus=CorpusConfig(n_identities=6, clips_per_pair=2, real_per_identity=6, duration_s=2.0, seed=5),
    aam=AamConfig(epochs=3, seed=5),
    n_test_identities=2,
    enrollment_seconds=8.0,
    self_only_clips=1,
)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    return run_experiment(tmp_path_factory.mktemp("run"), SMALL)


class TestConfig:
    def test_round_trip(self):
        assert ExperimentConfig.from_dict(SMALL.to_dict()) == SMALL
        assert ExperimentConfig.from_dict({}) == ExperimentConfig()

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"epochs": 3})

    def test_with_seed(self):
        cfg = ExperimentConfig().with_seed(9)
        assert cfg.corpus.seed == 9 and cfg.aam.seed == 9

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.corpus.n_identities, cfg.n_test_identities, cfg.aam.epochs) == (16, 4, 10)
        assert cfg.enrollment_seconds == 120.0 and cfg.val_fraction == 0.05


class TestRun:
    def test_layout(self, small_run):
        out = small_run.out_dir
        for rel in ("corpus/manifest.jsonl", "corpus/train.jsonl", "corpus/val.jsonl", "corpus/test.jsonl",
                    "head.json", "train_log.csv", "summary.json", "reports/self_only.json",
                    "reports/spoof/report.json", "reports/fingerprint_base/report.json",
                    "reports/fingerprint_head/report.json", "reports/spoof/roc_pooled.svg"):
            assert (out / rel).exists(), rel

    def test_summary(self, small_run):
        s = json.loads((small_run.out_dir / "summary.json").read_text())
        assert s == json.loads(json.dumps(small_run.summary()))
        assert len(s["epoch_mean_loss"]) == 3
        assert all(math.isfinite(v) for v in s["epoch_mean_loss"])
        assert s["fingerprint_gain"] == pytest.approx(s["fingerprint_head_mean_auc"] - s["fingerprint_base_mean_auc"])
        assert set(small_run.timings) == {"generate", "spoof", "self_only", "fingerprint", "total"}

    def test_held_out_identities(self, small_run):
        out = small_run.out_dir
        held = set(small_run.test_identities)
        assert len(held) == 2
        head = load_head(out / "head.json")
        assert not held & set(head.provenance["classes"])
        for name in ("train", "val"):
            for e in load_manifest(out / "corpus" / f"{name}.jsonl").entries:
                assert e.label.driver not in held and e.label.target not in held
        assert sorted(small_run.fingerprint_head.per_identity) == sorted(held)

    def test_spoof_covers_everyone(self, small_run):
        assert sorted(small_run.spoof.per_identity) == small_run.manifest.identities()

    def test_self_only_block(self, small_run):
        so = small_run.self_only
        assert so["policy"] == SELF_ONLY and so["clips_per_profile"] == 1
        for v in so["per_identity"].values():
            assert 0 <= v["others_above_threshold"] <= v["others_total"]
        assert 0.0 <= so["fraction_others_above_threshold"] <= 1.0

    def test_reports_echo_config(self, small_run):
        rep = json.loads((small_run.out_dir / "reports" / "fingerprint_head" / "report.json").read_text())
        assert rep["config"]["experiment"] == json.loads(json.dumps(SMALL.to_dict()))
        assert rep["config"]["head_version"] == load_head(small_run.out_dir / "head.json").version
