"""Enroll a speaker from real recordings, then score real and cloned audio.

Cloned audio carries the right formants but over-smoothed pitch jitter, so it
lands a little further from the real-speech voiceprint than held-out real
clips do. The ROC over those scores is the spoof-detection result.

    python demos/spoof_check.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from voicefp.corpus import CorpusConfig, generate_corpus, sample_identities
from voicefp.embedder import BaseEncoderConfig, CachedEncoder
from voicefp.evaluation import evaluate_task
from voicefp.forensics import REAL_ENROLLMENT, SPOOF_DETECTION
from voicefp.pipeline import enroll_from_manifest


def main(workdir):
    cfg = CorpusConfig(n_identities=6, clips_per_pair=3, real_per_identity=18, duration_s=4.0, seed=1)
    manifest = generate_corpus(sample_identities(cfg.n_identities, cfg.seed), Path(workdir) / "corpus", cfg)
    print("corpus:", manifest.counts())

    encoder = CachedEncoder(BaseEncoderConfig())
    profiles = {i: enroll_from_manifest(manifest, i, REAL_ENROLLMENT, encoder, seconds=40.0, seed=[i.encode()[-1]])
                for i in manifest.identities()}
    result = evaluate_task(profiles, manifest, SPOOF_DETECTION, encoder)
    for ident, curve in sorted(result.per_identity.items()):
        print(f"  {ident}: AUC {curve.auc:.3f}  EER {curve.eer:.3f}  ({curve.n_pos} real, {curve.n_neg} synthetic)")
    print(f"mean AUC {result.mean_auc:.3f}, operating threshold {result.operating_threshold:.4f}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(sys.argv[1])
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(tmp)
