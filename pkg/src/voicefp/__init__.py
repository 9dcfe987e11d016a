"""Voiceprint forensics on a simulated reenactment corpus.

Modules, in pipeline order: :mod:`audio_io` (WAV and resampling),
:mod:`features` (log-mel plus prosody), :mod:`embedder` (stats-pooling
voiceprint and projection head), :mod:`trainer` (margin-softmax head
fine-tuning), :mod:`forensics` (enrollment and decisions), :mod:`corpus`
(simulator, manifests, splits), :mod:`evaluation` (ROC, AUC, EER, reports)
and :mod:`pipeline` (end-to-end experiments).
"""

__version__ = "0.1.0"
