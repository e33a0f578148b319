"""Desk-scale laboratory for universal acoustic muting attacks on
encoder-decoder speech recognizers.

The package trains small Whisper-style transformer ASR models on a synthetic
spoken-token corpus, learns short adversarial audio segments that force the
decoder to emit its end-of-text token first, and evaluates the attack (mute
rate, sequence-length statistics, error breakdowns, saliency, and
embedding-geometry transferability analytics).
"""

__version__ = "0.1.0"
