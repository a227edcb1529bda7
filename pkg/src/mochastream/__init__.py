"""Streaming multi-head monotonic chunkwise attention, desk scale.

Library layout:

* ``numeric``   — validated float tensors, stable nonlinearities, counter RNG
* ``attention`` — monotonic/chunkwise kernels, expected and hard modes
* ``multihead`` — shared-parameter head splitting and context averaging
* ``model``     — recurrent encoder/decoder with pooling, checkpoints
* ``augment``   — time/frequency feature masking
* ``training``  — losses, beam search, expected-error fine-tuning, optimizer
* ``oracle``    — brute-force and finite-difference verifiers
* ``estimator`` — scikit-learn style wrappers (fit/predict/transform)
* ``cli``       — command-line harness (generate/train/decode/augment/oracle)
"""

__version__ = "0.1.0"

__all__ = ["StreamingRecognizer", "SpecAugmentTransform", "__version__"]


def __getattr__(name):
    # estimator pulls in the full stack; load it on first use only
    if name in ("StreamingRecognizer", "SpecAugmentTransform"):
        from . import estimator
        return getattr(estimator, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
