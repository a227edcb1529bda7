"""Synthetic monotonic transcription task and dataset persistence.

Each symbol owns a fixed template feature vector; an utterance is a random
symbol sequence rendered as per-symbol template frames repeated a random
number of times, plus additive Gaussian noise. The frame-to-symbol alignment
is strictly monotonic by construction, so learned alignments have a ground
truth to be compared against.

On disk: features go into one tensor container (one named tensor per
utterance, in order), labels into a UTF-8 text file with one line of
space-separated token ids per utterance.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import container
from .numeric import RngStream

EOS_ID = 0  # token 0 terminates every target; symbols use ids 1..V-1


@dataclass
class SyntheticTaskSpec:
    vocab_size: int = 12
    feature_dim: int = 8
    min_symbols: int = 4
    max_symbols: int = 9
    min_repeats: int = 4
    max_repeats: int = 7
    noise_level: float = 0.1
    train_size: int = 2000
    test_size: int = 200
    seed: int = 1234

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("need the end token plus at least one symbol")
        if not 1 <= self.min_symbols <= self.max_symbols:
            raise ValueError("bad symbol count range")
        if not 1 <= self.min_repeats <= self.max_repeats:
            raise ValueError("bad repeat range")
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")


@dataclass
class Dataset:
    features: list  # float32 (T, F) arrays
    labels: list    # lists of symbol ids (no end token)

    def __len__(self):
        return len(self.features)


def symbol_templates(spec: SyntheticTaskSpec) -> np.ndarray:
    """(V, F) template matrix; row 0 (end token) stays zero and unused."""
    rng = RngStream(spec.seed, 0).derive(1)
    templates = np.zeros((spec.vocab_size, spec.feature_dim), dtype=np.float32)
    templates[1:] = rng.normal((spec.vocab_size - 1, spec.feature_dim),
                               dtype=np.float32)
    return templates


def generate_utterance(spec: SyntheticTaskSpec, templates: np.ndarray,
                       rng: RngStream):
    """One (features, symbols) pair with a monotonic alignment."""
    count = int(rng.integers(spec.min_symbols, spec.max_symbols + 1))
    symbols = [int(rng.integers(1, spec.vocab_size)) for _ in range(count)]
    rows = []
    for sym in symbols:
        repeats = int(rng.integers(spec.min_repeats, spec.max_repeats + 1))
        block = np.tile(templates[sym], (repeats, 1))
        rows.append(block)
    feats = np.concatenate(rows, axis=0)
    if spec.noise_level > 0:
        feats = feats + spec.noise_level * rng.normal(feats.shape, dtype=np.float32)
    return feats.astype(np.float32), symbols


def generate_dataset(spec: SyntheticTaskSpec, split: str = "train") -> Dataset:
    """Deterministic dataset; utterance i draws only from its own substream,
    so generation order (or parallelism) cannot change the data."""
    size = spec.train_size if split == "train" else spec.test_size
    salt = 2 if split == "train" else 3
    templates = symbol_templates(spec)
    base = RngStream(spec.seed, 0)
    features, labels = [], []
    for index in range(size):
        feats, symbols = generate_utterance(spec, templates,
                                            base.derive(salt, index))
        features.append(feats)
        labels.append(symbols)
    return Dataset(features=features, labels=labels)


def save_dataset(dataset: Dataset, features_path, labels_path) -> None:
    tensors = {f"utt{i:06d}": feats for i, feats in enumerate(dataset.features)}
    container.write_tensors(features_path, tensors)
    with open(labels_path, "w", encoding="utf-8") as fh:
        for symbols in dataset.labels:
            fh.write(" ".join(str(s) for s in symbols) + "\n")


def load_dataset(features_path, labels_path) -> Dataset:
    tensors = container.read_tensors(features_path)
    features = [tensors[name] for name in sorted(tensors)]
    labels = []
    with open(labels_path, "r", encoding="utf-8") as fh:
        for line in fh:
            labels.append([int(tok) for tok in line.split()])
    if len(labels) != len(features):
        raise ValueError(f"{labels_path}: {len(labels)} label lines for "
                         f"{len(features)} feature tensors")
    return Dataset(features=features, labels=labels)


def spec_to_dict(spec: SyntheticTaskSpec) -> dict:
    return asdict(spec)
