"""Time and frequency masking of feature matrices (SpecAugment-style).

Blocks are zeroed ("dropped"), never mean-filled, and time blocks are capped
at a fraction of the utterance length on top of the absolute maximum. Time
warping is deliberately not implemented. All draws flow through a caller-
supplied random stream, so identical (seed, stream, input) triples reproduce
identical masks in any execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import RngStream


@dataclass
class SpecAugmentPolicy:
    """Masking policy. Defaults follow the 27/40 sizes with a 20% length cap;
    one mask per axis (counts are configurable, the source recipe leaves them
    open)."""

    max_time_mask: int = 40
    max_freq_mask: int = 27
    num_time_masks: int = 1
    num_freq_masks: int = 1
    time_fraction_cap: float = 0.2

    def __post_init__(self):
        if self.max_time_mask < 0 or self.max_freq_mask < 0:
            raise ValueError("mask bounds must be non-negative")
        if not 0.0 <= self.time_fraction_cap <= 1.0:
            raise ValueError("time fraction cap must lie in [0, 1]")
        if self.num_time_masks < 0 or self.num_freq_masks < 0:
            raise ValueError("mask counts must be non-negative")

    @classmethod
    def disabled(cls) -> "SpecAugmentPolicy":
        return cls(max_time_mask=0, max_freq_mask=0)


@dataclass
class MaskPlan:
    """Block coordinates drawn for one application: (start, length) pairs."""

    time_blocks: list
    freq_blocks: list


def _draw_blocks(rng: RngStream, extent: int, bound: int, count: int):
    """Draw ``count`` blocks: length from [0, bound), start from [0, extent - length).
    The length draw happens even when the bound is empty so the draw sequence
    (and downstream reproducibility) does not depend on the policy."""
    blocks = []
    for _ in range(count):
        length = int(rng.integers(0, max(bound, 1)))
        start = int(rng.integers(0, extent - length))
        blocks.append((start, length))
    return blocks


def plan_masks(num_frames: int, num_bins: int, policy: SpecAugmentPolicy,
               rng: RngStream) -> MaskPlan:
    """Draw all mask coordinates: time blocks first, then frequency blocks."""
    if num_frames < 1 or num_bins < 1:
        raise ValueError("need at least one frame and one bin")
    time_bound = min(policy.max_time_mask,
                     int(policy.time_fraction_cap * num_frames))
    freq_bound = min(policy.max_freq_mask, num_bins)
    return MaskPlan(
        time_blocks=_draw_blocks(rng, num_frames, time_bound, policy.num_time_masks),
        freq_blocks=_draw_blocks(rng, num_bins, freq_bound, policy.num_freq_masks),
    )


def apply_plan(feats: np.ndarray, plan: MaskPlan) -> np.ndarray:
    out = feats.copy()
    for start, length in plan.time_blocks:
        out[start:start + length, :] = 0.0
    for start, length in plan.freq_blocks:
        out[:, start:start + length] = 0.0
    return out


def time_mask(feats: np.ndarray, policy: SpecAugmentPolicy, rng: RngStream):
    """Zero random time blocks; returns (masked, blocks)."""
    time_bound = min(policy.max_time_mask,
                     int(policy.time_fraction_cap * feats.shape[0]))
    blocks = _draw_blocks(rng, feats.shape[0], time_bound, policy.num_time_masks)
    return apply_plan(feats, MaskPlan(blocks, [])), blocks


def freq_mask(feats: np.ndarray, policy: SpecAugmentPolicy, rng: RngStream):
    """Zero random frequency bands; returns (masked, blocks)."""
    freq_bound = min(policy.max_freq_mask, feats.shape[1])
    blocks = _draw_blocks(rng, feats.shape[1], freq_bound, policy.num_freq_masks)
    return apply_plan(feats, MaskPlan([], blocks)), blocks


def apply_specaugment(feats: np.ndarray, policy: SpecAugmentPolicy,
                      rng: RngStream) -> np.ndarray:
    """Time masks then frequency masks; unmasked cells bitwise unchanged."""
    return apply_plan(feats, plan_masks(feats.shape[0], feats.shape[1], policy, rng))
