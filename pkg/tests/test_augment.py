import numpy as np
import numpy.testing as npt
import pytest

from mochastream import augment as aug
from mochastream.numeric import RngStream

rng = np.random.default_rng(51)


def test_zero_policy_is_identity():
    feats = rng.normal(size=(30, 8)).astype(np.float32)
    policy = aug.SpecAugmentPolicy(max_time_mask=0, max_freq_mask=0)
    out = aug.apply_specaugment(feats, policy, RngStream(1, 0))
    npt.assert_array_equal(out, feats)


def test_shape_preserved_and_cells_partitioned():
    feats = rng.normal(size=(50, 12)).astype(np.float32) + 5.0  # keep cells nonzero
    policy = aug.SpecAugmentPolicy(max_time_mask=10, max_freq_mask=4,
                                   num_time_masks=2, num_freq_masks=2)
    stream = RngStream(7, 3)
    plan = aug.plan_masks(50, 12, policy, stream)
    out = aug.apply_plan(feats, plan)
    assert out.shape == feats.shape
    masked = np.zeros((50, 12), dtype=bool)
    for start, length in plan.time_blocks:
        masked[start:start + length, :] = True
    for start, length in plan.freq_blocks:
        masked[:, start:start + length] = True
    npt.assert_array_equal(out[masked], 0.0)
    npt.assert_array_equal(out[~masked], feats[~masked])


def test_time_block_bounds_under_paper_defaults():
    policy = aug.SpecAugmentPolicy()  # 40/27 with the 20% cap
    feats = np.ones((100, 80), dtype=np.float32)
    for trial in range(200):
        _, blocks = aug.time_mask(feats, policy, RngStream(11, trial))
        for start, length in blocks:
            assert 0 <= length < 20  # min(40, 0.2 * 100)
            assert 0 <= start and start + length <= 100


def test_freq_block_bounds():
    policy = aug.SpecAugmentPolicy()
    feats = np.ones((50, 80), dtype=np.float32)
    for trial in range(200):
        _, blocks = aug.freq_mask(feats, policy, RngStream(13, trial))
        for start, length in blocks:
            assert 0 <= length < 27
            assert start + length <= 80


def test_freq_bound_clamped_to_feature_dim():
    policy = aug.SpecAugmentPolicy(max_freq_mask=27)
    feats = np.ones((20, 8), dtype=np.float32)
    for trial in range(100):
        _, blocks = aug.freq_mask(feats, policy, RngStream(17, trial))
        for start, length in blocks:
            assert start + length <= 8


def test_seeded_replay_reproduces_masks():
    feats = rng.normal(size=(40, 10)).astype(np.float32)
    policy = aug.SpecAugmentPolicy(max_time_mask=12, max_freq_mask=3)
    a = aug.apply_specaugment(feats, policy, RngStream(99, 4))
    b = aug.apply_specaugment(feats, policy, RngStream(99, 4))
    npt.assert_array_equal(a, b)
    plan_a = aug.plan_masks(40, 10, policy, RngStream(99, 4))
    plan_b = aug.plan_masks(40, 10, policy, RngStream(99, 4))
    assert plan_a == plan_b
    c = aug.apply_specaugment(feats, policy, RngStream(99, 5))
    assert not np.array_equal(a, c)


def test_masking_idempotent_on_zero_bands():
    feats = rng.normal(size=(30, 6)).astype(np.float32)
    policy = aug.SpecAugmentPolicy(max_time_mask=8, max_freq_mask=2)
    plan = aug.plan_masks(30, 6, policy, RngStream(3, 1))
    once = aug.apply_plan(feats, plan)
    twice = aug.apply_plan(once, plan)
    npt.assert_array_equal(once, twice)


def test_zeroed_row_count_bound():
    policy = aug.SpecAugmentPolicy(max_time_mask=10, max_freq_mask=0,
                                   num_time_masks=3)
    feats = np.ones((60, 4), dtype=np.float32)
    out = aug.apply_specaugment(feats, policy, RngStream(21, 0))
    zero_rows = int(np.sum(np.all(out == 0, axis=1)))
    assert zero_rows <= 3 * 10


def test_start_positions_uniform():
    # force zero-length blocks so the start draw is unconditional uniform
    policy = aug.SpecAugmentPolicy(max_time_mask=1, max_freq_mask=0)
    counts = np.zeros(5, dtype=np.int64)
    for trial in range(10_000):
        plan = aug.plan_masks(100, 8, policy, RngStream(1234, trial))
        (start, length), = plan.time_blocks
        assert length == 0
        counts[start // 20] += 1
    npt.assert_allclose(counts, 2000, rtol=0.05)


def test_policy_validation():
    with pytest.raises(ValueError):
        aug.SpecAugmentPolicy(max_time_mask=-1)
    with pytest.raises(ValueError):
        aug.SpecAugmentPolicy(time_fraction_cap=1.5)
