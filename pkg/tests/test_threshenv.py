from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedseg.core import BinaryMask, Image2D, RngStream
from fedseg.data import PhantomSpec, generate_phantom
from fedseg.metrics import dilate, mask_dsc
from fedseg.threshenv import (
    N_LEVELS,
    RewardConfig,
    ThresholdLevels,
    ThresholdPair,
    brute_force_best,
    combine_masks,
    compute_thresholds,
    env_reset,
    env_step,
    reward,
    reward_exp,
    threshold_segment,
)


def exact_reward_exp(d, k):
    getcontext().prec = 40
    num = (Decimal(k) * Decimal(d)).exp() - 1
    return float(num / (Decimal(k).exp() - 1))


def test_compute_thresholds_examples():
    p = compute_thresholds(200.0, ThresholdLevels(25, 10))
    assert p == ThresholdPair(150.0, 120.0)
    assert compute_thresholds(77.0, ThresholdLevels(0, 0)) == ThresholdPair(38.5, 38.5)
    assert compute_thresholds(255.0, ThresholdLevels(49, 0)).th_upper == pytest.approx(252.45, abs=1e-9)


def test_compute_thresholds_swaps_and_validates():
    assert compute_thresholds(200.0, ThresholdLevels(10, 25)) == ThresholdPair(150.0, 120.0)
    with pytest.raises(ValueError):
        compute_thresholds(0.0, ThresholdLevels(1, 1))
    with pytest.raises(ValueError):
        ThresholdLevels(50, 0)
    with pytest.raises(ValueError):
        ThresholdLevels(0, -1)


@given(st.floats(1e-3, 1e5), st.integers(0, 49), st.integers(0, 49))
def test_thresholds_within_half_to_max(max_p, u, lw):
    p = compute_thresholds(max_p, ThresholdLevels(u, lw))
    assert max_p / 2 <= p.th_lower <= p.th_upper < max_p


def test_threshold_segment_examples():
    img = Image2D.from_flat(2, 2, [100, 120, 150, 160])
    assert threshold_segment(img, ThresholdPair(150, 120)).data.ravel().tolist() == [0, 1, 1, 0]
    assert threshold_segment(img, ThresholdPair(250, 200)).area() == 0
    assert threshold_segment(img, ThresholdPair(150, 150)).data.ravel().tolist() == [0, 0, 1, 0]


@given(arrays(np.float32, (5, 5), elements=st.floats(0, 255, width=32)),
       st.floats(0, 255), st.floats(0, 255), st.floats(0, 50))
def test_band_widening_never_removes_pixels(a, lo, hi, extra):
    lo, hi = min(lo, hi), max(lo, hi)
    img = Image2D(a)
    base = threshold_segment(img, ThresholdPair(hi, lo)).data
    wider = threshold_segment(img, ThresholdPair(hi + extra, max(lo - extra, 0))).data
    assert np.all(wider >= base)


def test_reward_exp_examples():
    assert reward_exp(1.0, 5.0) == 1.0
    assert reward_exp(0.0, 5.0) == 0.0
    assert reward_exp(0.5, 5.0) == pytest.approx(0.0758581, abs=1e-7)
    assert abs(reward_exp(0.5, 5.0) - exact_reward_exp("0.5", 5)) < 1e-9
    assert abs(reward_exp(0.8, 5.0) - exact_reward_exp("0.8", 5)) < 1e-9


def test_reward_exp_strictly_increasing():
    for k in (0.5, 1.0, 5.0, 10.0):
        vals = [reward_exp(d, k) for d in np.linspace(0, 1, 201)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


def test_reward_examples():
    gt = np.zeros((6, 6), dtype=np.uint8)
    gt[2:4, 2:4] = 1
    g = BinaryMask(gt)
    r = reward(g, g)
    assert 0 < r <= 1
    assert r == reward_exp(mask_dsc(g, dilate(g, 1)), 5.0)
    far = np.zeros((6, 6), dtype=np.uint8)
    far[5, 5] = 1
    assert reward(BinaryMask(far), BinaryMask(np.pad(np.ones((1, 1), np.uint8), ((0, 5), (0, 5))))) == -1.0


def test_reward_dsc_08_hand_value():
    # 4 gt pixels, prediction hits 4 and adds 2 false positives: DSC = 8/10
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, :] = 1
    pred = gt.copy()
    pred[3, 0:2] = 1
    r = reward(BinaryMask(pred), BinaryMask(gt), RewardConfig(dilation_iters=0))
    assert abs(r - 0.3635914) < 1e-7
    assert abs(r - exact_reward_exp("0.8", 5)) < 1e-9


def test_reward_gate_uses_plain_gt():
    # dsc vs plain gt is 0.5 (below gate), vs dilated gt higher: penalty applies
    gt = np.zeros((5, 5), dtype=np.uint8)
    gt[2, 2] = 1
    pred = np.zeros_like(gt)
    pred[2, 2] = pred[2, 3] = pred[1, 2] = 1
    r = reward(BinaryMask(pred), BinaryMask(gt))
    d_rexp = mask_dsc(BinaryMask(pred), dilate(BinaryMask(gt), 1))
    assert r == pytest.approx(reward_exp(d_rexp, 5.0) - 1)


@settings(max_examples=50)
@given(arrays(np.uint8, (6, 6), elements=st.integers(0, 1)), arrays(np.uint8, (6, 6), elements=st.integers(0, 1)))
def test_reward_bounds(a, b):
    assert -1.0 <= reward(BinaryMask(a), BinaryMask(b)) <= 1.0


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(k=0)
    with pytest.raises(ValueError):
        RewardConfig(gate=1.0)


def _phantom(seed=0, size=32):
    return generate_phantom(PhantomSpec(width=size, height=size), RngStream(seed, 0))


def test_episode_mechanics():
    s = _phantom()
    state = env_reset(s.image, s.gt)
    assert state.step_index == 0 and state.mask.area() == 0 and not state.done
    masks = []
    for i in range(3):
        state, r, done = env_step(state, ThresholdLevels(30 + i, 20), RewardConfig())
        masks.append(state.mask)
        assert -1 <= r <= 1
        assert done == (i == 2)
    with pytest.raises(RuntimeError):
        env_step(state, ThresholdLevels(1, 1))
    a = env_step(env_reset(s.image, s.gt), ThresholdLevels(5, 9))
    b = env_step(env_reset(s.image, s.gt), ThresholdLevels(5, 9))
    assert a[0].mask == b[0].mask and a[1] == b[1]


def test_env_without_gt_has_no_reward():
    s = _phantom()
    _, r, _ = env_step(env_reset(s.image), ThresholdLevels(3, 4))
    assert r is None


def test_env_rejects_black_image():
    with pytest.raises(ValueError):
        env_reset(Image2D(np.zeros((4, 4))))


def test_combine_masks_examples():
    m = BinaryMask(np.eye(3, dtype=np.uint8))
    assert combine_masks([m, m, m]) == m
    singles = []
    for i in range(3):
        a = np.zeros((3, 3), np.uint8)
        a[i, 0] = 1
        singles.append(BinaryMask(a))
    assert combine_masks(singles).area() == 3
    assert combine_masks([m, BinaryMask.blank((3, 3))]) == m
    with pytest.raises(ValueError):
        combine_masks([m, BinaryMask.blank((2, 3))])


@settings(max_examples=30)
@given(st.lists(arrays(np.uint8, (4, 4), elements=st.integers(0, 1)), min_size=1, max_size=3))
def test_union_contains_each_mask(arrs):
    u = combine_masks([BinaryMask(a) for a in arrs]).data
    for a in arrs:
        assert np.all(u >= a)


def naive_brute_force(image, gt):
    max_p = float(image.data.max())
    best = (-1.0, None)
    for u in range(N_LEVELS):
        for lw in range(N_LEVELS):
            lv = ThresholdLevels(u, lw)
            d = mask_dsc(threshold_segment(image, compute_thresholds(max_p, lv)), gt)
            if d > best[0]:
                best = (d, lv)
    return best[1], best[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_brute_force_matches_double_loop(seed):
    s = _phantom(seed, 16)
    assert brute_force_best(s.image, s.gt) == naive_brute_force(s.image, s.gt)


def test_brute_force_realizable_optimum():
    s = _phantom(4, 24)
    target = threshold_segment(s.image, compute_thresholds(float(s.image.data.max()), ThresholdLevels(30, 12)))
    lv, d = brute_force_best(s.image, target)
    assert d == 1.0
    assert threshold_segment(s.image, compute_thresholds(float(s.image.data.max()), lv)) == target


def test_brute_force_empty_gt_tie_break():
    # only the max pixel lies above the top level, so any band excluding it must be empty:
    # (0, 0) selects intensity == max/2, absent here, and is the lexicographically smallest pair
    img = Image2D(np.array([[10.0, 100.0]]))
    lv, d = brute_force_best(img, BinaryMask.blank((1, 2)))
    assert (lv, d) == (ThresholdLevels(0, 0), 1.0)


def test_brute_force_dominates_random_pairs():
    s = _phantom(5, 32)
    _, best = brute_force_best(s.image, s.gt)
    gen = RngStream(9, 0).generator()
    max_p = float(s.image.data.max())
    for _ in range(20):
        lv = ThresholdLevels(*map(int, gen.integers(0, N_LEVELS, 2)))
        assert best >= mask_dsc(threshold_segment(s.image, compute_thresholds(max_p, lv)), s.gt)
