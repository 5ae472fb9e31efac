import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedseg.agent import (
    AgentConfig,
    Learner,
    QNetworkSpec,
    ReplayBuffer,
    Transition,
    build_qnet,
    canonical_levels,
    epsilon_at,
    observe,
    q_values,
    resize_nearest,
    run_episode_greedy,
    select_actions,
    td_loss_and_grad,
    td_targets,
    train_local_drl,
    train_step,
)
from fedseg.core import BinaryMask, RngStream
from fedseg.data import PhantomSpec, build_sites, generate_phantom
from fedseg.metrics import mask_dsc
from fedseg.threshenv import N_LEVELS, ThresholdLevels

TINY = QNetworkSpec(input_size=16, channels=(2, 4, 4), hidden=8)


def _tiny_net(seed=0):
    net = build_qnet(TINY)
    net.init_params(RngStream(seed, 0))
    return net


def _state(seed=0):
    return RngStream(seed, 9).generator().random((2, 16, 16)).astype(np.float32)


def _transition(reward=0.0, done=True, levels=(3, 4), seed=0):
    return Transition(_state(seed), ThresholdLevels(*levels), reward, _state(seed + 1), done)


def test_qnet_has_two_heads_of_fifty():
    net = _tiny_net()
    assert q_values(net, _state()).shape == (2 * N_LEVELS,)


def test_select_actions_greedy_examples():
    q = np.zeros(100)
    q[7] = 1.0
    q[50 + 31] = 2.0
    assert select_actions(q, None, 0.0, None) == ThresholdLevels(7, 31)
    q = np.zeros(100)
    q[4] = q[9] = 1.0
    q[50 + 9] = q[50 + 4] = 1.0
    assert select_actions(q, None, 0.0, None) == ThresholdLevels(4, 4)


def test_select_actions_uniform_at_full_exploration():
    gen = RngStream(0, 0).generator()
    counts = np.zeros((2, N_LEVELS))
    n = 10_000
    for _ in range(n):
        lv = select_actions(np.zeros(100), None, 1.0, gen)
        counts[0, lv.level_upper] += 1
        counts[1, lv.level_lower] += 1
    expected = n / N_LEVELS
    for head in counts:
        chi2 = float(np.sum((head - expected) ** 2 / expected))
        # 49 dof: the 0.999 quantile is about 85
        assert chi2 < 85


# values chosen so the affine map is exact in floating point
@given(st.lists(st.integers(-1000, 1000), min_size=100, max_size=100),
       st.sampled_from([0.25, 0.5, 1.0, 3.0, 8.0]), st.integers(-50, 50))
def test_greedy_invariant_under_positive_affine(qs, a, b):
    q = np.array(qs)
    assert select_actions(q, None, 0.0, None) == select_actions(a * q + b, None, 0.0, None)


def test_select_actions_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        select_actions(np.zeros(100), None, 1.5, None)


def test_canonical_levels():
    assert canonical_levels(ThresholdLevels(3, 9)) == ThresholdLevels(9, 3)
    assert canonical_levels(ThresholdLevels(9, 3)) == ThresholdLevels(9, 3)


def test_epsilon_schedule():
    cfg = AgentConfig()
    assert epsilon_at(0, 100, cfg) == 1.0
    assert epsilon_at(25, 100, cfg) == pytest.approx(0.525)
    assert epsilon_at(50, 100, cfg) == pytest.approx(0.05)
    assert epsilon_at(1000, 100, cfg) == pytest.approx(0.05)


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.5)
    with pytest.raises(ValueError):
        AgentConfig(eps_end=-0.1)


def test_replay_fifo_eviction():
    buf = ReplayBuffer(5)
    ts = [_transition(reward=float(i)) for i in range(8)]
    for t in ts:
        buf.push(t)
    assert len(buf) == 5
    assert [t.reward for t in buf.contents()] == [3.0, 4.0, 5.0, 6.0, 7.0]


@given(st.integers(1, 20), st.integers(0, 40))
def test_replay_holds_last_capacity(cap, extra):
    buf = ReplayBuffer(cap)
    for i in range(cap + extra):
        buf.push(Transition(None, ThresholdLevels(0, 0), float(i), None, True))
    assert [t.reward for t in buf.contents()] == [float(i) for i in range(extra, cap + extra)]


def test_td_targets_examples():
    net = _tiny_net()
    y = td_targets(net, [_transition(reward=0.5, done=True)], 0.9)
    assert y.tolist() == [[0.5, 0.5]]
    y0 = td_targets(net, [_transition(reward=0.25, done=False)], 0.0)
    assert y0.tolist() == [[0.25, 0.25]]


def test_td_target_bellman_by_hand():
    # constant target network: every Q' equals the logit bias
    net = _tiny_net()
    net.params[...] = 0
    net.param_view("head_upper.bias")[...] = 1.0
    net.param_view("head_lower.bias")[...] = 1.0
    y = td_targets(net, [_transition(reward=0.0, done=False)], 0.9)
    assert np.allclose(y, [[0.9, 0.9]])


def test_loss_zero_when_q_matches_targets():
    net = _tiny_net()
    batch = [_transition(seed=i, levels=(i, 40 - i)) for i in range(4)]
    q = net.forward(np.stack([t.state for t in batch]), cache=False)
    targets = np.stack([[q[i, t.actions.level_upper], q[i, N_LEVELS + t.actions.level_lower]]
                        for i, t in enumerate(batch)]).astype(np.float64)
    loss, dq = td_loss_and_grad(net, batch, targets)
    assert loss == 0.0 and not dq.any()


def test_train_step_skips_small_buffer_and_syncs():
    cfg = AgentConfig(batch=2, target_sync_every=3)
    learner = Learner.create(_tiny_net(), cfg)
    gen = RngStream(0, 1).generator()
    assert train_step(learner, gen) is None
    for i in range(4):
        learner.buffer.push(_transition(reward=1.0, seed=i))
    for _ in range(3):
        assert train_step(learner, gen) is not None
    assert learner.target.params.tobytes() == learner.qnet.params.tobytes()
    train_step(learner, gen)
    assert learner.target.params.tobytes() != learner.qnet.params.tobytes()


def test_single_transition_overfit():
    cfg = AgentConfig(batch=1, lr=1e-2, target_sync_every=10**6)
    learner = Learner.create(_tiny_net(), cfg)
    t = _transition(reward=0.7, done=True, levels=(10, 20))
    learner.buffer.push(t)
    gen = RngStream(0, 1).generator()
    for _ in range(200):
        train_step(learner, gen)
    q = q_values(learner.qnet, t.state)
    assert abs(q[10] - 0.7) < 1e-3 and abs(q[N_LEVELS + 20] - 0.7) < 1e-3


def test_resize_nearest():
    a = np.arange(16).reshape(4, 4)
    assert resize_nearest(a, 2).tolist() == [[5, 7], [13, 15]]
    assert resize_nearest(a, 4) is a
    s = generate_phantom(PhantomSpec(), RngStream(0, 0))
    assert observe(s.image, BinaryMask.blank(s.image.shape), 16).shape == (2, 16, 16)


def test_greedy_episode_properties():
    s = generate_phantom(PhantomSpec(width=32, height=32), RngStream(0, 0))
    net = _tiny_net()
    a = run_episode_greedy(net, s.image, 16)
    b = run_episode_greedy(net, s.image, 16)
    assert len(a.masks) == 3 and a.masks == b.masks and a.final_mask == b.final_mask


def test_constant_qnet_repeats_levels():
    s = generate_phantom(PhantomSpec(width=32, height=32), RngStream(0, 0))
    net = _tiny_net()
    net.params[...] = 0
    net.param_view("head_upper.bias")[12] = 1.0
    net.param_view("head_lower.bias")[30] = 1.0
    ep = run_episode_greedy(net, s.image, 16)
    assert ep.levels == [ThresholdLevels(12, 30)] * 3
    assert ep.final_mask == ep.masks[0]


def _site(seed=0):
    return build_sites((2,), 4, PhantomSpec(width=32, height=32, seed=seed))[0]


def test_train_local_drl_zero_epochs_and_empty():
    net = _tiny_net()
    before = net.params.copy()
    out, stats = train_local_drl(_site().train, 0, AgentConfig(), RngStream(0, 0), qnet=net, spec=TINY)
    assert np.array_equal(out.params, before) and stats.env_steps == 0
    with pytest.raises(ValueError):
        train_local_drl([], 1, AgentConfig(), RngStream(0, 0), spec=TINY)


def test_train_local_drl_deterministic():
    cfg = AgentConfig(batch=4, buffer_capacity=100)
    a, sa = train_local_drl(_site().train, 2, cfg, RngStream(1, 0), spec=TINY)
    b, sb = train_local_drl(_site().train, 2, cfg, RngStream(1, 0), spec=TINY)
    assert a.params.tobytes() == b.params.tobytes()
    assert sa.epoch_losses == sb.epoch_losses
    assert sa.env_steps == 2 * len(_site().train) * 3


@pytest.mark.slow
def test_training_improves_greedy_dsc():
    site = build_sites((4,), 5, PhantomSpec(width=32, height=32, seed=7))[0]
    spec = QNetworkSpec(input_size=16, channels=(4, 8, 8), hidden=32)
    cfg = AgentConfig(buffer_capacity=1000, lr=1e-4 * 3)
    init = build_qnet(spec)
    init.init_params(RngStream(0, 0).child(0))

    def score(net):
        return np.mean([mask_dsc(run_episode_greedy(net, s.image, 16).final_mask, s.gt) for s in site.samples])

    trained, _ = train_local_drl(site.train, 15, cfg, RngStream(0, 0), spec=spec, early_stopping=False)
    assert score(trained) > score(init)
