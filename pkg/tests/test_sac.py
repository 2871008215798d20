import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexsac.core import DeploymentMode, HyperParams
from flexsac.nn import CheckpointError, Mlp, ShapeError
from flexsac.sac import ReplayBuffer, SacAgent, TrainingDiverged, Transition, polyak_update

from oracles import uniform_chi2_pvalue


def tr(i, dim=3, r=None, done=False):
    s = np.full(dim, float(i))
    return Transition(s, 0.5, float(i) if r is None else r, s + 1.0, done)


def small_hp(**kw):
    base = dict(minibatch_size=8, hidden_size=8, warmup_random_control_steps=0,
                update_interval_sim_steps=1, buffer_capacity=1000, network_dtype="float64")
    base.update(kw)
    return HyperParams(**base)


def filled_agent(n=32, dim=3, **kw):
    agent = SacAgent(dim, small_hp(**kw))
    rng = np.random.default_rng(0)
    for _ in range(n):
        agent.buffer.add(Transition(rng.uniform(size=dim), rng.uniform(), -rng.uniform(),
                                    rng.uniform(size=dim), False))
    return agent


def test_fifo_eviction():
    buf = ReplayBuffer(3, 3, np.random.default_rng(0))
    for i in range(4):
        buf.add(tr(i))
    assert len(buf) == 3
    assert sorted(buf.r.tolist()) == [1.0, 2.0, 3.0]
    assert buf.r[buf.oldest_first()].tolist() == [1.0, 2.0, 3.0]


def test_buffer_grows_past_initial_allocation():
    buf = ReplayBuffer(5000, 2, np.random.default_rng(0))
    for i in range(3000):
        buf.add(tr(i, dim=2))
    assert len(buf) == 3000 and buf.r[:3000].tolist() == list(map(float, range(3000)))


def test_buffer_rejects_bad_state():
    buf = ReplayBuffer(3, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        buf.add(tr(0, dim=4))


def test_sampling_uniform_chi_square():
    buf = ReplayBuffer(100, 1, np.random.default_rng(42))
    for i in range(160):                        # wraps: slots hold transitions 60..159
        buf.add(tr(i, dim=1))
    assert sorted(buf.r.tolist()) == list(map(float, range(60, 160)))
    counts = np.zeros(100)
    for _ in range(10_000):
        idx = buf.sample_indices(10)
        assert len(set(idx.tolist())) == 10     # without replacement
        np.add.at(counts, idx, 1)
    assert counts.sum() == 100_000
    assert uniform_chi2_pvalue(counts) > 0.001


def test_sample_more_than_stored():
    buf = ReplayBuffer(10, 1, np.random.default_rng(0))
    buf.add(tr(0, dim=1))
    with pytest.raises(ValueError):
        buf.sample(2)


@pytest.mark.parametrize("tau", [0.0, 1.0, 3e-3])
def test_polyak_identity(tau):
    rng = np.random.default_rng(1)
    online, target = Mlp((3, 4, 1), rng), Mlp((3, 4, 1), rng)
    prev = target.params.copy()
    polyak_update(target, online, tau)
    assert np.array_equal(target.params, tau * online.params + (1.0 - tau) * prev)
    if tau == 0.0:
        assert np.array_equal(target.params, prev)
    if tau == 1.0:
        assert np.array_equal(target.params, online.params)


def test_targets_start_as_copies():
    agent = SacAgent(5, small_hp())
    assert np.array_equal(agent.q1_target.params, agent.q1.params)
    assert np.array_equal(agent.q2_target.params, agent.q2.params)
    assert agent.q1_target.params is not agent.q1.params


@pytest.mark.parametrize("tau", [0.0, 1.0, 3e-3])
def test_targets_track_online_each_update(tau):
    agent = filled_agent(tau=tau)
    for _ in range(3):
        prev = agent.q1_target.params.copy()
        agent.update()
        assert np.array_equal(agent.q1_target.params, tau * agent.q1.params + (1.0 - tau) * prev)
    if tau == 1.0:
        assert np.array_equal(agent.q2_target.params, agent.q2.params)


def test_done_masks_bootstrap():
    agent = filled_agent(gamma=0.99)
    r = np.array([-1.0, 2.5, 0.0])
    s2 = np.random.default_rng(3).uniform(size=(3, 3))
    y = agent.soft_target(r, s2, np.ones(3), np.random.default_rng(0))
    assert np.array_equal(y, r)
    y_live = agent.soft_target(r, s2, np.zeros(3), np.random.default_rng(0))
    assert not np.array_equal(y_live, r)


def test_gamma_zero_target_is_reward():
    agent = filled_agent(gamma=0.0)
    r = np.array([0.3, -0.7])
    assert np.array_equal(agent.soft_target(r, np.zeros((2, 3)), np.zeros(2),
                                            np.random.default_rng(0)), r)


def test_single_transition_q_loss_by_hand():
    agent = SacAgent(2, small_hp(minibatch_size=1, gamma=0.0))
    s = np.array([0.2, 0.9])
    agent.buffer.add(Transition(s, 0.3, -1.5, s, False))
    q1 = agent.q1.forward(np.array([0.2, 0.9, 0.3]), keep_cache=False)[0]
    q2 = agent.q2.forward(np.array([0.2, 0.9, 0.3]), keep_cache=False)[0]
    rep = agent.update()
    assert rep.q1_loss == pytest.approx((q1 + 1.5) ** 2, rel=1e-12)
    assert rep.q2_loss == pytest.approx((q2 + 1.5) ** 2, rel=1e-12)


def test_q_regression_with_frozen_policy():
    agent = filled_agent(n=10, minibatch_size=10, hidden_size=16, gamma=0.9)
    agent._policy_step = lambda s: (0.0, 0.0)
    frozen = agent.policy.params.copy()
    losses = [agent.update().q1_loss for _ in range(200)]
    assert np.array_equal(agent.policy.params, frozen)
    assert min(losses[1:]) < losses[0]
    assert losses[-1] < losses[0]


def test_warmup_actions_uniform():
    agent = SacAgent(3, small_hp(warmup_random_control_steps=10**6))
    acts = np.array([agent.select_action(np.zeros(3)) for _ in range(10_000)])
    assert abs(acts.mean() - 0.5) < 0.02
    assert acts.min() >= 0 and acts.max() < 1


def test_deterministic_action_repeatable():
    agent = SacAgent(3, small_hp())
    obs = np.array([0.1, 0.5, 0.9])
    a = agent.select_action(obs, DeploymentMode.DETERMINISTIC)
    assert a == agent.select_action(obs, "deterministic")
    assert a == pytest.approx(0.5, abs=0.05)      # small output layer: starts near the midpoint


def test_stochastic_actions_in_open_interval():
    agent = SacAgent(3, small_hp())
    acts = [agent.select_action(np.zeros(3)) for _ in range(200)]
    assert all(0 < a < 1 for a in acts) and len(set(acts)) > 1


def test_no_update_below_minibatch():
    agent = SacAgent(3, small_hp(minibatch_size=50))
    for i in range(49):
        assert agent.observe(tr(i), sim_steps=4) == []
    assert agent.updates_done == 0


@pytest.mark.parametrize("k", [1, 3])
def test_update_interval_contract(k):
    agent = SacAgent(3, small_hp(minibatch_size=4, update_interval_sim_steps=96,
                                 gradient_steps_per_update=k))
    for i in range(23):                            # 92 sim steps: no boundary crossed
        agent.observe(tr(i), sim_steps=4)
    assert agent.updates_done == 0
    agent.observe(tr(23), sim_steps=4)             # counter reaches 96
    assert agent.updates_done == k
    for i in range(24):
        agent.observe(tr(i), sim_steps=4)
    assert agent.updates_done == 2 * k


def test_nonfinite_update_is_rolled_back():
    agent = filled_agent()
    agent.buffer.r[:] = np.nan
    before = [n.params.copy() for n in agent._networks()]
    t_before = agent.opt_q1.t
    assert agent.update() is None
    assert all(np.array_equal(b, n.params) for b, n in zip(before, agent._networks()))
    assert agent.opt_q1.t == t_before and agent.nonfinite_updates == 1
    agent.update()
    with pytest.raises(TrainingDiverged):
        agent.update()


@pytest.mark.parametrize("dtype", ["float64", "float32"])
def test_checkpoint_roundtrip(tmp_path, dtype):
    agent = filled_agent(dim=4, network_dtype=dtype)
    for _ in range(5):
        agent.update()
    agent.save_checkpoint(tmp_path / "a.bin")
    back = SacAgent.load_checkpoint(tmp_path / "a.bin")
    obs = np.random.default_rng(5).uniform(size=(100, 4))
    for o in obs:
        assert agent.select_action(o, "deterministic") == back.select_action(o, "deterministic")
    for a, b in zip(agent._networks(), back._networks()):
        assert np.array_equal(a.params, b.params)
    assert back.hp == agent.hp and back.updates_done == 5
    assert back.policy.params.dtype == np.dtype(dtype)
    assert back.rng_act.random() == agent.rng_act.random()


def test_truncated_agent_checkpoint(tmp_path):
    agent = SacAgent(4, small_hp())
    agent.save_checkpoint(tmp_path / "a.bin")
    blob = (tmp_path / "a.bin").read_bytes()
    (tmp_path / "b.bin").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        SacAgent.load_checkpoint(tmp_path / "b.bin")


def test_set_one_checkpoint_on_set_three_observation(tmp_path):
    SacAgent(12, small_hp(), state_space_set=1).save_checkpoint(tmp_path / "s1.bin")
    agent = SacAgent.load_checkpoint(tmp_path / "s1.bin")
    with pytest.raises(ShapeError):
        agent.select_action(np.zeros(40), "deterministic")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200), st.integers(1, 7))
def test_buffer_size_invariant(n, cap):
    buf = ReplayBuffer(cap, 1, np.random.default_rng(0))
    for i in range(n):
        buf.add(tr(i, dim=1))
    assert len(buf) == min(n, cap)
    assert buf.r[buf.oldest_first()].tolist() == [float(i) for i in range(max(0, n - cap), n)]
