import csv

import numpy as np
import pytest

from preqnlab import rlcore
from preqnlab.errors import EmptyBufferError, ProtocolError, ShapeError


def transition(i, obs_dim=1, act_dim=1):
    return rlcore.Transition(np.full(obs_dim, float(i)), np.zeros(act_dim), float(i), np.full(obs_dim, i + 1.0))


class TestPendulum:
    def test_upright_equilibrium(self):
        env = rlcore.pendulum_env(0)
        env.set_state([0.0, 0.0])
        obs, r, terminal, truncated = env.step([0.0])
        np.testing.assert_array_equal(obs, [1.0, 0.0, 0.0])
        assert r == 0.0 and not terminal and not truncated

    def test_hanging_reward(self):
        env = rlcore.pendulum_env(0)
        env.set_state([np.pi, 0.0])
        _, r, _, _ = env.step([0.0])
        assert r == pytest.approx(-np.pi ** 2, abs=1e-12)

    def test_one_step_by_hand(self):
        env = rlcore.pendulum_env(0)
        env.set_state([0.5, 1.0])
        obs, r, _, _ = env.step([1.5])
        thdot = 1.0 + (15.0 * np.sin(0.5) + 3.0 * 1.5) * 0.05
        th = 0.5 + thdot * 0.05
        np.testing.assert_allclose(obs, [np.cos(th), np.sin(th), thdot], atol=1e-15)
        assert r == pytest.approx(-(0.25 + 0.1 + 0.001 * 2.25), abs=1e-15)

    def test_torque_and_speed_clipped(self):
        env = rlcore.pendulum_env(0)
        env.set_state([0.0, 7.9])
        obs, r, _, _ = env.step([100.0])
        assert obs[2] == 8.0
        assert r == pytest.approx(-(0.1 * 7.9 ** 2 + 0.004), abs=1e-12)

    def test_random_rollout_reward_bounds(self):
        env = rlcore.pendulum_env(1)
        trace = rlcore.rollout(env, lambda o, g: g.uniform(-2, 2, 1), 200, np.random.default_rng(1))
        lo = -(np.pi ** 2 + 0.1 * 64 + 0.001 * 4)
        assert all(lo <= t.r <= 0 for t in trace)
        assert len(trace) == 200

    def test_reset_distribution(self):
        env = rlcore.pendulum_env(2)
        for _ in range(100):
            env.reset()
            assert -np.pi <= env.state[0] <= np.pi and -1 <= env.state[1] <= 1


class TestMassPoint:
    def test_origin_is_fixed(self):
        env = rlcore.masspoint_env(0)
        env.set_state(np.zeros(4))
        obs, r, _, _ = env.step(np.zeros(2))
        np.testing.assert_array_equal(obs, np.zeros(4))
        assert r == 0.0

    def test_reward_formula(self):
        env = rlcore.masspoint_env(0)
        env.set_state([1.0, 0.0, 0.0, 0.0])
        assert env.step(np.zeros(2))[1] == -1.0

    def test_constant_push_closed_form(self):
        env = rlcore.masspoint_env(0)
        env.set_state(np.zeros(4))
        dt = 0.1
        for k in range(1, 31):
            obs, _, _, _ = env.step([1.0, 0.0])
            if k <= 20:
                # v_k = k dt, p_k = dt^2 k (k + 1) / 2 until the velocity clip at 2
                assert obs[2] == pytest.approx(k * dt, abs=1e-12)
                assert obs[0] == pytest.approx(dt * dt * k * (k + 1) / 2, abs=1e-12)
            else:
                assert obs[2] == 2.0
                assert obs[0] == pytest.approx(2.1 + 0.2 * (k - 20), abs=1e-12)
            assert obs[1] == 0.0 and obs[3] == 0.0

    def test_reset_at_rest(self):
        env = rlcore.masspoint_env(3)
        obs = env.reset()
        assert np.all(np.abs(obs[:2]) <= 2) and np.all(obs[2:] == 0)


class TestProtocol:
    @pytest.mark.parametrize("name", sorted(rlcore.ENVS))
    def test_step_before_reset(self, name):
        with pytest.raises(ProtocolError):
            rlcore.make_env(name, 0).step(np.zeros(rlcore.ENVS[name].act_dim))

    @pytest.mark.parametrize("name", sorted(rlcore.ENVS))
    def test_horizon(self, name):
        env = rlcore.make_env(name, 0)
        env.reset()
        flags = [env.step(np.zeros(env.act_dim))[2:] for _ in range(env.horizon)]
        assert all(not term for term, _ in flags)
        assert [trunc for _, trunc in flags] == [False] * (env.horizon - 1) + [True]
        with pytest.raises(ProtocolError):
            env.step(np.zeros(env.act_dim))

    @pytest.mark.parametrize("name", sorted(rlcore.ENVS))
    def test_deterministic(self, name):
        def run():
            env = rlcore.make_env(name, 11)
            return rlcore.rollout(env, lambda o, g: rlcore.uniform_random_action(env, g), 250, np.random.default_rng(5))
        a, b = run(), run()
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.s, y.s)
            np.testing.assert_array_equal(x.a, y.a)
            assert x.r == y.r and x.done == y.done == 0.0
            assert x.s.shape == (rlcore.ENVS[name].obs_dim,)

    def test_unknown_env(self):
        with pytest.raises(ValueError):
            rlcore.make_env("cartpole")


class TestRails:
    def test_sign_rule(self):
        env = rlcore.pendulum_env(0)
        assert rlcore.rails_action(env, [0.3])[0] == 2.0
        assert rlcore.rails_action(env, [-0.7])[0] == -2.0
        assert rlcore.rails_action(env, [0.0])[0] == 2.0

    def test_frequencies(self):
        env = rlcore.masspoint_env(0)
        rng = np.random.default_rng(0)
        draws = np.array([rlcore.rails_random_policy(env, rng) for _ in range(10_000)])
        assert set(np.unique(draws)) == {-1.0, 1.0}
        for freq in (draws == 1.0).mean(axis=0):
            assert abs(freq - 0.5) <= 0.02

    def test_dataset_shape(self):
        xs = rlcore.collect_rails_random_dataset(rlcore.pendulum_env(0), 256, np.random.default_rng(0))
        assert xs.shape == (256, 4)
        assert set(np.unique(xs[:, 3])) <= {-2.0, 2.0}


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = rlcore.ReplayBuffer(1, 1, capacity=3)
        for i in range(1, 5):
            rlcore.buffer_push(buf, transition(i))
        assert len(buf) == 3
        np.testing.assert_array_equal(buf.contents().r, [2.0, 3.0, 4.0])

    def test_contents_are_last_capacity(self):
        buf = rlcore.ReplayBuffer(2, 1, capacity=5)
        for i in range(23):
            buf.push(transition(i, 2))
            assert len(buf) <= 5
        np.testing.assert_array_equal(buf.contents().r, np.arange(18, 23))

    def test_growth_preserves_order(self):
        buf = rlcore.ReplayBuffer(1, 1, capacity=3000)
        for i in range(2500):
            buf.push(transition(i))
        np.testing.assert_array_equal(buf.contents().r, np.arange(2500))

    def test_single_element_sample(self):
        buf = rlcore.ReplayBuffer(1, 1)
        buf.push(transition(7))
        batch = rlcore.buffer_sample(buf, 4, np.random.default_rng(0))
        assert len(batch) == 4 and np.all(batch.r == 7.0)
        assert all(t.r == 7.0 for t in batch.transitions())

    def test_sample_deterministic(self):
        buf = rlcore.ReplayBuffer(1, 1)
        for i in range(50):
            buf.push(transition(i))
        a = buf.sample(20, np.random.default_rng(9)).r
        b = buf.sample(20, np.random.default_rng(9)).r
        np.testing.assert_array_equal(a, b)

    def test_empty(self):
        with pytest.raises(EmptyBufferError):
            rlcore.ReplayBuffer(1, 1).sample(1, np.random.default_rng(0))

    def test_shape_check(self):
        with pytest.raises(ShapeError):
            rlcore.ReplayBuffer(2, 1).push(transition(0))

    def test_batch_roundtrip(self):
        ts = [transition(i, 3, 2) for i in range(4)]
        batch = rlcore.Batch.from_transitions(ts)
        assert batch.s.shape == (4, 3) and batch.a.shape == (4, 2)
        back = batch.transitions()
        assert [t.r for t in back] == [0.0, 1.0, 2.0, 3.0]


def test_trace_csv(tmp_path):
    env = rlcore.masspoint_env(0)
    trace = rlcore.rollout(env, lambda o, g: rlcore.rails_random_policy(env, g), 5, np.random.default_rng(0))
    path = tmp_path / "trace.csv"
    rlcore.write_trace_csv(trace, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "s0", "s1", "s2", "s3", "a0", "a1", "r", "done"]
    assert len(rows) == 6
    assert float(rows[3][7]) == trace[2].r
