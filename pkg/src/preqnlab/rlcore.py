"""Toy continuous-control tasks, exploration policies and experience replay."""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyBufferError, ProtocolError, ShapeError


def wrap_angle(x):
    return ((x + np.pi) % (2.0 * np.pi)) - np.pi


class ContinuousEnv:
    """Deterministic-given-seed episodic task with a box action space.

    ``step`` returns ``(obs, reward, terminal, truncated)``. Neither built-in
    task has terminal states; ``truncated`` flags the horizon cut.
    """

    obs_dim = 0
    act_dim = 0
    horizon = 0

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.t = 0

    @property
    def act_low(self):
        raise NotImplementedError

    @property
    def act_high(self):
        raise NotImplementedError

    def reset(self):
        self.state = self._sample_initial_state()
        self.t = 0
        return self.observe()

    def set_state(self, state):
        self.state = np.array(state, dtype=np.float64)
        self.t = 0
        return self.observe()

    def step(self, action):
        if self.state is None:
            raise ProtocolError("call reset() before step()")
        if self.t >= self.horizon:
            raise ProtocolError("episode is over; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(self.act_dim), self.act_low, self.act_high)
        reward = self._reward(a)
        self.state = self._dynamics(a)
        self.t += 1
        return self.observe(), float(reward), False, self.t >= self.horizon

    def _sample_initial_state(self):
        raise NotImplementedError

    def _dynamics(self, a):
        raise NotImplementedError

    def _reward(self, a):
        raise NotImplementedError

    def observe(self):
        raise NotImplementedError


class Pendulum(ContinuousEnv):
    """Torque-limited swing-up; angle 0 is upright."""

    obs_dim = 3  # cos, sin, angular velocity
    act_dim = 1
    horizon = 200
    g = 10.0
    m = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    @property
    def act_low(self):
        return np.array([-self.max_torque])

    @property
    def act_high(self):
        return np.array([self.max_torque])

    def _sample_initial_state(self):
        return np.array([self.rng.uniform(-np.pi, np.pi), self.rng.uniform(-1.0, 1.0)])

    def _dynamics(self, a):
        th, thdot = self.state
        acc = 3.0 * self.g / (2.0 * self.length) * np.sin(th) + 3.0 / (self.m * self.length ** 2) * a[0]
        thdot = np.clip(thdot + acc * self.dt, -self.max_speed, self.max_speed)
        return np.array([th + thdot * self.dt, thdot])

    def _reward(self, a):
        th, thdot = self.state
        return -(wrap_angle(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * a[0] ** 2)

    def observe(self):
        th, thdot = self.state
        return np.array([np.cos(th), np.sin(th), thdot])


class MassPoint(ContinuousEnv):
    """Planar double integrator driven towards the origin."""

    obs_dim = 4  # position, velocity
    act_dim = 2
    horizon = 100
    dt = 0.1
    max_speed = 2.0

    @property
    def act_low(self):
        return -np.ones(2)

    @property
    def act_high(self):
        return np.ones(2)

    def _sample_initial_state(self):
        return np.concatenate([self.rng.uniform(-2.0, 2.0, size=2), np.zeros(2)])

    def _dynamics(self, a):
        pos, vel = self.state[:2], self.state[2:]
        vel = np.clip(vel + a * self.dt, -self.max_speed, self.max_speed)
        return np.concatenate([pos + vel * self.dt, vel])

    def _reward(self, a):
        pos = self.state[:2]
        return -(pos @ pos) - 0.01 * (a @ a)

    def observe(self):
        return self.state.copy()


ENVS = {"pendulum": Pendulum, "masspoint": MassPoint}


def pendulum_env(seed=None):
    return Pendulum(seed)


def masspoint_env(seed=None):
    return MassPoint(seed)


def make_env(name, seed=None):
    try:
        return ENVS[name](seed)
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None


def rails_random_policy(env, rng):
    """sgn(u), u ~ Unif(action box), mapped onto the box corners (sign 0 -> high)."""
    low, high = env.act_low, env.act_high
    u = rng.uniform(low, high)
    return rails_action(env, u)


def rails_action(env, u):
    return np.where(np.asarray(u) >= 0.0, env.act_high, env.act_low)


def uniform_random_action(env, rng):
    return rng.uniform(env.act_low, env.act_high)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: float = 0.0


@dataclass(frozen=True)
class Batch:
    """Column-stacked transitions; ``len(batch)`` is the number of samples."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.r.shape[0]

    @classmethod
    def from_transitions(cls, transitions):
        ts = list(transitions)
        return cls(np.array([t.s for t in ts], dtype=np.float64),
                   np.array([t.a for t in ts], dtype=np.float64),
                   np.array([t.r for t in ts], dtype=np.float64),
                   np.array([t.s_next for t in ts], dtype=np.float64),
                   np.array([t.done for t in ts], dtype=np.float64))

    def replace(self, **changes):
        return replace(self, **changes)

    def transitions(self):
        return [Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], float(self.done[i]))
                for i in range(len(self))]


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly with replacement."""

    def __init__(self, obs_dim, act_dim, capacity=1_000_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.capacity = int(capacity)
        self.size = 0
        self._next = 0
        self._alloc = 0
        self._s = np.empty((0, obs_dim))
        self._a = np.empty((0, act_dim))
        self._r = np.empty(0)
        self._s2 = np.empty((0, obs_dim))
        self._d = np.empty(0)

    def __len__(self):
        return self.size

    def _grow(self):
        # storage grows geometrically up to capacity so a 1e6 default costs nothing up front
        new = min(self.capacity, max(1024, 2 * self._alloc))
        for name in ("_s", "_a", "_r", "_s2", "_d"):
            old = getattr(self, name)
            arr = np.empty((new,) + old.shape[1:])
            arr[:self._alloc] = old
            setattr(self, name, arr)
        self._alloc = new

    def push(self, t):
        s = np.asarray(t.s, dtype=np.float64)
        a = np.asarray(t.a, dtype=np.float64)
        s2 = np.asarray(t.s_next, dtype=np.float64)
        if s.shape != (self.obs_dim,) or s2.shape != (self.obs_dim,) or a.shape != (self.act_dim,):
            raise ShapeError("transition dimensions do not match the buffer")
        if self._next >= self._alloc:
            self._grow()
        i = self._next
        self._s[i], self._a[i], self._r[i], self._s2[i], self._d[i] = s, a, t.r, s2, t.done
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self):
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self._next + np.arange(self.capacity)) % self.capacity

    def contents(self):
        """Stored transitions, oldest first."""
        return self._gather(self._order())

    def _gather(self, idx):
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        return self._gather(rng.integers(0, self.size, size=batch_size))


def buffer_push(buf, transition):
    buf.push(transition)


def buffer_sample(buf, batch_size, rng):
    return buf.sample(batch_size, rng)


def rollout(env, policy, n_steps, rng):
    """Run ``policy(obs, rng)`` for ``n_steps``, resetting at the horizon."""
    trace = []
    obs = env.reset()
    for _ in range(n_steps):
        a = np.asarray(policy(obs, rng), dtype=np.float64)
        nxt, r, terminal, truncated = env.step(a)
        trace.append(Transition(obs, np.clip(a, env.act_low, env.act_high), r, nxt, float(terminal)))
        obs = env.reset() if (terminal or truncated) else nxt
    return trace


def collect_rails_random_dataset(env, n, rng):
    """``n`` network inputs (obs ++ action) visited by the rails-random policy."""
    trace = rollout(env, lambda obs, g: rails_random_policy(env, g), n, rng)
    return np.array([np.concatenate([t.s, t.a]) for t in trace])


def write_trace_csv(trace, path):
    obs_dim = len(trace[0].s) if trace else 0
    act_dim = len(trace[0].a) if trace else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"s{i}" for i in range(obs_dim)] + [f"a{i}" for i in range(act_dim)] + ["r", "done"])
        for k, t in enumerate(trace):
            w.writerow([k] + [repr(float(x)) for x in t.s] + [repr(float(x)) for x in t.a]
                       + [repr(float(t.r)), int(t.done)])
