"""Exact finite-MDP machinery: the optimal Bellman operator, value iteration,
tabular Q-learning, and the update operators

    U1 Q = Q + alpha (T*Q - Q)
    U2 Q = Q + alpha D_rho (T*Q - Q)
    U3 Q = Q + alpha K D_rho (T*Q - Q)

together with the analytic sup-norm modulus bound for U3 and empirical
Lipschitz-ratio measurements.

Q-functions are flat float64 vectors indexed ``s * n_actions + a``. Functions
that take ``q`` also accept a stack of shape ``(m, n_states * n_actions)`` and
apply row-wise.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ContractError, ConvergenceError, OvershootError, ShapeError


@dataclass(frozen=True)
class FiniteMdp:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # R[s, a, s']
    gamma: float
    expected_reward: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.array(self.transition, dtype=np.float64)
        r = np.array(self.reward, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ShapeError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape:
            raise ShapeError(f"reward shape {r.shape} != transition shape {p.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12):
            raise ContractError("each P[s, a, :] must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise ContractError("rewards must be finite")
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        p.flags.writeable = False
        r.flags.writeable = False
        expected = (p * r).sum(axis=2).ravel()
        expected.flags.writeable = False
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "expected_reward", expected)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def n_pairs(self):
        return self.n_states * self.n_actions

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        mdp = cls(np.asarray(doc["transition"]), np.asarray(doc["reward"]), doc["gamma"])
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ShapeError("declared n_states/n_actions disagree with the tensors")
        return mdp

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def random_mdp(n_states, n_actions, gamma, seed):
    """Transitions are normalized exp(Unif(0,1)) rows, rewards Unif(0,1)."""
    rng = np.random.default_rng(seed)
    w = np.exp(rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_states)))
    p = w / w.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_states))
    return FiniteMdp(p, r, gamma)


def _as_q(mdp, q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != mdp.n_pairs or q.ndim > 2:
        raise ShapeError(f"Q of shape {q.shape} does not fit an MDP with {mdp.n_pairs} pairs")
    return q


@_accel.njit
def _bellman_kernel(p2, er, gamma, n_actions, q):
    # p2: (pairs, states) transition rows, er: expected one-step reward per pair
    n_pairs, n_s = p2.shape
    m = q.shape[0]
    out = np.empty_like(q)
    v = np.empty(n_s)
    for k in range(m):
        for s in range(n_s):
            best = q[k, s * n_actions]
            for a in range(1, n_actions):
                if q[k, s * n_actions + a] > best:
                    best = q[k, s * n_actions + a]
            v[s] = best
        for i in range(n_pairs):
            acc = 0.0
            for s2 in range(n_s):
                acc += p2[i, s2] * v[s2]
            out[k, i] = er[i] + gamma * acc
    return out


def _bellman_numpy(mdp, q2):
    v = q2.reshape(q2.shape[0], mdp.n_states, mdp.n_actions).max(axis=2)
    p = mdp.transition.reshape(mdp.n_pairs, mdp.n_states)
    return mdp.expected_reward + mdp.gamma * v @ p.T


def bellman_optimal(mdp, q):
    """(T*Q)(s,a) = sum_s' P(s'|s,a) [R(s,a,s') + gamma max_a' Q(s',a')]."""
    q = _as_q(mdp, q)
    q2 = np.atleast_2d(q)
    # stacks of Q-tables go through BLAS; the loop only wins on a single table
    if _accel.USE_NUMBA and q2.shape[0] == 1:
        p2 = mdp.transition.reshape(mdp.n_pairs, mdp.n_states)
        out = _bellman_kernel(p2, mdp.expected_reward, mdp.gamma, mdp.n_actions, np.ascontiguousarray(q2))
    else:
        out = _bellman_numpy(mdp, q2)
    return out if q.ndim == 2 else out[0]


def greedy_actions(mdp, q):
    """Greedy action per state; ties go to the lowest action index."""
    q = _as_q(mdp, q)
    return np.argmax(q.reshape(mdp.n_states, mdp.n_actions), axis=1)


def value_iteration(mdp, q0=None, tol=1e-10, max_iters=100_000):
    """Iterate Q <- T*Q until the sup-norm change drops below ``tol``.

    The returned Q satisfies ``||T*Q - Q||_inf < tol``.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    q = np.zeros(mdp.n_pairs) if q0 is None else _as_q(mdp, q0).copy()
    for _ in range(max_iters):
        tq = bellman_optimal(mdp, q)
        if np.max(np.abs(tq - q)) < tol:
            return q
        q = tq
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iters} iterations", last=q)


def tabular_q_learning(mdp, steps, lr_schedule, seed, q0=None):
    """Sampled Q-learning with uniform-random exploration over state-action pairs.

    Each step draws (s, a) uniformly, samples s' ~ P(.|s,a) and applies
    ``Q(s,a) += alpha_k (r + gamma max_a' Q(s',a') - Q(s,a))`` where ``k`` is
    the number of earlier updates to that same pair.
    """
    rng = np.random.default_rng(seed)
    q = np.zeros(mdp.n_pairs) if q0 is None else _as_q(mdp, q0).astype(np.float64, copy=True)
    if steps <= 0:
        return q
    pairs = rng.integers(0, mdp.n_pairs, size=steps)
    u = rng.random(size=steps)
    alphas = _per_visit_rates(pairs, lr_schedule)
    cdf = np.cumsum(mdp.transition.reshape(mdp.n_pairs, mdp.n_states), axis=1)
    run = _q_learning_kernel if _accel.USE_NUMBA else _q_learning_loop
    run(q, pairs, u, alphas, cdf, mdp.reward, mdp.gamma, mdp.n_actions)
    return q


def _per_visit_rates(pairs, lr_schedule):
    # visit index of each step = number of earlier steps on the same pair
    order = np.argsort(pairs, kind="stable")
    sp = pairs[order]
    starts = np.flatnonzero(np.r_[True, sp[1:] != sp[:-1]])
    sizes = np.diff(np.r_[starts, len(sp)])
    visit = np.empty(len(pairs), dtype=np.int64)
    visit[order] = np.arange(len(sp)) - np.repeat(starts, sizes)
    table = np.array([lr_schedule(k) for k in range(int(visit.max()) + 1)], dtype=np.float64)
    bad = ~((table >= 0.0) & (table < 1.0 + 1e-15))
    if bad.any():
        raise ContractError(f"learning rate {table[bad][0]} outside [0, 1]")
    return table[visit]


def _q_learning_loop(q, pairs, u, alphas, cdf, reward, gamma, n_a):
    n_s = cdf.shape[1]
    for t in range(len(pairs)):
        i = pairs[t]
        s, a = i // n_a, i % n_a
        s2 = min(int(np.searchsorted(cdf[i], u[t], side="right")), n_s - 1)
        target = reward[s, a, s2] + gamma * q[s2 * n_a:(s2 + 1) * n_a].max()
        q[i] += alphas[t] * (target - q[i])


_q_learning_kernel = _accel.njit(_q_learning_loop)


def _check_rho(mdp, rho):
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (mdp.n_pairs,):
        raise ShapeError(f"rho of shape {rho.shape} does not fit {mdp.n_pairs} pairs")
    if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
        raise ContractError("rho must be a probability vector")
    return rho


def _check_kernel(kernel, n):
    k = np.asarray(kernel, dtype=np.float64)
    if k.shape != (n, n):
        raise ShapeError(f"kernel of shape {k.shape} does not fit {n} pairs")
    return k


def apply_u1(mdp, q, alpha):
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    q = _as_q(mdp, q)
    return q + alpha * (bellman_optimal(mdp, q) - q)


def apply_u2(mdp, q, rho, alpha):
    rho = _check_rho(mdp, rho)
    if not 0.0 < alpha < 1.0 / rho.max():
        raise ContractError(f"alpha must lie in (0, 1/rho_max) = (0, {1.0 / rho.max()}), got {alpha}")
    q = _as_q(mdp, q)
    return q + alpha * rho * (bellman_optimal(mdp, q) - q)


def apply_u3(mdp, q, rho, kernel, alpha):
    rho = _check_rho(mdp, rho)
    k = _check_kernel(kernel, mdp.n_pairs)
    q = _as_q(mdp, q)
    return q + alpha * (rho * (bellman_optimal(mdp, q) - q)) @ k.T


@dataclass(frozen=True)
class U1:
    alpha: float

    def __call__(self, mdp, q):
        return apply_u1(mdp, q, self.alpha)


@dataclass(frozen=True)
class U2:
    rho: np.ndarray
    alpha: float

    def __call__(self, mdp, q):
        return apply_u2(mdp, q, self.rho, self.alpha)


@dataclass(frozen=True)
class U3:
    rho: np.ndarray
    kernel: np.ndarray
    alpha: float

    def __call__(self, mdp, q):
        return apply_u3(mdp, q, self.rho, self.kernel, self.alpha)


def theorem2_modulus(kernel, rho, alpha, gamma):
    """Sup-norm Lipschitz bound of U3:

        max_i [1 - (1-gamma) alpha K_ii rho_i + (1+gamma) alpha sum_{j!=i} |K_ij| rho_j]

    valid when ``alpha K_ii rho_i < 1`` for every i.
    """
    k = np.asarray(kernel, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if k.ndim != 2 or k.shape != (rho.size, rho.size):
        raise ShapeError(f"kernel {k.shape} and rho {rho.shape} disagree")
    diag = np.diag(k) * rho * alpha
    bad = np.flatnonzero(diag >= 1.0)
    if bad.size:
        i = int(bad[0])
        raise OvershootError(f"alpha*K_ii*rho_i = {diag[i]:.6g} >= 1 at index {i}", index=i)
    off = np.abs(k) @ rho - np.abs(np.diag(k)) * rho
    rows = 1.0 - (1.0 - gamma) * diag + (1.0 + gamma) * alpha * off
    return float(rows.max())


@dataclass
class KernelConditionReport:
    eq15_rows: list  # alpha K_ii rho_i < 1
    eq16_rows: list  # (1+gamma) sum_{j!=i} |K_ij| rho_j <= (1-gamma) K_ii rho_i
    modulus: float | None
    contraction: bool


def check_theorem2_conditions(kernel, rho, alpha, gamma):
    k = np.asarray(kernel, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    d = np.diag(k)
    eq15 = alpha * d * rho < 1.0
    off = np.abs(k) @ rho - np.abs(d) * rho
    eq16 = (1.0 + gamma) * off <= (1.0 - gamma) * d * rho
    modulus = theorem2_modulus(k, rho, alpha, gamma) if eq15.all() else None
    ok = bool(eq15.all() and eq16.all() and modulus is not None and modulus < 1.0)
    return KernelConditionReport(eq15.tolist(), eq16.tolist(), modulus, ok)


def lipschitz_ratios(mdp, op, n_pairs=200, seed=0, low=-10.0, high=10.0):
    """``||op(Q1) - op(Q2)||_inf / ||Q1 - Q2||_inf`` over random Q-pairs.

    The max of these is a lower bound on the operator's true Lipschitz constant.
    """
    rng = np.random.default_rng(seed)
    q1 = rng.uniform(low, high, size=(n_pairs, mdp.n_pairs))
    q2 = rng.uniform(low, high, size=(n_pairs, mdp.n_pairs))
    num = np.max(np.abs(op(mdp, q1) - op(mdp, q2)), axis=1)
    den = np.max(np.abs(q1 - q2), axis=1)
    return num / den


def empirical_modulus(mdp, op, n_pairs=200, seed=0):
    return float(lipschitz_ratios(mdp, op, n_pairs, seed).max())


def expansion_witness(mdp, op, n_pairs=10_000, seed=0):
    """Best sup-norm expansion ratio found by random search (> 1 means expansion)."""
    return float(lipschitz_ratios(mdp, op, n_pairs, seed).max())


@dataclass
class Trajectory:
    iterates: np.ndarray  # (iters + 1, n_pairs)
    distances: np.ndarray  # ||Q* - Q_i||_inf
    q_star: np.ndarray


def operator_sequence_run(mdp, q0, operators, iters, q_star=None):
    """Apply ``operators`` cyclically, recording the sup distance to Q*."""
    if not operators:
        raise ContractError("need at least one operator")
    if q_star is None:
        q_star = value_iteration(mdp, tol=1e-13)
    q = _as_q(mdp, q0).astype(np.float64, copy=True)
    out = np.empty((iters + 1, mdp.n_pairs))
    out[0] = q
    for i in range(iters):
        q = operators[i % len(operators)](mdp, q)
        out[i + 1] = q
    dist = np.max(np.abs(out - q_star), axis=1)
    return Trajectory(out, dist, q_star)


def pair_features(n_states, n_actions):
    """One-hot(state) ++ one-hot(action) encoding of every pair, in index order."""
    eye_s, eye_a = np.eye(n_states), np.eye(n_actions)
    return np.array([np.concatenate([eye_s[s], eye_a[a]]) for s in range(n_states) for a in range(n_actions)])


def uniform_rho(n):
    return np.full(n, 1.0 / n)
