"""PreQN (DDPG-style, no target network) and a vanilla deep Q-learning baseline.

A PreQN critic step solves ``K Z = delta`` in the least-squares sense on the
minibatch NTK ``K = phi^T phi`` and proposes ``theta + alpha_q * phi Z``, so
that to first order the batch Q-values move by ``alpha_q * delta``. A
backtracking linesearch then shrinks the step until the realized change in
Q-values has cosine at least ``eta`` with the TD errors.
"""

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import linalg
from .errors import ContractError, UpdateAbortedError
from .nn import apply_param_step, forward, grad_per_sample, input_grad, mlp_init, save_checkpoint, vjp
from .rlcore import Batch, ReplayBuffer, Transition, make_env, uniform_random_action

ALGOS = ("preqn", "baseline", "baseline+target")
METRICS_COLUMNS = ("step", "eval_return_mean", "eval_return_std", "q_mean", "td_mean_abs",
                   "alignment_cos", "backtracks", "accepted")


@dataclass
class PreqnConfig:
    """Hyperparameters. Defaults are the desk-scale values; see ``full_scale``."""

    gamma: float = 0.99
    batch_size: int = 64
    critic_lr: float = 0.1
    actor_lr: float = 1e-3
    eta: float = 0.97
    update_every: int = 50
    update_after: int = 1000
    start_steps: int = 1000
    action_noise_std: float = 0.1
    linesearch_decay: float = 0.8
    linesearch_max_backtracks: int = 20
    pinv_rel_tol: float = 1e-10
    hidden_sizes: tuple = (64, 64)
    critic_activation: str = "sin"
    actor_activation: str = "relu"
    baseline_critic_lr: float = 1e-3
    polyak: float = 0.995
    eval_every: int = 1000
    eval_episodes: int = 5
    replay_capacity: int = 1_000_000
    watchdog_limit: float = 1e6
    checkpoint_every: int = 0  # env steps between critic/actor checkpoints; 0 disables

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.validate()

    def validate(self):
        for name in ("eta", "gamma", "linesearch_decay"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ContractError(f"{name} must lie in (0, 1), got {v}")
        for name in ("batch_size", "update_every", "update_after", "start_steps",
                     "linesearch_max_backtracks", "eval_every", "eval_episodes", "replay_capacity"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.checkpoint_every < 0:
            raise ContractError("checkpoint_every must be non-negative")
        if not 0.0 <= self.polyak < 1.0:
            raise ContractError("polyak must lie in [0, 1)")

    @classmethod
    def full_scale(cls, **overrides):
        """Full-scale values: batch 256, a (256, 256) network and 5000 warmup steps."""
        base = dict(batch_size=256, hidden_sizes=(256, 256), update_after=5000, start_steps=5000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ContractError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class UpdateDiagnostics:
    td_mean_abs: float
    alignment_cos: float
    backtracks: int
    accepted: bool
    qvals_mean: float
    leading_order_residual: float


@dataclass(frozen=True, eq=False)
class ActorCritic:
    """Critic Q(s, a) on ``obs ++ act`` and a tanh-squashed deterministic actor."""

    q_net: object
    mu_net: object
    act_low: np.ndarray
    act_high: np.ndarray

    @property
    def obs_dim(self):
        return self.mu_net.n_inputs

    @property
    def act_dim(self):
        return self.mu_net.n_outputs

    @classmethod
    def init(cls, obs_dim, act_dim, act_low, act_high, hidden_sizes=(64, 64),
             critic_activation="sin", actor_activation="relu", seed=0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        hidden = tuple(hidden_sizes)
        q_net = mlp_init((obs_dim + act_dim,) + hidden + (1,), critic_activation, rng)
        mu_net = mlp_init((obs_dim,) + hidden + (act_dim,), actor_activation, rng)
        return cls(q_net, mu_net, np.asarray(act_low, dtype=np.float64), np.asarray(act_high, dtype=np.float64))

    def replace(self, q_net=None, mu_net=None):
        return ActorCritic(q_net or self.q_net, mu_net or self.mu_net, self.act_low, self.act_high)

    def _squash(self, u):
        mid = 0.5 * (self.act_high + self.act_low)
        half = 0.5 * (self.act_high - self.act_low)
        return mid + half * np.tanh(u)

    def act(self, obs):
        return self._squash(forward(self.mu_net, obs))

    def q(self, s, a, q_net=None):
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
        return forward(q_net or self.q_net, x)[:, 0]


def _inputs(batch):
    return np.concatenate([batch.s, batch.a], axis=1)


def compute_td_errors(ac, batch, gamma, bootstrap_net=None):
    """r + gamma (1 - d) Q(s', mu(s')) - Q(s, a), bootstrapping through ``bootstrap_net`` if given."""
    if len(batch) == 0:
        raise ContractError("empty batch")
    q = ac.q(batch.s, batch.a)
    q_next = ac.q(batch.s_next, ac.act(batch.s_next), bootstrap_net)
    return batch.r + gamma * (1.0 - batch.done) * q_next - q


def actor_step(ac, s, lr):
    """phi <- phi + lr * mean_s grad_phi Q(s, mu_phi(s))."""
    s = np.atleast_2d(s)
    u = forward(ac.mu_net, s)
    a = ac._squash(u)
    dq_da = input_grad(ac.q_net, np.concatenate([s, a], axis=1))[:, ac.obs_dim:]
    half = 0.5 * (ac.act_high - ac.act_low)
    cot = dq_da * half * (1.0 - np.tanh(u) ** 2) / s.shape[0]
    g, _ = vjp(ac.mu_net, s, cot)
    return apply_param_step(ac.mu_net, g, lr)


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise UpdateAbortedError("non-finite TD errors or gradients; update skipped")


@dataclass
class PreqnProposal:
    """Everything the critic linesearch needs, computed at the current params."""

    inputs: np.ndarray
    q: np.ndarray
    td: np.ndarray
    phi: np.ndarray
    kernel: np.ndarray
    z: np.ndarray
    step: np.ndarray  # alpha_q * phi @ z, before any backtracking


def preqn_proposal(ac, batch, cfg):
    x = _inputs(batch)
    td = compute_td_errors(ac, batch, cfg.gamma)
    phi = grad_per_sample(ac.q_net, x)
    _check_finite(td, phi)
    kernel = phi.T @ phi
    kernel = 0.5 * (kernel + kernel.T)
    # least-squares Z for K Z = delta, refined once against phi directly
    direction, z = linalg.gram_min_norm(phi, td, cfg.pinv_rel_tol, side="columns")
    step = cfg.critic_lr * direction
    _check_finite(step)
    q = forward(ac.q_net, x)[:, 0]
    return PreqnProposal(x, q, td, phi, kernel, z, step)


def preqn_update(ac, batch, cfg):
    """One PreQN critic step with linesearch, then one actor ascent step.

    Returns ``(new_ac, UpdateDiagnostics)``. If no scale in the backtracking
    schedule meets the alignment threshold, the critic is left unchanged and
    ``accepted`` is False. The actor step always uses the post-linesearch critic.
    """
    p = preqn_proposal(ac, batch, cfg)
    scale = 1.0
    accepted = False
    backtracks = 0
    cos = 0.0
    q_net = ac.q_net
    dq = np.zeros_like(p.q)
    tried = scale
    for backtracks in range(cfg.linesearch_max_backtracks + 1):
        tried = scale
        trial = apply_param_step(ac.q_net, p.step, scale)
        dq = forward(trial, p.inputs)[:, 0] - p.q
        cos = linalg.cosine(dq, p.td)
        if cos >= cfg.eta:
            accepted = True
            q_net = trial
            break
        scale *= cfg.linesearch_decay
    residual = float(np.linalg.norm(dq - tried * (p.phi.T @ p.step)))
    new = ac.replace(q_net=q_net)
    new = new.replace(mu_net=actor_step(new, batch.s, cfg.actor_lr))
    diag = UpdateDiagnostics(
        td_mean_abs=float(np.mean(np.abs(p.td))),
        alignment_cos=float(cos),
        backtracks=int(backtracks),
        accepted=accepted,
        qvals_mean=float(np.mean(p.q)),
        leading_order_residual=residual,
    )
    return new, diag


def ngql_update_reference(ac, batch, alpha, gamma=0.99, rel_tol=linalg.DEFAULT_REL_TOL):
    """Natural-gradient step ``alpha * pinv(phi phi^T) phi delta`` (test oracle).

    Forms the d x d Fisher-type matrix, so keep ``d`` small.
    """
    x = _inputs(batch)
    td = compute_td_errors(ac, batch, gamma)
    phi = grad_per_sample(ac.q_net, x)
    direction, _ = linalg.gram_min_norm(phi, td, rel_tol, side="rows")
    return alpha * direction


def baseline_dql_update(ac, batch, lr, gamma=0.99, actor_lr=1e-3, target_params=None, polyak=0.995):
    """theta <- theta + lr * mean_i delta_i grad Q(s_i, a_i), then the actor step.

    With ``target_params`` the bootstrap uses the target critic, which is
    Polyak-averaged towards the new critic afterwards. Returns
    ``(new_ac, UpdateDiagnostics, new_target_params)``.
    """
    x = _inputs(batch)
    target_net = None if target_params is None else ac.q_net.with_params(target_params)
    td = compute_td_errors(ac, batch, gamma, target_net)
    _check_finite(td)
    q = forward(ac.q_net, x)[:, 0]
    g, _ = vjp(ac.q_net, x, td[:, None] / len(batch))
    _check_finite(g)
    q_net = apply_param_step(ac.q_net, g, lr)
    dq = forward(q_net, x)[:, 0] - q
    new = ac.replace(q_net=q_net)
    new = new.replace(mu_net=actor_step(new, batch.s, actor_lr))
    new_target = None
    if target_params is not None:
        new_target = polyak * np.asarray(target_params) + (1.0 - polyak) * q_net.params
    # first-order prediction: phi^T (theta' - theta)
    predicted = lr * (grad_per_sample(ac.q_net, x).T @ g)
    diag = UpdateDiagnostics(
        td_mean_abs=float(np.mean(np.abs(td))),
        alignment_cos=float(linalg.cosine(dq, td)),
        backtracks=0,
        accepted=True,
        qvals_mean=float(np.mean(q)),
        leading_order_residual=float(np.linalg.norm(dq - predicted)),
    )
    return new, diag, new_target


@dataclass
class TrainResult:
    rows: list
    updates: list = field(default_factory=list)
    diverged: bool = False
    aborted_updates: int = 0
    n_updates: int = 0
    ac: ActorCritic = None
    config: dict = field(default_factory=dict)


def _seed_streams(seed):
    names = ("env", "init", "buffer", "noise", "eval")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def evaluate(ac, env, episodes):
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        total, done = 0.0, False
        while not done:
            obs, r, terminal, truncated = env.step(ac.act(obs))
            total += r
            done = terminal or truncated
        returns.append(total)
    return np.array(returns)


def _summarize(diags):
    if not diags:
        return dict(q_mean=np.nan, td_mean_abs=np.nan, alignment_cos=np.nan, backtracks=np.nan, accepted=np.nan)
    return dict(
        q_mean=float(np.mean([d.qvals_mean for d in diags])),
        td_mean_abs=float(np.mean([d.td_mean_abs for d in diags])),
        alignment_cos=float(np.mean([d.alignment_cos for d in diags])),
        backtracks=float(np.mean([d.backtracks for d in diags])),
        accepted=float(np.mean([d.accepted for d in diags])),
    )


def train(env, algo, cfg, total_steps, seed, on_update=None, keep_updates=True, checkpoint_dir=None):
    """Run the full off-policy loop and return a :class:`TrainResult`.

    ``env`` is an env name. Actions are uniform-random for ``start_steps``,
    then the actor plus N(0, noise_std^2) clipped to the box. Once
    ``update_after`` steps have elapsed, every ``update_every`` env steps run
    ``update_every`` updates. The deterministic actor is evaluated every
    ``eval_every`` steps. ``on_update(before, after, batch, diag)`` is called
    after every successful update. With ``checkpoint_dir`` and a positive
    ``cfg.checkpoint_every``, both networks are saved in the nn JSON format.
    """
    if algo not in ALGOS:
        raise ContractError(f"unknown algo {algo!r}; choose from {ALGOS}")
    cfg.validate()
    rngs = _seed_streams(seed)
    env_name = env
    env = make_env(env_name, rngs["env"])
    eval_env = make_env(env_name, rngs["eval"])
    ac = ActorCritic.init(env.obs_dim, env.act_dim, env.act_low, env.act_high, cfg.hidden_sizes,
                          cfg.critic_activation, cfg.actor_activation, rngs["init"])
    target = ac.q_net.params.copy() if algo == "baseline+target" else None
    buf = ReplayBuffer(env.obs_dim, env.act_dim, cfg.replay_capacity)
    result = TrainResult(rows=[], config={"env": env_name, "algo": algo, "seed": seed,
                                          "total_steps": total_steps, **cfg.to_dict()})
    since_eval = []
    probe = None
    obs = env.reset()
    for t in range(1, total_steps + 1):
        if t <= cfg.start_steps:
            a = uniform_random_action(env, rngs["noise"])
        else:
            a = ac.act(obs) + cfg.action_noise_std * rngs["noise"].standard_normal(env.act_dim)
            a = np.clip(a, env.act_low, env.act_high)
        nxt, r, terminal, truncated = env.step(a)
        # horizon cuts are not terminal: keep bootstrapping through them
        buf.push(Transition(obs, a, r, nxt, float(terminal)))
        obs = env.reset() if (terminal or truncated) else nxt

        if t >= cfg.update_after and t % cfg.update_every == 0:
            for _ in range(cfg.update_every):
                batch = buf.sample(cfg.batch_size, rngs["buffer"])
                if probe is None:
                    probe = _inputs(batch).copy()
                before = ac
                try:
                    if algo == "preqn":
                        ac, diag = preqn_update(ac, batch, cfg)
                    else:
                        ac, diag, target = baseline_dql_update(
                            ac, batch, cfg.baseline_critic_lr, cfg.gamma, cfg.actor_lr, target, cfg.polyak)
                except UpdateAbortedError:
                    result.aborted_updates += 1
                    continue
                result.n_updates += 1
                since_eval.append(diag)
                if keep_updates:
                    result.updates.append(diag)
                if on_update is not None:
                    on_update(before, ac, batch, diag)
            if np.max(np.abs(forward(ac.q_net, probe))) > cfg.watchdog_limit:
                result.diverged = True

        if t % cfg.eval_every == 0 or result.diverged:
            rets = evaluate(ac, eval_env, cfg.eval_episodes)
            row = {"step": t, "eval_return_mean": float(rets.mean()), "eval_return_std": float(rets.std())}
            row.update(_summarize(since_eval))
            result.rows.append(row)
            since_eval = []
        if checkpoint_dir is not None and cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
            save_checkpoint(ac.q_net, Path(checkpoint_dir) / f"critic_{t:08d}.json")
            save_checkpoint(ac.mu_net, Path(checkpoint_dir) / f"actor_{t:08d}.json")
        if result.diverged:
            break
    result.ac = ac
    return result


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for row in rows:
            w.writerow([row["step"]] + [repr(float(row[c])) for c in METRICS_COLUMNS[1:]])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


def load_config(path):
    with open(path) as fh:
        return PreqnConfig.from_dict(json.load(fh))
