"""Time each hot kernel on the numba path and on the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Both paths run in one process by flipping ``preqnlab._accel.USE_NUMBA``, so
the numbers are directly comparable. Compilation happens in an untimed warmup
call. The last column checks that the two paths agree.

A second table times the compiled Jacobi eigensolver against LAPACK on the
pseudo-inverse solve. LAPACK is the default on both paths; Jacobi is kept as
an independent second method.
"""

import argparse
import time

import numpy as np

from preqnlab import _accel, linalg, nn, preqn, tabular
from preqnlab.rlcore import Batch


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def both(fn, repeat):
    out = {}
    for flag in (True, False):
        _accel.USE_NUMBA = flag
        out[flag] = (best_of(fn, repeat), fn())
    _accel.USE_NUMBA = True
    return out


def cases(quick):
    rng = np.random.default_rng(0)
    for width, batch in ((64, 64), (256, 256)):
        if quick and width == 256:
            continue
        net = nn.mlp_init((4, width, width, 1), "sin", 0)
        xs = rng.normal(size=(batch, 4))
        yield f"per-sample grads (4,{width},{width},1), B={batch}", lambda net=net, xs=xs: nn.grad_per_sample(net, xs)

    mdp = tabular.random_mdp(50, 5, 0.99, 0)
    q = rng.normal(size=mdp.n_pairs)
    yield "Bellman backup, 50x5 MDP, one Q-table", lambda: tabular.bellman_optimal(mdp, q)
    qs = rng.normal(size=(200, mdp.n_pairs))
    yield "Bellman backup, 50x5 MDP, 200 Q-tables", lambda: tabular.bellman_optimal(mdp, qs)
    yield "sampled Q-learning, 50x5 MDP, 1e5 steps", lambda: tabular.tabular_q_learning(
        mdp, 100_000, lambda k: 1.0 / (k + 1) ** 0.7, 0)

    cfg = preqn.PreqnConfig()
    ac = preqn.ActorCritic.init(3, 1, [-2.0], [2.0], cfg.hidden_sizes, "sin", "relu", 0)
    b = Batch(rng.normal(size=(64, 3)), rng.uniform(-2, 2, (64, 1)), rng.normal(size=64),
              rng.normal(size=(64, 3)), np.zeros(64))
    yield "full PreQN update, desk defaults", lambda: preqn.preqn_update(ac, b, cfg)[0].q_net.params


def method_cases(quick):
    rng = np.random.default_rng(0)
    for n in (64, 128) if quick else (64, 128, 256):
        a = rng.normal(size=(n // 2, n))
        g = a.T @ a
        yield f"pinv solve, rank-deficient Gram {n}x{n}", g


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<46} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases(args.quick):
        r = both(fn, args.repeat)
        (tn, vn), (tp, vp) = r[True], r[False]
        diff = float(np.max(np.abs(np.asarray(vn) - np.asarray(vp))))
        print(f"{name:<46} {tn * 1e3:>10.3f} {tp * 1e3:>10.3f} {tp / tn:>8.2f} {diff:>11.2e}")
    print()
    print(f"{'eigensolver':<46} {'jacobi ms':>10} {'lapack ms':>10} {'ratio':>8} {'max |diff|':>11}")
    for name, g in method_cases(args.quick):
        b = np.ones(len(g))
        fj = lambda: linalg.lstsq_psd(g, b, method="jacobi")
        fl = lambda: linalg.lstsq_psd(g, b, method="lapack")
        tj, tl = best_of(fj, args.repeat), best_of(fl, args.repeat)
        diff = float(np.max(np.abs(fj() - fl())))
        print(f"{name:<46} {tj * 1e3:>10.3f} {tl * 1e3:>10.3f} {tj / tl:>8.2f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
