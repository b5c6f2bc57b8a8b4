"""Command-line entry point: ``preqnlab {ntk,tabular,train}``.

Every run writes its fully resolved configuration as JSON next to its
outputs. A ``--config`` file supplies defaults for any flag (keys are the flag
names with underscores); flags given on the command line win.
"""

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, ntk, preqn, rlcore, tabular
from .errors import ContractError, OvershootError
from .nn import ACTIVATIONS, grad_per_sample, mlp_init

EXIT_OK = 0
EXIT_USAGE = 2  # argparse's own convention for bad invocations
EXIT_PARTIAL = 2

KERNELS = ("identity", "ones", "random-psd", "ntk")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _choices_list(choices):
    def parse(text):
        items = _csv_list(str)(text)
        bad = [x for x in items if x not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"expected a comma list from {list(choices)}, got {text!r}")
        return items
    return parse


def _write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _config_path(out):
    out = Path(out)
    return out.with_name(out.stem + ".config.json")


def _jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


# ---------------------------------------------------------------- ntk

def _add_ntk(sub):
    p = sub.add_parser("ntk", help="NTK diagonal / row-ratio sweep at initialization")
    p.add_argument("--env", required=True, choices=sorted(rlcore.ENVS))
    p.add_argument("--widths", type=_csv_list(int), default=[32, 64])
    p.add_argument("--depths", type=_csv_list(int), default=[2])
    p.add_argument("--activations", type=_choices_list(ACTIVATIONS), default=list(ACTIVATIONS))
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--samples", type=int, default=256, help="rails-random state-action pairs")
    p.add_argument("--out", default="ntk.csv")
    p.set_defaults(func=cmd_ntk)
    return p


def cmd_ntk(args):
    rng = np.random.default_rng(args.seed)
    env = rlcore.make_env(args.env, args.seed)
    data = rlcore.collect_rails_random_dataset(env, args.samples, rng)
    rows = ntk.ntk_sweep(data, args.widths, args.depths, args.activations, args.trials, args.seed, args.env)
    ntk.write_ntk_csv(rows, args.out)
    _write_json(_resolved(args), _config_path(args.out))
    print(f"{'width':>6} {'depth':>5} {'act':>5} {'row_ratio':>22} {'diag':>22}")
    for c in ntk.summarize_sweep(rows):
        print(f"{c['width']:>6} {c['depth']:>5} {c['activation']:>5} "
              f"{c['row_ratio_mean']:>11.4g} +- {c['row_ratio_std']:<8.3g} "
              f"{c['diag_mean']:>11.4g} +- {c['diag_std']:<8.3g}")
    return EXIT_OK


# ---------------------------------------------------------------- tabular

def _add_tabular(sub):
    p = sub.add_parser("tabular", help="contraction study of the kernel update operator U3")
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mdp-file", default=None, help="JSON MDP; overrides --states/--actions/--gamma")
    p.add_argument("--kernel", choices=KERNELS, default="identity")
    p.add_argument("--width", type=int, default=64, help="ntk kernel: hidden width")
    p.add_argument("--depth", type=int, default=2, help="ntk kernel: hidden layers")
    p.add_argument("--activation", choices=ACTIVATIONS, default="sin", help="ntk kernel: activation")
    p.add_argument("--pairs", type=int, default=200, help="Q-pairs for the empirical modulus")
    p.add_argument("--witness-pairs", type=int, default=10_000, help="Q-pairs for the expansion search")
    p.add_argument("--iters", type=int, default=1000, help="U3 iterations in the trajectory")
    p.add_argument("--out", default="tabular.json")
    p.set_defaults(func=cmd_tabular)
    return p


def build_kernel(kind, n_states, n_actions, seed, width=64, depth=2, activation="sin"):
    n = n_states * n_actions
    if kind == "identity":
        return np.eye(n)
    if kind == "ones":
        return np.ones((n, n))
    if kind == "random-psd":
        a = np.random.default_rng(seed).normal(size=(n, n)) / np.sqrt(n)
        return a.T @ a
    if kind == "ntk":
        feats = tabular.pair_features(n_states, n_actions)
        net = mlp_init(ntk.hidden_sizes(feats.shape[1], width, depth), activation, seed)
        return ntk.build_ntk(grad_per_sample(net, feats)).k
    raise ContractError(f"unknown kernel {kind!r}")


def tabular_report(mdp, kernel, alpha, seed, pairs, witness_pairs, iters):
    rho = tabular.uniform_rho(mdp.n_pairs)
    rep = tabular.check_theorem2_conditions(kernel, rho, alpha, mdp.gamma)
    op = tabular.U3(rho, kernel, alpha)
    with np.errstate(over="ignore", invalid="ignore"):
        traj = tabular.operator_sequence_run(mdp, np.zeros(mdp.n_pairs), [op], iters).distances
    # an expanding operator can overflow; the trajectory stops at the last finite distance
    finite = np.isfinite(traj)
    if not finite.all():
        traj = traj[:int(np.argmin(finite))]
    try:
        modulus = tabular.theorem2_modulus(kernel, rho, alpha, mdp.gamma)
    except OvershootError:
        modulus = None
    return {
        "modulus": modulus,
        "eq15_rows": rep.eq15_rows,
        "eq16_rows": rep.eq16_rows,
        "verdict": "contraction" if rep.contraction else "conditions fail",
        "empirical_modulus": tabular.empirical_modulus(mdp, op, pairs, seed),
        "expansion_witness_ratio": tabular.expansion_witness(mdp, op, witness_pairs, seed),
        "trajectory": [float(x) for x in traj],
    }


def cmd_tabular(args):
    if args.mdp_file:
        mdp = tabular.FiniteMdp.from_json(args.mdp_file)
    else:
        mdp = tabular.random_mdp(args.states, args.actions, args.gamma, args.seed)
    kernel = build_kernel(args.kernel, mdp.n_states, mdp.n_actions, args.seed,
                          args.width, args.depth, args.activation)
    report = tabular_report(mdp, kernel, args.alpha, args.seed, args.pairs, args.witness_pairs, args.iters)
    _write_json(report, args.out)
    _write_json(_resolved(args), _config_path(args.out))
    mod = "n/a (step overshoots a diagonal)" if report["modulus"] is None else f"{report['modulus']:.6g}"
    print(f"modulus {mod}  empirical {report['empirical_modulus']:.6g}  "
          f"witness {report['expansion_witness_ratio']:.6g}  verdict: {report['verdict']}")
    return EXIT_OK


# ---------------------------------------------------------------- train

_FLAG_TYPES = {int: int, float: float, str: str}


def _add_train(sub):
    p = sub.add_parser("train", help="PreQN or baseline deep Q-learning on a toy task")
    p.add_argument("--algo", choices=("preqn", "baseline"), default="preqn")
    p.add_argument("--target", action="store_true", help="baseline only: use a Polyak target network")
    p.add_argument("--env", choices=sorted(rlcore.ENVS), default="pendulum")
    p.add_argument("--steps", type=int, default=30_000)
    p.add_argument("--seeds", type=_csv_list(int), default=None, help="comma list; defaults to --seed")
    p.add_argument("--out", default="runs")
    for f in fields(preqn.PreqnConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "hidden_sizes":
            p.add_argument(flag, type=_csv_list(int), default=None)
        elif f.name in ("critic_activation", "actor_activation"):
            p.add_argument(flag, choices=ACTIVATIONS, default=None)
        else:
            p.add_argument(flag, type=_FLAG_TYPES[type(f.default)], default=None)
    p.set_defaults(func=cmd_train)
    return p


def _train_config(args):
    doc = {f.name: getattr(args, f.name) for f in fields(preqn.PreqnConfig) if getattr(args, f.name) is not None}
    return preqn.PreqnConfig(**doc)


def write_summary_csv(per_seed, path):
    """Mean and std over seeds of each eval row, on the steps every seed reached."""
    steps = sorted(set.intersection(*(set(r["step"] for r in rows) for rows in per_seed.values())))
    cols = preqn.METRICS_COLUMNS[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "n_seeds"] + [f"{c}_{s}" for c in cols for s in ("mean", "std")])
        for step in steps:
            vals = {c: np.array([next(r[c] for r in rows if r["step"] == step) for rows in per_seed.values()])
                    for c in cols}
            w.writerow([step, len(per_seed)] + [repr(float(f(vals[c]))) for c in cols for f in (np.mean, np.std)])


def cmd_train(args):
    if args.target and args.algo != "baseline":
        raise ContractError("--target only applies to --algo baseline")
    algo = "baseline+target" if args.target else args.algo
    cfg = _train_config(args)
    seeds = args.seeds if args.seeds is not None else [args.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = _resolved(args)
    resolved.update(cfg.to_dict())
    resolved.update(seeds=seeds, algo_resolved=algo, target_network=algo == "baseline+target")
    _write_json(resolved, out / "config.json")

    per_seed, diverged = {}, []
    for seed in seeds:
        ckpt = None
        if cfg.checkpoint_every:
            ckpt = out / "checkpoints" / f"seed{seed}"
            ckpt.mkdir(parents=True, exist_ok=True)
        res = preqn.train(args.env, algo, cfg, args.steps, seed, keep_updates=False, checkpoint_dir=ckpt)
        preqn.write_metrics_csv(res.rows, out / f"metrics_seed{seed}.csv")
        per_seed[seed] = res.rows
        last = res.rows[-1]["eval_return_mean"] if res.rows else float("nan")
        print(f"seed {seed}: {res.n_updates} updates, {res.aborted_updates} aborted, "
              f"last eval {last:.1f}{'  DIVERGED' if res.diverged else ''}")
        if res.diverged:
            diverged.append(seed)
    if all(per_seed.values()):
        write_summary_csv(per_seed, out / "summary.csv")
    if diverged:
        print(f"divergence watchdog tripped for seeds {diverged}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------- plumbing

def _resolved(args):
    skip = {"func", "config", "command"}
    doc = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}
    doc["command"] = args.command
    doc["version"] = __version__
    return doc


def build_parser():
    parser = argparse.ArgumentParser(prog="preqnlab", description="Divergence diagnostics and PreQN training for deep Q-learning.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=argparse.ArgumentParser)
    subparsers = {}
    for add in (_add_ntk, _add_tabular, _add_train):
        sp = add(sub)
        for action in common._actions:
            if action.dest != "help":
                sp._add_action(action)
        subparsers[sp.prog.split()[-1]] = sp
    return parser, subparsers


def parse_args(argv=None):
    parser, subparsers = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    if early.config and early.command in subparsers:
        sp = subparsers[early.command]
        try:
            with open(early.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            sp.error(f"cannot read --config: {exc}")
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(doc) - known - {"config"})
        if unknown:
            sp.error(f"unknown keys in --config: {unknown}")
        # flags the file provides are no longer required on the command line
        for a in sp._actions:
            if a.dest in doc:
                a.required = False
        sp.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, ValueError) as exc:
        print(f"preqnlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
