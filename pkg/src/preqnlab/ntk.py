"""Empirical neural tangent kernel of a scalar network over a dataset, and the
diagonal / row-ratio diagnostics used to compare architectures at init."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDiagonalError, ShapeError
from .nn import ACTIVATIONS, grad_per_sample, mlp_init

NTK_CSV_COLUMNS = ("env", "width", "depth", "activation", "trial",
                   "diag_mean", "diag_min", "diag_max", "row_ratio_mean")


@dataclass
class NtkMatrix:
    k: np.ndarray
    source: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.k.shape[0]


@dataclass
class NtkStats:
    diag_mean: float
    diag_min: float
    diag_max: float
    row_ratio_mean: float
    row_ratios: np.ndarray


def build_ntk(phi, source=None):
    """K = phi^T phi for per-sample gradient columns ``phi`` (d x B)."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] == 0:
        raise ShapeError(f"expected a nonempty d x B gradient matrix, got {phi.shape}")
    k = phi.T @ phi
    return NtkMatrix(0.5 * (k + k.T), dict(source or {}))


def net_ntk(net, xs, source=None):
    return build_ntk(grad_per_sample(net, xs), source)


def row_ratio(k):
    """R_i = (1/N) sum_{j != i} |K_ij| / K_ii for an N x N kernel."""
    k = np.asarray(k.k if isinstance(k, NtkMatrix) else k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"expected a square kernel, got {k.shape}")
    d = np.diag(k)
    if np.any(d <= 1e-14):
        i = int(np.flatnonzero(d <= 1e-14)[0])
        raise DegenerateDiagonalError(f"K_ii = {d[i]:.3g} at row {i}")
    off = np.abs(k).sum(axis=1) - np.abs(d)
    return off / d / k.shape[0]


def ntk_stats(k):
    k = k.k if isinstance(k, NtkMatrix) else np.asarray(k)
    d = np.diag(k)
    r = row_ratio(k)
    return NtkStats(float(d.mean()), float(d.min()), float(d.max()), float(r.mean()), r)


def hidden_sizes(n_in, width, depth):
    return (n_in,) + (width,) * depth + (1,)


def cell_seed(seed, width, depth, activation, trial):
    """Independent, order-free init seed for one sweep cell."""
    return np.random.SeedSequence(seed, spawn_key=(width, depth, ACTIVATIONS.index(activation), trial))


def ntk_sweep(dataset, widths, depths, activations, trials, seed=0, env="custom"):
    """NTK statistics at initialization for every (width, depth, activation, trial).

    Rows come back in loop order width > depth > activation > trial. The same
    ``dataset`` (B x n_in network inputs) is used for every cell.
    """
    xs = np.asarray(dataset, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ShapeError(f"dataset must be a nonempty (B, n_in) array, got {xs.shape}")
    rows = []
    for width in widths:
        for depth in depths:
            for act in activations:
                for trial in range(trials):
                    rng = np.random.default_rng(cell_seed(seed, width, depth, act, trial))
                    net = mlp_init(hidden_sizes(xs.shape[1], width, depth), act, rng)
                    st = ntk_stats(net_ntk(net, xs))
                    rows.append({
                        "env": env, "width": width, "depth": depth, "activation": act, "trial": trial,
                        "diag_mean": st.diag_mean, "diag_min": st.diag_min,
                        "diag_max": st.diag_max, "row_ratio_mean": st.row_ratio_mean,
                    })
    return rows


def summarize_sweep(rows):
    """Mean and std over trials of the per-trial mean row ratio, per cell."""
    cells = {}
    for r in rows:
        cells.setdefault((r["env"], r["width"], r["depth"], r["activation"]), []).append(r)
    out = []
    for (env, width, depth, act), rs in cells.items():
        ratios = np.array([r["row_ratio_mean"] for r in rs])
        diags = np.array([r["diag_mean"] for r in rs])
        out.append({
            "env": env, "width": width, "depth": depth, "activation": act, "trials": len(rs),
            "row_ratio_mean": float(ratios.mean()), "row_ratio_std": float(ratios.std()),
            "diag_mean": float(diags.mean()), "diag_std": float(diags.std()),
        })
    return out


def write_ntk_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NTK_CSV_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in NTK_CSV_COLUMNS])
