import csv

import numpy as np
import pytest

from preqnlab import ntk
from preqnlab.errors import DegenerateDiagonalError, ShapeError
from preqnlab.nn import apply_param_step, grad_per_sample, mlp_init
from preqnlab.rlcore import collect_rails_random_dataset, make_env


def double_loop_gram(phi):
    d, b = phi.shape
    k = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            k[i, j] = sum(phi[p, i] * phi[p, j] for p in range(d))
    return k


def double_loop_ratio(k):
    n = k.shape[0]
    return np.array([sum(abs(k[i, j]) for j in range(n) if j != i) / k[i, i] / n for i in range(n)])


class TestBuildNtk:
    def test_orthonormal_columns(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(10, 4)))
        np.testing.assert_allclose(ntk.build_ntk(q).k, np.eye(4), atol=1e-14)

    def test_linear_net_is_feature_gram(self):
        rng = np.random.default_rng(1)
        xs = rng.normal(size=(6, 3))
        net = mlp_init((3, 1), "relu", 0)
        feats = np.hstack([xs, np.ones((6, 1))])
        np.testing.assert_allclose(ntk.net_ntk(net, xs).k, feats @ feats.T, atol=1e-14)

    def test_psd_for_random_net(self):
        rng = np.random.default_rng(2)
        k = ntk.net_ntk(mlp_init((5, 32, 32, 1), "tanh", 2), rng.normal(size=(16, 5))).k
        assert np.linalg.eigvalsh(k).min() >= -1e-8
        assert np.all(np.diag(k) >= 0)
        np.testing.assert_array_equal(k, k.T)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(3)
        phi = grad_per_sample(mlp_init((2, 8, 1), "sin", 3), rng.normal(size=(7, 2)))
        np.testing.assert_allclose(ntk.build_ntk(phi).k, double_loop_gram(phi), atol=1e-12)

    def test_linear_kernel_constant_under_param_moves(self):
        rng = np.random.default_rng(4)
        xs = rng.normal(size=(5, 3))
        net = mlp_init((3, 1), "tanh", 4)
        k0 = ntk.net_ntk(net, xs).k
        for _ in range(5):
            net = apply_param_step(net, rng.normal(size=net.n_params), 3.0)
            np.testing.assert_allclose(ntk.net_ntk(net, xs).k, k0, atol=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ShapeError):
            ntk.build_ntk(np.zeros((3, 0)))


class TestRowRatio:
    def test_identity(self):
        np.testing.assert_array_equal(ntk.row_ratio(np.eye(4)), np.zeros(4))

    def test_all_ones(self):
        np.testing.assert_allclose(ntk.row_ratio(np.ones((3, 3))), [2 / 3] * 3, atol=1e-15)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(6, 6))
        k = a @ a.T
        np.testing.assert_allclose(ntk.row_ratio(k), double_loop_ratio(k), atol=1e-12)

    def test_scale_invariant(self):
        rng = np.random.default_rng(6)
        phi = rng.normal(size=(9, 5))
        r = ntk.row_ratio(ntk.build_ntk(phi))
        for c in (1e-3, 0.7, 40.0):
            np.testing.assert_allclose(ntk.row_ratio(ntk.build_ntk(c * phi)), r, atol=1e-12)

    def test_degenerate_diagonal(self):
        with pytest.raises(DegenerateDiagonalError):
            ntk.row_ratio(np.diag([1.0, 0.0]))

    def test_relu_exceeds_sin(self):
        env = make_env("pendulum", 0)
        xs = collect_rails_random_dataset(env, 64, np.random.default_rng(0))
        wins = 0
        for seed in range(3):
            r_relu = ntk.row_ratio(ntk.net_ntk(mlp_init((4, 64, 64, 1), "relu", seed), xs)).mean()
            r_sin = ntk.row_ratio(ntk.net_ntk(mlp_init((4, 64, 64, 1), "sin", seed), xs)).mean()
            wins += r_relu > r_sin
        assert wins >= 2


@pytest.fixture(scope="module")
def dataset():
    return collect_rails_random_dataset(make_env("masspoint", 1), 32, np.random.default_rng(1))


class TestSweep:
    def test_singleton(self, dataset):
        rows = ntk.ntk_sweep(dataset, (32,), (2,), ("relu",), 1)
        assert len(rows) == 1 and rows[0]["trial"] == 0

    def test_row_order_and_count(self, dataset):
        rows = ntk.ntk_sweep(dataset, (8, 16), (1, 2), ("relu", "sin"), 2)
        assert len(rows) == 16
        keys = [(r["width"], r["depth"], r["activation"], r["trial"]) for r in rows]
        assert keys == sorted(keys, key=lambda k: (k[0], k[1], ("relu", "sin").index(k[2]), k[3]))

    def test_deterministic_and_cell_local(self, dataset):
        a = ntk.ntk_sweep(dataset, (8, 16), (1,), ("tanh",), 2, seed=3)
        b = ntk.ntk_sweep(dataset, (16,), (1,), ("tanh",), 2, seed=3)
        assert a[2:] == b

    def test_stats_recompute_from_matrix(self, dataset):
        row = ntk.ntk_sweep(dataset, (8,), (2,), ("sin",), 1, seed=7)[0]
        rng = np.random.default_rng(ntk.cell_seed(7, 8, 2, "sin", 0))
        k = ntk.net_ntk(mlp_init(ntk.hidden_sizes(dataset.shape[1], 8, 2), "sin", rng), dataset).k
        assert row["diag_min"] >= 0
        assert row["diag_mean"] == np.diag(k).mean()
        assert row["row_ratio_mean"] == pytest.approx(double_loop_ratio(k).mean(), abs=1e-12)

    def test_summary_std_over_three_trials(self, dataset):
        rows = ntk.ntk_sweep(dataset, (8,), (1,), ("relu",), 3)
        (cell,) = ntk.summarize_sweep(rows)
        vals = [r["row_ratio_mean"] for r in rows]
        assert cell["trials"] == 3
        assert cell["row_ratio_std"] == pytest.approx(np.std(vals), abs=1e-15)

    def test_depth_trend_sin(self):
        votes = 0
        for name in ("pendulum", "masspoint"):
            xs = collect_rails_random_dataset(make_env(name, 0), 64, np.random.default_rng(0))
            means = {}
            for row in ntk.ntk_sweep(xs, (64,), (1, 4), ("sin",), 3):
                means.setdefault(row["depth"], []).append(row["row_ratio_mean"])
            votes += np.mean(means[4]) >= np.mean(means[1])
        assert votes >= 1

    def test_csv(self, dataset, tmp_path):
        rows = ntk.ntk_sweep(dataset, (8,), (1,), ("relu", "sin"), 1)
        path = tmp_path / "ntk.csv"
        ntk.write_ntk_csv(rows, path)
        with open(path) as fh:
            back = list(csv.DictReader(fh))
        assert tuple(back[0]) == ntk.NTK_CSV_COLUMNS
        assert float(back[1]["row_ratio_mean"]) == rows[1]["row_ratio_mean"]
