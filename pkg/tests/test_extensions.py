import numpy as np
import pytest

from treefuse import (
    BiclusterConfig,
    ConfigurationError,
    WeightConfig,
    WeightedTree,
    fit_bicluster,
    build_euclidean_mst,
    compute_weights,
    default_config,
    dykstra_solve,
    generate,
    prox_col_clustering,
    prox_group_columns,
    prox_row_clustering,
    root_tree,
    fit_sparse,
    fit_clusterpath,
)

from conftest import random_tree_edges
from oracles import group_prox_minimum, tree_fused_lasso_minimum, unified_loss

cvxpy = pytest.importorskip("cvxpy")


def make_cfg(rng, m_r, m_c, schedule, mode="bicluster", **kw):
    row_tree = WeightedTree(m_r, random_tree_edges(rng, m_r), np.ones(m_r - 1),
                            rng.uniform(0.3, 1.0, m_r - 1))
    col_tree = None
    if mode == "bicluster":
        col_tree = WeightedTree(m_c, random_tree_edges(rng, m_c), np.ones(m_c - 1),
                                rng.uniform(0.3, 1.0, m_c - 1))
    return BiclusterConfig(
        row_tree=row_tree,
        row_weights=row_tree.weights,
        schedule=np.asarray(schedule, dtype=float).reshape(-1, 2),
        col_tree=col_tree,
        col_weights=None if col_tree is None else col_tree.weights,
        mode=mode,
        **kw,
    )


class TestProxRowClustering:
    def test_lambda_zero_identity(self, rng):
        cfg = make_cfg(rng, 5, 3, [[1.0, 1.0]])
        U = rng.normal(size=(5, 3))
        out = prox_row_clustering(U, root_tree(cfg.row_tree, 0), cfg.row_weights,
                                  0.0, np.ones(5), np.ones(3))
        np.testing.assert_array_equal(out, U)

    def test_unit_multiplicities_match_solve_matrix(self, rng):
        from treefuse import solve_matrix

        cfg = make_cfg(rng, 6, 4, [[1.0, 1.0]])
        U = rng.normal(size=(6, 4))
        rooted = root_tree(cfg.row_tree, 0)
        a = prox_row_clustering(U, rooted, cfg.row_weights, 0.8, np.ones(6), np.ones(4))
        b = solve_matrix(rooted, U, np.ones(6), 0.8 * cfg.row_weights)
        np.testing.assert_array_equal(a, b)

    def test_weighted_objective_matches_oracle(self, rng):
        m_r, m_c = 5, 3
        cfg = make_cfg(rng, m_r, m_c, [[1.0, 1.0]])
        U = rng.normal(size=(m_r, m_c)) * 2
        row_mult = rng.integers(1, 4, m_r).astype(float)
        col_mult = rng.integers(1, 4, m_c).astype(float)
        lam = 0.7
        out = prox_row_clustering(U, root_tree(cfg.row_tree, 0), cfg.row_weights,
                                  lam, row_mult, col_mult)
        edges = [tuple(e) for e in cfg.row_tree.edges.tolist()]
        for c in range(m_c):
            # column problem: node weights mu_r * nu_c, penalties lam * alpha
            best, theta = tree_fused_lasso_minimum(
                edges, U[:, c], row_mult * col_mult[c], lam * cfg.row_weights)
            got = 0.5 * float((row_mult * col_mult[c]) @ (U[:, c] - out[:, c]) ** 2)
            got += lam * sum(
                w * abs(out[u, c] - out[v, c])
                for (u, v), w in zip(edges, cfg.row_weights))
            assert got <= best + 1e-8

    def test_transpose_symmetry(self, rng):
        cfg = make_cfg(rng, 5, 4, [[1.0, 1.0]])
        U = rng.normal(size=(5, 4))
        row_mult = rng.integers(1, 3, 5).astype(float)
        col_mult = rng.integers(1, 3, 4).astype(float)
        col_rooted = root_tree(cfg.col_tree, 0)
        a = prox_col_clustering(U, col_rooted, cfg.col_weights, 0.6, row_mult, col_mult)
        b = prox_row_clustering(U.T, col_rooted, cfg.col_weights, 0.6, col_mult, row_mult).T
        np.testing.assert_array_equal(a, b)

    def test_gamma_zero_col_identity(self, rng):
        cfg = make_cfg(rng, 5, 4, [[1.0, 1.0]])
        U = rng.normal(size=(5, 4))
        out = prox_col_clustering(U, root_tree(cfg.col_tree, 0), cfg.col_weights,
                                  0.0, np.ones(5), np.ones(4))
        np.testing.assert_array_equal(out, U)


class TestProxGroupColumns:
    def test_small_norm_column_zeroed(self, rng):
        u = rng.normal(size=(6, 1))
        gam = float(np.linalg.norm(u)) * 1.01
        out = prox_group_columns(u, gam, np.ones(6))
        np.testing.assert_array_equal(out, np.zeros_like(u))

    def test_twice_gamma_halves(self, rng):
        u = rng.normal(size=(5, 1))
        u *= 2.0 / np.linalg.norm(u)  # norm exactly 2
        out = prox_group_columns(u, 1.0, np.ones(5))
        np.testing.assert_allclose(out, u / 2.0, rtol=1e-12)

    def test_nonuniform_matches_bfgs_oracle(self, rng):
        mu = np.array([1.0, 2.0, 3.0, 1.0, 2.0])
        for _ in range(10):
            u = rng.normal(size=5) * 2
            gam = float(rng.uniform(0.5, 6.0))
            out = prox_group_columns(u[:, None], gam, mu)[:, 0]
            f_opt, x_opt = group_prox_minimum(u, gam, mu)
            f_got = 0.5 * float(mu @ (u - out) ** 2) + gam * float(np.linalg.norm(out))
            assert f_got <= f_opt + 1e-8

    def test_zeros_are_exact(self, rng):
        U = rng.normal(size=(8, 5)) * 0.1
        U[:, 2] *= 40  # one big column survives
        gam = 2.0
        out = prox_group_columns(U, gam, np.ones(8))
        dead = np.linalg.norm(U, axis=0) <= gam
        for j in range(5):
            if dead[j]:
                assert np.all(out[:, j] == 0.0)
            else:
                assert np.any(out[:, j] != 0.0)

    def test_nonexpansive(self, rng):
        mu = rng.uniform(0.5, 2.0, 6)
        for _ in range(10):
            a = rng.normal(size=(6, 3))
            b = rng.normal(size=(6, 3))
            pa = prox_group_columns(a, 1.5, mu)
            pb = prox_group_columns(b, 1.5, mu)
            # non-expansive in the weighted norm the prox is taken in
            wa = np.sqrt(mu[:, None])
            assert np.linalg.norm(wa * (pa - pb)) <= np.linalg.norm(wa * (a - b)) + 1e-12


class TestDykstra:
    def test_identity_at_zero_penalties(self, rng):
        cfg = make_cfg(rng, 5, 4, [[1.0, 0.0]], tolerance=1e-8)
        Y = rng.normal(size=(5, 4))
        res = dykstra_solve(Y, 0.0, 0.0, cfg)
        np.testing.assert_array_equal(res.U, Y)
        assert res.converged

    def test_gamma_zero_single_prox_fixed_point(self, rng):
        cfg = make_cfg(rng, 6, 3, [[1.0, 0.0]])
        Y = rng.normal(size=(6, 3))
        res = dykstra_solve(Y, 0.9, 0.0, cfg)
        assert res.converged
        assert res.iterations == 2  # the second pass re-proxes Y and stops
        direct = prox_row_clustering(Y, root_tree(cfg.row_tree, 0), cfg.row_weights,
                                     0.9, np.ones(6), np.ones(3))
        np.testing.assert_allclose(res.U, direct, atol=1e-12)

    def test_unified_loss_matches_cvxpy_bicluster(self, rng):
        m_r, m_c = 6, 4
        cfg = make_cfg(rng, m_r, m_c, [[0.4, 0.3]], tolerance=1e-10, max_inner=5000)
        Y = rng.normal(size=(m_r, m_c)) * 2
        lam, gam = 0.4, 0.3
        res = dykstra_solve(Y, lam, gam, cfg)
        assert res.converged
        theta = cvxpy.Variable((m_r, m_c))
        obj = 0.5 * cvxpy.sum_squares(Y - theta)
        for (i, j), w in zip(cfg.row_tree.edges.tolist(), cfg.row_weights):
            obj += lam * w * cvxpy.norm1(theta[i, :] - theta[j, :])
        for (i, j), w in zip(cfg.col_tree.edges.tolist(), cfg.col_weights):
            obj += gam * w * cvxpy.norm1(theta[:, i] - theta[:, j])
        prob = cvxpy.Problem(cvxpy.Minimize(obj))
        prob.solve(solver=cvxpy.CLARABEL)
        mine = unified_loss(Y, res.U, lam, cfg.row_tree.edges.tolist(),
                            cfg.row_weights, gam, cfg.col_tree.edges.tolist(),
                            cfg.col_weights)
        assert mine <= prob.value + 1e-6 * max(1.0, abs(prob.value))

    def test_unified_loss_matches_cvxpy_sparse(self, rng):
        m_r, m_c = 6, 4
        cfg = make_cfg(rng, m_r, m_c, [[0.5, 1.2]], mode="sparse",
                       tolerance=1e-10, max_inner=5000)
        Y = rng.normal(size=(m_r, m_c)) * 2
        lam, gam = 0.5, 1.2
        res = dykstra_solve(Y, lam, gam, cfg)
        assert res.converged
        theta = cvxpy.Variable((m_r, m_c))
        obj = 0.5 * cvxpy.sum_squares(Y - theta)
        for (i, j), w in zip(cfg.row_tree.edges.tolist(), cfg.row_weights):
            obj += lam * w * cvxpy.norm1(theta[i, :] - theta[j, :])
        for j in range(m_c):
            obj += gam * cvxpy.norm2(theta[:, j])
        prob = cvxpy.Problem(cvxpy.Minimize(obj))
        prob.solve(solver=cvxpy.CLARABEL)
        mine = unified_loss(Y, res.U, lam, cfg.row_tree.edges.tolist(),
                            cfg.row_weights, gam, sparse=True)
        assert mine <= prob.value + 1e-6 * max(1.0, abs(prob.value))

    def test_nonconverged_flag(self, rng):
        cfg = make_cfg(rng, 8, 5, [[2.0, 2.0]], max_inner=1, tolerance=1e-14)
        Y = rng.normal(size=(8, 5)) * 3
        res = dykstra_solve(Y, 2.0, 2.0, cfg)
        assert not res.converged
        assert res.iterations == 1

    def test_prox_nonexpansive_rowwise(self, rng):
        cfg = make_cfg(rng, 7, 3, [[1.0, 1.0]])
        rooted = root_tree(cfg.row_tree, 0)
        for _ in range(8):
            a = rng.normal(size=(7, 3))
            b = rng.normal(size=(7, 3))
            pa = prox_row_clustering(a, rooted, cfg.row_weights, 0.8, np.ones(7), np.ones(3))
            pb = prox_row_clustering(b, rooted, cfg.row_weights, 0.8, np.ones(7), np.ones(3))
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


class TestFitBicluster:
    def test_identity_step_at_zero(self, rng):
        cfg = make_cfg(rng, 6, 5, [[0.0, 0.0]])
        # lambda = 0 first step: nothing fuses, nothing changes
        Y = rng.normal(size=(6, 5))
        res = fit_bicluster(Y, cfg, completion_steps=0, snapshot_indices=[0])
        assert res.row_counts[0] == 6
        assert res.col_counts[0] == 5
        np.testing.assert_allclose(res.snapshots[0], Y, rtol=1e-12)

    def test_partitions_nested_and_dendrograms_complete(self):
        ds = generate("CHECKERBOARD", 40, seed=1)
        cfg = default_config(ds.data, mode="bicluster", T=8, tolerance=1e-4,
                             weight_cfg=WeightConfig(gamma=0.5, threshold_enabled=False))
        res = fit_bicluster(ds.data, cfg)
        assert np.all(np.diff(res.row_counts) <= 0)
        assert np.all(np.diff(res.col_counts) <= 0)
        assert res.row_counts[-1] == 1
        assert res.col_counts[-1] == 1
        heights = [e.height for e in res.row_dendrogram.events]
        assert heights == sorted(heights)

    def test_mode_mismatch_rejected(self, rng):
        cfg = make_cfg(rng, 5, 4, [[1.0, 1.0]], mode="sparse")
        with pytest.raises(ConfigurationError):
            fit_bicluster(rng.normal(size=(5, 4)), cfg)


class TestFitSparse:
    def test_gamma_zero_reduces_to_plain_fit(self):
        ds = generate("GM1", 60, seed=5)
        tree = build_euclidean_mst(ds.data)
        w = compute_weights(ds.data, tree,
                            WeightConfig(gamma=5.0, threshold_enabled=False))
        from treefuse import auto_lambda_grid

        lams = auto_lambda_grid(ds.data, tree, w, 12)
        plain = fit_clusterpath(ds.data, tree, w, lams)
        cfg = BiclusterConfig(row_tree=tree, row_weights=w,
                              schedule=np.column_stack([lams, np.zeros(12)]),
                              mode="sparse")
        sparse = fit_sparse(ds.data, cfg, completion_steps=0)
        assert sparse.row_dendrogram.events == plain.dendrogram.events
        assert len(sparse.selected_features[-1]) == 2

    def test_large_gamma_removes_all_noise_and_zero_removes_none(self, rng):
        ds = generate("FS", 60, 30, seed=3)
        tree = build_euclidean_mst(ds.data)
        w = compute_weights(ds.data, tree,
                            WeightConfig(gamma=1.0, threshold_enabled=False))
        gam = 1.25 * np.sqrt(60)  # above the noise-column norm level sqrt(n)
        cfg = BiclusterConfig(row_tree=tree, row_weights=w,
                              schedule=np.array([[1e-4, gam]]), mode="sparse")
        res = fit_sparse(ds.data, cfg, completion_steps=0)
        sel = res.selected_features[0]
        assert np.all(sel < 20)
        assert len(sel) > 0
        cfg0 = BiclusterConfig(row_tree=tree, row_weights=w,
                               schedule=np.array([[1e-4, 0.0]]), mode="sparse")
        res0 = fit_sparse(ds.data, cfg0, completion_steps=0)
        assert len(res0.selected_features[0]) == 30

    def test_removed_features_monotone(self):
        ds = generate("FS", 80, 40, seed=4)
        norms = np.linalg.norm(ds.data.values, axis=0)
        cfg = default_config(ds.data, mode="sparse", T=10, tolerance=1e-4,
                             sparse_gamma=1.2 * float(np.median(norms)),
                             weight_cfg=WeightConfig(gamma=0.5, threshold_enabled=False))
        res = fit_sparse(ds.data, cfg)
        for prev, cur in zip(res.selected_features[:-1], res.selected_features[1:]):
            assert set(cur.tolist()) <= set(prev.tolist())


class TestConfigValidation:
    def test_schedule_must_increase(self, rng):
        with pytest.raises(ConfigurationError):
            make_cfg(rng, 4, 3, [[1.0, 1.0], [1.0, 2.0]])
        with pytest.raises(ConfigurationError):
            make_cfg(rng, 4, 3, [[1.0, 2.0], [2.0, 1.0]])

    def test_bicluster_needs_col_tree(self, rng):
        row_tree = WeightedTree(4, random_tree_edges(rng, 4), np.ones(3))
        with pytest.raises(ConfigurationError):
            BiclusterConfig(row_tree=row_tree, row_weights=np.ones(3),
                            schedule=np.array([[1.0, 1.0]]), mode="bicluster")

    def test_unknown_mode(self, rng):
        row_tree = WeightedTree(4, random_tree_edges(rng, 4), np.ones(3))
        with pytest.raises(ConfigurationError):
            BiclusterConfig(row_tree=row_tree, row_weights=np.ones(3),
                            schedule=np.array([[1.0, 1.0]]), mode="triples")
