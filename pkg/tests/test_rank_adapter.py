"""Rank-one corrections, cross terms, truncation scores and the adaptation loop."""

import numpy as np
import pytest

from treedens.bases import CanonicalBasis
from treedens.dimension_tree import build_linear_tree, uniform_ranks
from treedens.distributions import ProductMixture
from treedens.learner import LearnerConfig, SampleSet, empirical_risk
from treedens.rank_adapter import (
    RankAdaptConfig,
    adapt_ranks,
    cross_term,
    rank_one_correction,
    select_nodes,
    truncation_scores,
)
from treedens.tree_tensor import (
    TreeTensor,
    add,
    full_tensor,
    orthonormalize_at,
    random_tree_tensor,
    scale,
    zero_tree_tensor,
)

rng = np.random.default_rng(515)


def canonical_model(d=3, n_basis=4, rank=2, seed=0, tree=None):
    tree = tree or build_linear_tree(d)
    bases = [CanonicalBasis(n_basis)] * d
    return random_tree_tensor(tree, bases, uniform_ranks(tree, rank),
                              np.random.default_rng(seed))


def discrete_samples(d, n_basis, n, seed):
    gen = np.random.default_rng(seed)
    return SampleSet(np.column_stack(
        [gen.integers(1, n_basis + 1, n) for _ in range(d)]).astype(float))


class TestCrossTerm:
    def test_zero_model_gives_zero(self):
        g = canonical_model(seed=1)
        z = zero_tree_tensor(g.tree, g.bases)
        c = orthonormalize_at(canonical_model(rank=1, seed=2), 1)
        np.testing.assert_array_equal(cross_term(z, c, 1), 0.0)

    def test_dense_inner_product_oracle(self):
        g = canonical_model(seed=3)
        c = canonical_model(rank=1, seed=4)
        gen = np.random.default_rng(5)
        for alpha in range(len(g.tree)):
            co = orthonormalize_at(c, alpha)
            s_alpha = cross_term(g, co, alpha)
            for _ in range(3):
                probe = gen.standard_normal(co.cores[alpha].shape)
                cores = list(co.cores)
                cores[alpha] = probe
                c_mod = TreeTensor(co.tree, co.bases, tuple(cores))
                lhs = float(np.sum(s_alpha * probe))
                rhs = float(np.sum(full_tensor(c_mod).entries
                                   * full_tensor(g).entries))
                assert lhs == pytest.approx(rhs, abs=1e-10 * (1.0 + abs(rhs)))

    def test_self_model_returns_core(self):
        c = canonical_model(rank=2, seed=6)
        for alpha in range(len(c.tree)):
            co = orthonormalize_at(c, alpha)
            np.testing.assert_allclose(cross_term(co, co, alpha), co.cores[alpha],
                                       atol=1e-12)

    def test_linear_in_g(self):
        g = canonical_model(seed=7)
        c = orthonormalize_at(canonical_model(rank=1, seed=8), 2)
        s1 = cross_term(g, c, 2)
        s2 = cross_term(scale(g, 3.0), c, 2)
        np.testing.assert_allclose(s2, 3.0 * s1, atol=1e-12)

    def test_tree_mismatch(self):
        g = canonical_model(seed=9)
        other = canonical_model(seed=9, tree=build_linear_tree(3, (3, 2, 1)))
        with pytest.raises(ValueError):
            cross_term(g, other, 1)


class TestRankOneCorrection:
    def test_correction_of_zero_is_rank_one_fit(self):
        tree = build_linear_tree(3)
        bases = [CanonicalBasis(4)] * 3
        s = discrete_samples(3, 4, 300, seed=11)
        z = zero_tree_tensor(tree, bases)
        c = rank_one_correction(z, s, sweeps=12, rng=np.random.default_rng(1))
        from treedens.learner import fit_fixed
        direct = fit_fixed(tree, uniform_ranks(tree, 1), bases, s,
                           LearnerConfig(seed=1, max_sweeps=12,
                                         stagnation_tol=1e-14, sparsity="none"))
        assert empirical_risk(c, s) == pytest.approx(empirical_risk(direct, s),
                                                     abs=1e-8)

    def test_corrected_risk_never_worse(self):
        for seed in range(5):
            g = canonical_model(seed=20 + seed)
            s = discrete_samples(3, 4, 200, seed=30 + seed)
            c = rank_one_correction(g, s, rng=np.random.default_rng(seed))
            assert empirical_risk(add(g, c), s) <= empirical_risk(g, s) + 1e-10

    def test_stationarity_by_finite_differences(self):
        # at the alternating solution the gradient in every leaf factor
        # vanishes; central differences keep the oracle unbiased
        g = canonical_model(seed=41)
        s = discrete_samples(3, 4, 150, seed=42)
        c = rank_one_correction(g, s, sweeps=25, rng=np.random.default_rng(2))

        def risk_of(cores):
            return empirical_risk(add(g, TreeTensor(c.tree, c.bases,
                                                    tuple(cores))), s)

        h = 1e-5
        grad_norm = 0.0
        for leaf in c.tree.leaves():
            core = c.cores[leaf]
            for idx in np.ndindex(core.shape):
                up = [np.array(x) for x in c.cores]
                up[leaf][idx] += h
                down = [np.array(x) for x in c.cores]
                down[leaf][idx] -= h
                grad_norm = max(grad_norm,
                                abs(risk_of(up) - risk_of(down)) / (2 * h))
        assert grad_norm <= 1e-8

    def test_correction_is_rank_one(self):
        g = canonical_model(seed=51)
        s = discrete_samples(3, 4, 100, seed=52)
        c = rank_one_correction(g, s, rng=np.random.default_rng(3))
        assert set(c.ranks().values()) == {1}


class TestTruncationScores:
    def test_exact_rank_scores_zero(self):
        g = canonical_model(rank=2, seed=61)
        scores = truncation_scores(g, g.ranks())
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in scores.values())

    def test_matches_dense_svd_tail(self):
        g = canonical_model(d=3, rank=3, seed=63)
        ranks = uniform_ranks(g.tree, 2)
        scores = truncation_scores(g, ranks)
        F = full_tensor(g).entries
        for alpha, eta in scores.items():
            subset = g.tree.subset(alpha)
            axes = [v - 1 for v in subset]
            mat = np.moveaxis(F, axes, range(len(axes))).reshape(
                int(np.prod([F.shape[a] for a in axes])), -1)
            sv = np.linalg.svd(mat, compute_uv=False)
            expected = sv[2] if len(sv) > 2 else 0.0
            assert eta == pytest.approx(expected, abs=1e-10)

    def test_scaling_doubles_scores(self):
        g = canonical_model(rank=3, seed=67)
        ranks = uniform_ranks(g.tree, 2)
        s1 = truncation_scores(g, ranks)
        s2 = truncation_scores(scale(g, 2.0), ranks)
        for alpha in s1:
            assert s2[alpha] == pytest.approx(2.0 * s1[alpha], rel=1e-10)


class TestSelectNodes:
    def setup_method(self):
        self.tree = build_linear_tree(3)
        self.ranks = uniform_ranks(self.tree, 1)
        self.dims = {i: 4 for i in self.tree.leaves()}

    def test_theta_zero_selects_all_admissible(self):
        scores = {i: 1.0 + i for i in range(1, len(self.tree))}
        sel = select_nodes(scores, 0.0, self.ranks, self.tree, self.dims)
        assert sel == set(scores)

    def test_theta_one_selects_argmax(self):
        # baseline ranks 2 so a singleton increment is representable
        ranks = uniform_ranks(self.tree, 2)
        scores = {1: 0.5, 2: 2.0, 3: 1.0, 4: 0.25}
        sel = select_nodes(scores, 1.0, ranks, self.tree, self.dims)
        assert sel == {2}

    def test_solo_increment_from_all_ones_is_stuck(self):
        # from all-ones no single node can rise alone: the complement cap
        # (rank <= parent rank times sibling ranks) pins it at 1
        scores = {1: 0.5, 2: 2.0, 3: 1.0, 4: 0.25}
        assert select_nodes(scores, 1.0, self.ranks, self.tree, self.dims) == set()

    def test_ties_select_everything(self):
        scores = {i: 3.0 for i in range(1, len(self.tree))}
        for theta in (0.0, 0.5, 1.0):
            sel = select_nodes(scores, theta, self.ranks, self.tree, self.dims)
            assert sel == set(scores)

    def test_leaf_cap_excludes(self):
        ranks = dict(self.ranks)
        leaf = self.tree.leaves()[0]
        ranks[leaf] = 4  # at the basis size already
        scores = {i: 1.0 for i in range(1, len(self.tree))}
        sel = select_nodes(scores, 0.0, ranks, self.tree, self.dims)
        assert leaf not in sel

    def test_zero_scores_select_nothing(self):
        scores = {i: 0.0 for i in range(1, len(self.tree))}
        assert select_nodes(scores, 0.5, self.ranks, self.tree, self.dims) == set()


class TestAdaptRanks:
    def test_product_density_stays_rank_one(self):
        mix = ProductMixture(np.array([1.0]), ((
            np.array([0.1, 0.2, 0.3, 0.4]),
            np.array([0.4, 0.3, 0.2, 0.1]),
            np.array([0.25, 0.25, 0.25, 0.25])),))
        gen = np.random.default_rng(71)
        s = mix.sample(2000, gen)
        s_val = mix.sample(500, gen)
        tree = build_linear_tree(3)
        state = adapt_ranks(tree, mix.bases(), s, s_val, RankAdaptConfig(seed=3))
        assert set(state.ranks.values()) == {1}

    def test_ranks_never_decrease_and_histories_align(self):
        tree = build_linear_tree(3)
        bases = [CanonicalBasis(4)] * 3
        target = canonical_model(rank=2, seed=81)
        # sample from |target| normalized, cheap discrete sampler
        table = np.abs(full_tensor(target).entries)
        table /= table.sum()
        flat = np.cumsum(table.reshape(-1))
        gen = np.random.default_rng(83)
        draws = np.searchsorted(flat, gen.random(3000))
        pts = np.column_stack(np.unravel_index(draws, table.shape)) + 1.0
        s, s_val = SampleSet(pts[:2500]), SampleSet(pts[2500:])
        cfg = RankAdaptConfig(seed=5, max_rounds=6)
        state = adapt_ranks(tree, bases, s, s_val, cfg)
        assert len(state.validation_history) == len(state.complexity_history)
        assert state.model.storage_complexity() in state.complexity_history
        assert min(state.ranks.values()) >= 1

    def test_trace_jump_within_slack(self):
        tree = build_linear_tree(3)
        bases = [CanonicalBasis(4)] * 3
        s = discrete_samples(3, 4, 500, seed=91)
        s_val = discrete_samples(3, 4, 100, seed=92)
        state = adapt_ranks(tree, bases, s, s_val, RankAdaptConfig(seed=7))
        assert state.max_trace_jump() <= 1e-10
