"""End-to-end acceptance criteria at their stated tolerances.

Each test prints one PASS line when its assertions hold; run with
``pytest tests/test_acceptance.py -v -s -m acceptance``.  The learning
experiments are heavy (tens of minutes on one core); everything is seeded
and deterministic per platform.
"""

import json
import time

import numpy as np
import pytest

import treedens as td
from treedens.cli import _build_config, run_trial
from treedens.distributions import example_graphical_model, example_markov_chain
from treedens.learner import loo_risk, loo_risk_pairwise
from treedens.tree_adapter import TreeProposalConfig, optimize_tree
from treedens.tree_tensor import (
    FullTensor,
    alpha_rank_of_full,
    alpha_singular_values,
    full_tensor,
    full_to_tree,
)

pytestmark = pytest.mark.acceptance

MASTER_SEED = 20240808


def _report(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS ({detail})")


# -- shared experiment batches (computed once) -----------------------------------


@pytest.fixture(scope="module")
def table1_grid():
    """Truncated-Gaussian trials over the n grid; 10 trials per n (5 at 1e5)."""
    grid = {}
    for n, trials in ((100, 10), (1000, 10), (10_000, 10), (100_000, 5)):
        cfg = _build_config({"preset": "table1", "n_train": [n],
                             "trials": trials, "seed": MASTER_SEED}, {})
        grid[n] = [run_trial(cfg, n, t) for t in range(trials)]
    return grid


@pytest.fixture(scope="module")
def table3_batch():
    """Markov-chain learning at n = 1e5, 10 trials."""
    cfg = _build_config({"preset": "table3", "n_train": [100_000],
                         "trials": 10, "seed": MASTER_SEED}, {})
    return [run_trial(cfg, 100_000, t) for t in range(10)]


# -- criterion 1: Markov compression -----------------------------------------------


def test_criterion_1_markov_compression():
    t0 = time.time()
    chain = example_markov_chain()
    table = chain.exact_tensor()

    good = full_to_tree(table, td.build_linear_tree(8), chain.bases(), tol=1e-13)
    assert max(good.ranks().values()) == 4
    assert good.storage_complexity() == 240

    permuted_order = (1, 3, 5, 7, 2, 4, 6, 8)
    bad = full_to_tree(table, td.build_linear_tree(8, permuted_order),
                       chain.bases(), tol=1e-13)
    assert max(bad.ranks().values()) == 128
    assert bad.storage_complexity() == 35088

    elapsed = time.time() - t0
    assert elapsed < 60.0
    _report("criterion 1 (Markov compression)",
            f"storage 240 / 35088, max ranks 4 / 128, {elapsed:.1f}s")


# -- criterion 2: graphical-model tree optimization ------------------------------------


def test_criterion_2_graphical_tree_optimization():
    t0 = time.time()
    model = example_graphical_model(rank3=False)
    table = model.exact_tensor()
    start_tree = td.random_binary_tree(10, np.random.default_rng(2024))
    g0 = full_to_tree(table, start_tree, model.bases(), tol=1e-13)
    start = g0.storage_complexity()
    assert start >= 1_000_000

    g1 = optimize_tree(g0, TreeProposalConfig(eps=1e-13, max_iterations=600,
                                              seed=11, restarts=2))
    final = g1.storage_complexity()
    assert final <= 4000

    dense = full_tensor(g1, cap=1 << 24).entries
    rel_err = np.linalg.norm(dense - table.entries) / np.linalg.norm(table.entries)
    assert rel_err <= 1e-10

    elapsed = time.time() - t0
    assert elapsed < 1800.0
    _report("criterion 2 (graphical tree optimization)",
            f"storage {start} -> {final}, dense error {rel_err:.2e}, "
            f"{elapsed / 60:.1f} min")


# -- criterion 3: truncated-Gaussian learning --------------------------------------------


def test_criterion_3_gaussian_learning(table1_grid):
    rows = table1_grid[10_000]
    eps = [r.rel_error for r in rows]
    mean_eps = float(np.mean(eps))
    assert 0.08 <= mean_eps <= 0.40

    best = min(rows, key=lambda r: r.rel_error)
    subsets = {tuple(nd["subset"]) for nd in json.loads(best.tree_json)["nodes"]}
    assert (2, 5) in subsets
    assert (1, 3, 4, 6) in subsets
    _report("criterion 3 (Gaussian learning, Table 1 scale)",
            f"mean eps {mean_eps:.3f} in [0.08, 0.40], best trial eps "
            f"{best.rel_error:.3f} with nodes {{2,5}} and {{1,3,4,6}}")


# -- criterion 4: convergence rate -----------------------------------------------------------


def test_criterion_4_convergence_rate(table1_grid):
    ns = sorted(table1_grid)
    means = [float(np.mean([r.rel_error for r in table1_grid[n]])) for n in ns]
    slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
    assert -0.7 <= slope <= -0.3
    detail = ", ".join(f"n={n}: {e:.3f}" for n, e in zip(ns, means))
    _report("criterion 4 (convergence rate)", f"slope {slope:.3f}; {detail}")


# -- criterion 5: Markov learning ---------------------------------------------------------------


def test_criterion_5_markov_learning(table3_batch):
    eps = [r.rel_error for r in table3_batch]
    comp = [r.complexity for r in table3_batch]
    mean_eps = float(np.mean(eps))
    mean_comp = float(np.mean(comp))
    assert 0.03 <= mean_eps <= 0.12
    assert 250.0 <= mean_comp <= 700.0
    _report("criterion 5 (Markov learning, Table 3 scale)",
            f"mean eps {mean_eps:.3f} in [0.03, 0.12], "
            f"mean complexity {mean_comp:.0f} in [250, 700]")


# -- criterion 6: leave-one-out exactness ------------------------------------------------------


def test_criterion_6_loo_exactness():
    gen = np.random.default_rng(606)
    worst_brute = worst_forms = 0.0
    for _ in range(100):
        n = int(gen.integers(2, 31))
        k = int(gen.integers(1, 41))
        psi = gen.standard_normal((n, k)) * float(gen.uniform(0.1, 3.0))
        size = int(gen.integers(1, k + 1))
        pattern = np.sort(gen.choice(k, size=size, replace=False))

        total = 0.0
        for i in range(n):
            c = np.zeros(k)
            c[pattern] = np.delete(psi, i, axis=0)[:, pattern].mean(axis=0)
            total += float(c @ c) - 2.0 * float(psi[i] @ c)
        brute = total / n

        closed = loo_risk(pattern, psi)
        pairwise = loo_risk_pairwise(pattern, psi)
        worst_brute = max(worst_brute, abs(closed - brute))
        worst_forms = max(worst_forms, abs(closed - pairwise))
    assert worst_brute <= 1e-10
    assert worst_forms <= 1e-10
    _report("criterion 6 (LOO exactness)",
            f"100 instances, |closed - brute| <= {worst_brute:.2e}, "
            f"|form1 - form2| <= {worst_forms:.2e}")


# -- criterion 7: oracle equivalences -------------------------------------------------------------


def test_criterion_7_oracle_equivalences():
    from treedens.learner import LearnerConfig, SampleSet, fit_fixed
    from treedens.tree_tensor import random_tree_tensor

    # full-rank canonical fit reproduces the empirical frequency table
    gen = np.random.default_rng(707)
    tree = td.build_linear_tree(3)
    bases = [td.CanonicalBasis(3)] * 3
    pts = np.column_stack([gen.integers(1, 4, 400) for _ in range(3)]).astype(float)
    ranks = {i: (1 if i == tree.root else 3) for i in range(len(tree))}
    ranks[tree.find_subset([1, 2])] = 9
    g = fit_fixed(tree, ranks, bases, SampleSet(pts), LearnerConfig(seed=7))
    freq = np.zeros((3, 3, 3))
    np.add.at(freq, tuple((pts.astype(int) - 1).T), 1.0)
    freq /= pts.shape[0]
    table_err = float(np.abs(full_tensor(g).entries - freq).max())
    assert table_err <= 1e-10

    # alpha-singular values match dense matricization SVDs on d <= 4 models
    worst_sv = 0.0
    for seed in range(10):
        d = 3 + seed % 2
        tr = td.random_binary_tree(d, np.random.default_rng(800 + seed))
        model = random_tree_tensor(tr, [td.CanonicalBasis(3)] * d,
                                   td.uniform_ranks(tr, 2),
                                   np.random.default_rng(900 + seed))
        dense = full_tensor(model).entries
        for alpha in range(1, len(tr)):
            axes = [v - 1 for v in tr.subset(alpha)]
            mat = np.moveaxis(dense, axes, range(len(axes))).reshape(
                int(np.prod([dense.shape[a] for a in axes])), -1)
            sv = np.linalg.svd(mat, compute_uv=False)
            mine = alpha_singular_values(model, alpha)
            m = min(len(sv), len(mine))
            worst_sv = max(worst_sv, float(np.abs(np.sort(mine)[::-1][:m]
                                                  - sv[:m]).max()))
    assert worst_sv <= 1e-10

    # rank inequalities for unions, sums and products on random instances
    checked = 0
    for seed in range(100):
        gen = np.random.default_rng(1000 + seed)
        d = int(gen.integers(3, 5))
        tr = td.random_binary_tree(d, gen)
        a = random_tree_tensor(tr, [td.CanonicalBasis(3)] * d,
                               td.uniform_ranks(tr, 2), gen)
        b = random_tree_tensor(tr, [td.CanonicalBasis(3)] * d,
                               td.uniform_ranks(tr, 2), gen)
        fa, fb = full_tensor(a).entries, full_tensor(b).entries
        shape = fa.shape
        r1 = alpha_rank_of_full(FullTensor(shape, fa), [1], 1e-10)
        r2 = alpha_rank_of_full(FullTensor(shape, fa), [2], 1e-10)
        r12 = alpha_rank_of_full(FullTensor(shape, fa), [1, 2], 1e-10)
        assert r12 <= r1 * r2
        for alpha in ([1], [2], [1, 2]):
            ra = alpha_rank_of_full(FullTensor(shape, fa), alpha, 1e-10)
            rb = alpha_rank_of_full(FullTensor(shape, fb), alpha, 1e-10)
            rsum = alpha_rank_of_full(FullTensor(shape, fa + fb), alpha, 1e-10)
            rprod = alpha_rank_of_full(FullTensor(shape, fa * fb), alpha, 1e-10)
            assert rsum <= ra + rb
            assert rprod <= ra * rb
        checked += 1
    _report("criterion 7 (oracle equivalences)",
            f"frequency-table error {table_err:.2e}, singular-value error "
            f"{worst_sv:.2e}, rank inequalities on {checked} instances")


# -- criterion 8: ERM monotonicity ----------------------------------------------------------------


def test_criterion_8_erm_monotonicity(table1_grid, table3_batch):
    worst = 0.0
    count = 0
    for rows in list(table1_grid.values()) + [table3_batch]:
        for r in rows:
            worst = max(worst, r.max_trace_jump)
            count += 1
    assert worst <= 1e-10
    _report("criterion 8 (ERM monotonicity)",
            f"max per-update risk increase {worst:.2e} over {count} adaptive fits")
