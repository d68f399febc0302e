"""Adaptive selection of tree-based ranks.

Each round fits the model at the current ranks, builds a rank-one additive
correction from the training residual, refits the corrected model briefly,
and reads the smallest singular value at every node as an estimate of the
truncation error a rank increment would remove.  Nodes scoring within a
factor theta of the best get their rank increased by one.  The loop stops
when the held-out risk stops improving or a complexity budget is reached,
and returns the iterate with the best held-out risk.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .bases import Basis
from .dimension_tree import DimensionTree, storage_complexity
from .learner import (
    LearnerConfig,
    SampleSet,
    _FitWorkspace,
    empirical_risk,
    fit_fixed,
    marginal_product_tensor,
)
from .tree_tensor import (
    Network,
    TreeTensor,
    add,
    alpha_singular_values,
    norm,
    random_tree_tensor,
    zero_tree_tensor,
)
from .dimension_tree import uniform_ranks

__all__ = [
    "RankAdaptConfig",
    "AdaptationState",
    "rank_one_correction",
    "cross_term",
    "truncation_scores",
    "select_nodes",
    "adapt_ranks",
]


@dataclass(frozen=True)
class RankAdaptConfig:
    theta: float = 0.8
    patience: int = 2
    max_rounds: int = 30
    complexity_cap_factor: float = 10.0
    correction_sweeps: int = 3
    score_fit_sweeps: int = 3
    seed: int = 0
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.patience < 0 or self.max_rounds < 1:
            raise ValueError("bad patience/max_rounds")


@dataclass
class AdaptationState:
    """Trajectory of one adaptation run; histories are append-only."""

    model: TreeTensor
    ranks: dict[int, int]
    iteration: int
    risk_history: list[float] = field(default_factory=list)
    validation_history: list[float] = field(default_factory=list)
    complexity_history: list[int] = field(default_factory=list)
    fit_traces: list[list[float]] = field(default_factory=list)

    def max_trace_jump(self) -> float:
        """Largest per-update empirical risk increase over all inner fits."""
        worst = 0.0
        for tr in self.fit_traces:
            for prev, cur in zip(tr[:-1], tr[1:]):
                worst = max(worst, cur - prev)
        return worst


# -- cross term ---------------------------------------------------------------


def cross_term(g: TreeTensor, c: TreeTensor, alpha: int) -> np.ndarray:
    """The tensor S^alpha with <S^alpha, C> = integral of (Psi_c C)(x) g(x) dmu.

    Computed by contracting per-leaf Gram matrices between c's and g's cores
    up the tree (downward Grams) and down the root-to-alpha path (environment
    Grams); orthonormal bases make the leaf Grams plain matrix products.
    """
    if g.tree != c.tree:
        raise ValueError("tree mismatch between model and correction")
    if g.bases != c.bases:
        raise ValueError("basis mismatch between model and correction")
    tree = g.tree

    grams: dict[int, np.ndarray] = {}

    def gram(node: int) -> np.ndarray:
        if node not in grams:
            if tree.is_leaf(node):
                grams[node] = c.cores[node].T @ g.cores[node]
            else:
                k1, k2 = tree.children(node)
                grams[node] = np.einsum(
                    "ijk,IJK,iI,jJ->kK", c.cores[node], g.cores[node],
                    gram(k1), gram(k2), optimize=True)
        return grams[node]

    env = np.ones((1, 1))
    chain = list(reversed(tree.ascendants(alpha)))
    if alpha != tree.root:
        chain.append(alpha)
    for par, node in zip(chain[:-1], chain[1:]):
        kids = tree.children(par)
        ax = kids.index(node)
        sib = kids[1 - ax]
        if ax == 0:
            env = np.einsum("ASK,ask,Ss,Kk->Aa", c.cores[par], g.cores[par],
                            gram(sib), env, optimize=True)
        else:
            env = np.einsum("SAK,sak,Ss,Kk->Aa", c.cores[par], g.cores[par],
                            gram(sib), env, optimize=True)

    if tree.is_leaf(alpha):
        return np.einsum("ik,Kk->iK", g.cores[alpha], env, optimize=True)
    k1, k2 = tree.children(alpha)
    return np.einsum("bck,Bb,Cc,Kk->BCK", g.cores[alpha], gram(k1), gram(k2),
                     env, optimize=True)


# -- rank-one correction ----------------------------------------------------------


def rank_one_correction(g: TreeTensor, s: SampleSet,
                        sweeps: int = 3,
                        rng: Optional[np.random.Generator] = None) -> TreeTensor:
    """Rank-one correction c minimizing the empirical risk of g + c.

    All interior correction ranks are pinned to one (interior cores are unit
    scalars up to the orthonormalization gauge); only the leaf factors move.
    Each leaf solve is the closed form mean_i Psi(x_i) - S^alpha, where the
    cross term removes the component already explained by g.
    """
    rng = rng or np.random.default_rng(0)
    tree, bases = g.tree, g.bases
    # start from the marginal-product estimate: a sign-coherent environment
    # for the first leaf solve (random factors cancel at the samples when d
    # is large and strand the alternation at noise)
    c0 = marginal_product_tensor(tree, bases, s)
    if norm(c0) == 0.0:
        c0 = random_tree_tensor(tree, bases, uniform_ranks(tree, 1), rng)
    ws = _FitWorkspace(Network(c0), s.points)
    for _ in range(max(1, sweeps)):
        for alpha in tree.leaves():
            ws.move(alpha)
            u = ws.psi_mean_and_sq(alpha)[0]
            s_alpha = cross_term(g, ws.net.to_tensor(), alpha)
            ws.set_core(alpha, u - s_alpha)
    return ws.net.to_tensor()


# -- truncation scores and node selection ---------------------------------------------


def truncation_scores(g_tilde: TreeTensor, ranks: Mapping[int, int]
                      ) -> dict[int, float]:
    """eta_alpha = sigma_{r_alpha + 1} of g_tilde at every non-root node.

    g_tilde is the corrected refit whose ranks exceed ``ranks`` by one; the
    first singular value past the old rank estimates what a rank increment
    would capture.
    """
    scores: dict[int, float] = {}
    for alpha in range(len(g_tilde.tree)):
        if alpha == g_tilde.tree.root:
            continue
        sigma = alpha_singular_values(g_tilde, alpha)
        r = int(ranks.get(alpha, 1))
        scores[alpha] = float(sigma[r]) if len(sigma) > r else 0.0
    return scores


def select_nodes(scores: Mapping[int, float], theta: float,
                 ranks: Mapping[int, int], tree: DimensionTree,
                 leaf_dims: Mapping[int, int]) -> set[int]:
    """Nodes whose score reaches theta times the best, filtered by admissibility.

    Admissibility is judged on the jointly incremented rank vector: an
    internal node may rise together with its children.  Besides the leaf and
    children-product caps, the rank across an edge is also bounded by the
    complement side (parent rank times sibling ranks); a rank granted past
    that bound would be structurally unrepresentable and the next
    orthonormalization sweep would silently trim it away.
    """
    def repair(selected: set[int]) -> set[int]:
        selected = set(selected)
        trial = {alpha: ranks[alpha] + (1 if alpha in selected else 0)
                 for alpha in range(len(tree))}

        def violated(alpha: int) -> bool:
            if tree.is_leaf(alpha):
                if trial[alpha] > leaf_dims[alpha]:
                    return True
            else:
                cap = 1
                for child in tree.children(alpha):
                    cap *= trial[child]
                if trial[alpha] > cap:
                    return True
            parent = tree.parent(alpha)
            up_cap = trial[parent]
            for sib in tree.children(parent):
                if sib != alpha:
                    up_cap *= trial[sib]
            return trial[alpha] > up_cap

        changed = True
        while changed:
            changed = False
            for alpha in sorted(selected):
                if violated(alpha):
                    selected.discard(alpha)
                    trial[alpha] = ranks[alpha]
                    changed = True
        return selected

    candidates = {alpha: eta for alpha, eta in scores.items()
                  if alpha != tree.root}
    while candidates:
        top = max(candidates.values())
        if top <= 0.0:
            return set()
        window = {alpha for alpha, eta in candidates.items()
                  if eta >= theta * top}
        selected = repair(window)
        if selected:
            return selected
        # every node in the window is structurally stuck at the current
        # neighbor ranks; slide the window past it and try lower scores
        for alpha in window:
            candidates.pop(alpha, None)
    return set()


# -- the adaptation loop -----------------------------------------------------------------


def adapt_ranks(tree: DimensionTree, bases: Sequence[Basis], s: SampleSet,
                s_valid: SampleSet, cfg: Optional[RankAdaptConfig] = None,
                tree_hook: Optional[Callable[[TreeTensor, int], TreeTensor]] = None
                ) -> AdaptationState:
    """Alternate fixed-rank fits with theta-selected rank increments.

    ``tree_hook``, when given, may replace the fitted model with an
    equivalent one on a different dimension tree after each fit (dimension
    tree adaptation); ranks are re-read from the returned model.  The state
    returned carries the model with the best held-out risk.
    """
    cfg = cfg or RankAdaptConfig()
    bases = tuple(bases)
    rng = np.random.default_rng(cfg.seed)
    ranks = uniform_ranks(tree, 1)
    leaf_dims = {i: bases[tree.leaf_dim(i) - 1].size for i in tree.leaves()}
    cap = cfg.complexity_cap_factor * s.n

    state = AdaptationState(model=zero_tree_tensor(tree, bases), ranks=dict(ranks),
                            iteration=0)
    best_val = np.inf
    fails = 0

    for round_idx in range(cfg.max_rounds):
        # each round refits from the marginal-product init rather than from
        # the corrected refit: at small n the correction overfits and a warm
        # start drags its noise directions into the next round's model
        fit_cfg = replace(cfg.learner, seed=int(rng.integers(2 ** 31)))
        trace: list[float] = []
        state.fit_traces.append(trace)
        g = fit_fixed(tree, ranks, bases, s, fit_cfg, trace=trace)
        if tree_hook is not None:
            g = tree_hook(g, round_idx)
            tree = g.tree
            ranks = g.ranks()
            leaf_dims = {i: bases[tree.leaf_dim(i) - 1].size for i in tree.leaves()}

        val = empirical_risk(g, s_valid)
        state.risk_history.append(empirical_risk(g, s))
        state.validation_history.append(val)
        state.complexity_history.append(g.storage_complexity())

        improve_tol = 1e-9 * max(1.0, abs(best_val) if np.isfinite(best_val) else 1.0)
        if val < best_val - improve_tol:
            best_val = val
            state.model = g
            state.ranks = g.ranks()
            state.iteration = round_idx
            fails = 0
        else:
            fails += 1
        if fails > cfg.patience or round_idx == cfg.max_rounds - 1:
            break

        c = rank_one_correction(g, s, sweeps=cfg.correction_sweeps, rng=rng)
        g_plus = add(g, c)
        score_cfg = replace(cfg.learner, max_sweeps=cfg.score_fit_sweeps,
                            seed=int(rng.integers(2 ** 31)))
        tilde_ranks = _clip_ranks(tree, g_plus.ranks(), leaf_dims)
        score_trace: list[float] = []
        state.fit_traces.append(score_trace)
        g_tilde = fit_fixed(tree, tilde_ranks, bases, s, score_cfg,
                            init_tensor=g_plus, trace=score_trace)
        scores = truncation_scores(g_tilde, ranks)
        selected = select_nodes(scores, cfg.theta, ranks, tree, leaf_dims)
        if not selected:
            break
        new_ranks = dict(ranks)
        for alpha in selected:
            new_ranks[alpha] += 1
        if storage_complexity(tree, new_ranks, leaf_dims) > cap:
            break
        ranks = new_ranks
    return state


def _clip_ranks(tree: DimensionTree, ranks: Mapping[int, int],
                leaf_dims: Mapping[int, int]) -> dict[int, int]:
    """Largest admissible rank vector at or below the given one."""
    out = dict(ranks)
    out[tree.root] = 1
    for alpha in tree.leaves():
        out[alpha] = min(out[alpha], leaf_dims[alpha])
    # children caps, tightened bottom-up
    for alpha in sorted(tree.internal(), key=lambda i: -tree.level(i)):
        if alpha == tree.root:
            continue
        cap = 1
        for child in tree.children(alpha):
            cap *= out[child]
        out[alpha] = min(out[alpha], cap)
    return out
