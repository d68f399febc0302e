"""Empirical risk minimization over a fixed tree tensor format.

The contrast is gamma(g, x) = ||g||^2 - 2 g(x), whose risk is minimized by
the sampled density.  Because the model is linear in each core and the
orthonormalization center makes the multiplying system orthonormal, every
block update is the closed form C = mean_i Psi(x_i).  Sparsity in a core is
handled by zeroing entries outside a pattern; the pattern is chosen with the
exact leave-one-out risk estimator, which is available in closed form.

The fitting loop keeps a movable orthonormalization center and caches
per-sample contraction values, recomputing only what a center move or core
update invalidates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .bases import Basis
from .dimension_tree import (DimensionTree, check_ranks_admissible,
                             clip_ranks_admissible)
from .tree_tensor import (
    Network,
    TreeTensor,
    add,
    batch_environments,
    evaluate_many,
    norm,
    orthonormalize_at,
    random_tree_tensor,
    scale,
    truncate_to_ranks,
)

__all__ = [
    "SampleSet",
    "LearnerConfig",
    "empirical_risk",
    "test_risk",
    "relative_error",
    "core_update",
    "psi_samples",
    "loo_risk",
    "loo_risk_pairwise",
    "sparse_candidates",
    "select_core",
    "fit_fixed",
    "split_samples",
]


@dataclass(frozen=True)
class SampleSet:
    """n x d array of observations (reals or 1-based category indices)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def split_samples(s: SampleSet, fraction: float, rng: np.random.Generator
                  ) -> tuple[SampleSet, SampleSet]:
    """Random split into (1-fraction, fraction) parts; both non-empty."""
    n_hold = max(1, min(s.n - 1, int(round(fraction * s.n))))
    perm = rng.permutation(s.n)
    return SampleSet(s.points[perm[n_hold:]]), SampleSet(s.points[perm[:n_hold]])


@dataclass(frozen=True)
class LearnerConfig:
    """Alternating-minimization settings.

    sparsity: "auto" applies the working-set strategy on leaves whose basis
    has a non-trivial pattern sequence (polynomials) and nothing elsewhere;
    "none", "working_set" and "thresholding" force a strategy globally.

    init: "marginal_product" starts from the product of per-dimension
    projection estimates padded with a small random rank completion, which
    keeps the multiplicative environments of the first sweep sign-coherent
    (random products over many dimensions cancel at the samples and strand
    the alternating updates at noise); "random_orthonormal" is available for
    comparison.
    """

    max_sweeps: int = 10
    stagnation_tol: float = 1e-6
    sparsity: str = "auto"
    seed: int = 0
    init: str = "marginal_product"
    monotone_guard: bool = True
    pattern_schedule: str = "coarse"

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.stagnation_tol < 0:
            raise ValueError("stagnation_tol must be >= 0")
        if self.sparsity not in ("auto", "none", "working_set", "thresholding"):
            raise ValueError(f"unknown sparsity strategy {self.sparsity!r}")
        if self.init not in ("marginal_product", "random_orthonormal"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.pattern_schedule not in ("full", "coarse"):
            raise ValueError(f"unknown pattern schedule {self.pattern_schedule!r}")


# -- risk functionals ----------------------------------------------------------


def empirical_risk(g: TreeTensor, s: SampleSet) -> float:
    """||g||^2 - (2/n) sum_i g(x_i)."""
    return norm(g) ** 2 - 2.0 * float(np.mean(evaluate_many(g, s.points)))


def test_risk(g: TreeTensor, s_test: SampleSet) -> float:
    """Risk estimate on held-out samples; same formula as the empirical risk."""
    return empirical_risk(g, s_test)


def relative_error(g: TreeTensor, f_values: Callable[[np.ndarray], np.ndarray],
                   s_eps: SampleSet) -> float:
    """(sum (f-g)^2 / sum f^2)^(1/2) over reference-measure samples."""
    f = np.asarray(f_values(s_eps.points), dtype=float)
    gv = evaluate_many(g, s_eps.points)
    den = float(np.sum(f ** 2))
    if den == 0.0:
        raise ValueError("oracle density vanishes on the whole sample")
    return float(np.sqrt(np.sum((f - gv) ** 2) / den))


# -- leave-one-out estimator -----------------------------------------------------


def loo_risk(pattern: np.ndarray, psi: np.ndarray) -> float:
    """Closed-form leave-one-out risk of the pattern-constrained update.

    ``pattern`` holds flat indices into the core; ``psi`` is the (n, K)
    matrix of Psi values at the samples.
    """
    n = psi.shape[0]
    if n < 2:
        raise ValueError("leave-one-out needs n >= 2")
    pattern = np.asarray(pattern, dtype=int)
    if pattern.size == 0:
        return 0.0
    sub = psi[:, pattern]
    c = sub.mean(axis=0)
    c2 = float(c @ c)
    p2 = float(np.sum(sub ** 2))
    return _loo_from_sums(n, c2, p2)


def _loo_from_sums(n: int, c2: float, p2: float) -> float:
    return -(n * n) / ((n - 1) ** 2) * c2 + (2 * n - 1) / (n * (n - 1) ** 2) * p2


def loo_risk_pairwise(pattern: np.ndarray, psi: np.ndarray) -> float:
    """Second closed form: a double sum over sample pairs (reference oracle)."""
    n = psi.shape[0]
    if n < 2:
        raise ValueError("leave-one-out needs n >= 2")
    pattern = np.asarray(pattern, dtype=int)
    if pattern.size == 0:
        return 0.0
    sub = psi[:, pattern]
    sq = float(np.sum(sub ** 2))
    cross = float(np.sum(np.sum(sub, axis=0) ** 2) - sq)
    return (sq - n / (n - 1) * cross) / (n * (n - 1))


# -- per-node quantities ----------------------------------------------------------


class _FitWorkspace:
    """Center-moving network plus per-sample value caches over a sample set."""

    def __init__(self, net: Network, points: np.ndarray):
        self.net = net
        self.tree = net.tree
        self.n = points.shape[0]
        self.phi: dict[int, np.ndarray] = {}
        for leaf in self.tree.leaves():
            nu = self.tree.leaf_dim(leaf)
            self.phi[leaf] = net.bases[nu - 1].eval_many(points[:, nu - 1])
        self._values: dict[int, np.ndarray] = {}

    def invalidate(self, nodes) -> None:
        for node in nodes:
            self._values.pop(node, None)
            for up in self.tree.ascendants(node):
                self._values.pop(up, None)

    def value(self, node: int) -> np.ndarray:
        if node not in self._values:
            if self.tree.is_leaf(node):
                self._values[node] = self.phi[node] @ self.net.cores[node]
            else:
                kids = self.tree.children(node)
                vals = [self.value(c) for c in kids]
                self._values[node] = np.einsum(
                    "nb,nc,bck->nk", vals[0], vals[1], self.net.cores[node],
                    optimize=True)
        return self._values[node]

    def move(self, alpha: int) -> None:
        self.invalidate(self.net.move_center_to(alpha))

    def set_core(self, alpha: int, core: np.ndarray) -> None:
        self.net.cores[alpha] = core
        self.invalidate([alpha])

    def trim_rank(self, alpha: int) -> None:
        """Drop numerically dead rank directions of the center core.

        A pattern-masked core can be rank-deficient; a later QR would then
        pad it with arbitrary orthonormal columns reaching outside the
        pattern, letting the unconstrained neighbor updates route weight
        around the sparsity constraint.  Trimming the dead directions (and
        absorbing the rotation into the parent) keeps the pattern honest and
        leaves the represented function unchanged.
        """
        if alpha == self.tree.root or self.net.center != alpha:
            return
        core = self.net.cores[alpha]
        r = core.shape[-1]
        if r <= 1:
            return
        u, sv, vt = np.linalg.svd(core.reshape(-1, r), full_matrices=False)
        q = max(1, int(np.sum(sv > 1e-14 * sv[0]))) if sv[0] > 0 else 1
        if q >= r:
            return
        self.net.cores[alpha] = (u[:, :q] * sv[:q]).reshape(core.shape[:-1] + (q,))
        par = self.tree.parent(alpha)
        ax = self.tree.children(par).index(alpha)
        pc = np.tensordot(self.net.cores[par], vt[:q].T, axes=([ax], [0]))
        self.net.cores[par] = np.moveaxis(pc, -1, ax)
        self.invalidate([alpha, par])

    def env(self, alpha: int) -> np.ndarray:
        return batch_environments(self.tree, self.net.cores, alpha, self.n, self.value)

    def psi_mean_and_sq(self, alpha: int) -> tuple[np.ndarray, np.ndarray]:
        """(mean_i Psi(x_i), sum_i Psi(x_i)^2), both shaped like the core."""
        w = self.env(alpha)
        if self.tree.is_leaf(alpha):
            phi = self.phi[alpha]
            mean = phi.T @ w / self.n
            sq = (phi ** 2).T @ (w ** 2)
            return mean, sq
        kids = self.tree.children(alpha)
        v = [self.value(c) for c in kids]
        mean = np.einsum("nb,nc,nk->bck", v[0], v[1], w, optimize=True) / self.n
        sq = np.einsum("nb,nc,nk->bck", v[0] ** 2, v[1] ** 2, w ** 2, optimize=True)
        return mean, sq

    def psi_matrix(self, alpha: int) -> np.ndarray:
        """Dense (n, K) matrix of flattened Psi values (small cases only)."""
        w = self.env(alpha)
        if self.tree.is_leaf(alpha):
            out = np.einsum("ni,na->nia", self.phi[alpha], w)
        else:
            kids = self.tree.children(alpha)
            out = np.einsum("nb,nc,nk->nbck", self.value(kids[0]),
                            self.value(kids[1]), w, optimize=True)
        return out.reshape(self.n, -1)


def _workspace_for(g: TreeTensor, alpha: int, s: SampleSet) -> _FitWorkspace:
    ws = _FitWorkspace(Network(g), s.points)
    ws.move(alpha)
    return ws


def marginal_product_tensor(tree: DimensionTree, bases: Sequence[Basis],
                            s: SampleSet) -> TreeTensor:
    """Rank-one model with each leaf set to its per-dimension projection.

    For canonical bases this is the product of empirical marginals; for
    orthonormal polynomial bases it is the product of one-dimensional
    projection density estimates.
    """
    from .tree_tensor import TreeTensor as _TT
    bases = tuple(bases)
    cores: list[np.ndarray] = []
    for i in range(len(tree)):
        if tree.is_leaf(i):
            nu = tree.leaf_dim(i)
            phi = bases[nu - 1].eval_many(s.points[:, nu - 1])
            cores.append(phi.mean(axis=0)[:, None])
        else:
            cores.append(np.ones((1,) * len(tree.children(i)) + (1,)))
    return _TT(tree, bases, tuple(cores))


def core_update(g: TreeTensor, alpha: int, s: SampleSet) -> np.ndarray:
    """Closed-form risk minimizer over the core at ``alpha``: mean of Psi.

    Orthonormalizes at ``alpha`` first if needed (the formula assumes it).
    """
    if g.orthonormal_root != alpha:
        g = orthonormalize_at(g, alpha)
    ws = _workspace_for(g, alpha, s)
    return ws.psi_mean_and_sq(alpha)[0]


def psi_samples(g: TreeTensor, alpha: int, s: SampleSet) -> np.ndarray:
    """The (n, K^alpha) matrix of Psi values at the samples."""
    if g.orthonormal_root != alpha:
        g = orthonormalize_at(g, alpha)
    return _workspace_for(g, alpha, s).psi_matrix(alpha)


# -- sparsity patterns --------------------------------------------------------------


def _schedule_patterns(basis: Basis, schedule: str) -> list[np.ndarray]:
    """The basis pattern sequence, optionally subsampled.

    The coarse schedule keeps every low-degree set and then every fifth one
    (plus the full set): with 51 nested candidates, the plain argmin of the
    noisy leave-one-out scores overselects at small n, and a thinner
    sequence blunts that multiple-comparison effect.
    """
    patterns = basis.candidate_patterns()
    if schedule == "full" or len(patterns) <= 16:
        return patterns
    keep = [l for l in range(len(patterns)) if l <= 15 or l % 5 == 0]
    if keep[-1] != len(patterns) - 1:
        keep.append(len(patterns) - 1)
    return [patterns[l] for l in keep]


def _working_set_patterns(basis: Basis, core_shape: tuple[int, ...],
                          schedule: str = "full") -> list[np.ndarray]:
    """Flat index patterns I_l x {1..r} from the basis pattern sequence."""
    n_rows, r = core_shape
    out = []
    for rows in _schedule_patterns(basis, schedule):
        grid = rows[:, None] * r + np.arange(r)[None, :]
        out.append(grid.reshape(-1))
    return out


def _thresholding_patterns(core: np.ndarray) -> list[np.ndarray]:
    """Nested patterns from the ordered distinct magnitudes of the entries."""
    flat = np.abs(core.reshape(-1))
    values = np.unique(flat)[::-1]  # a_1 > a_2 > ... > a_L
    return [np.flatnonzero(flat >= a) for a in values]


def sparse_candidates(g: TreeTensor, alpha: int, s: SampleSet, strategy: str
                      ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Candidate (pattern, constrained core) pairs for the node update.

    Each core is the unconstrained closed-form update with the entries
    outside the pattern set to zero.
    """
    if strategy not in ("working_set", "thresholding"):
        raise ValueError(f"unknown strategy {strategy!r}")
    u = core_update(g, alpha, s)
    if strategy == "working_set":
        if not g.tree.is_leaf(alpha):
            raise ValueError("working-set patterns are defined on leaf cores")
        basis = g.bases[g.tree.leaf_dim(alpha) - 1]
        patterns = _working_set_patterns(basis, u.shape)
    else:
        patterns = _thresholding_patterns(u)
    out = []
    for pat in patterns:
        core = np.zeros(u.size)
        core[pat] = u.reshape(-1)[pat]
        out.append((pat, core.reshape(u.shape)))
    return out


def select_core(candidates: Sequence[tuple[np.ndarray, np.ndarray]],
                psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The candidate minimizing the leave-one-out risk; ties go to the sparsest."""
    if not candidates:
        raise ValueError("no candidates to select from")
    ordered = sorted(range(len(candidates)), key=lambda i: len(candidates[i][0]))
    best, best_risk = None, np.inf
    for i in ordered:
        r = loo_risk(candidates[i][0], psi)
        if r < best_risk:
            best, best_risk = i, r
    return candidates[best]


# -- the alternating fit ---------------------------------------------------------------


def _marginal_init(tree: DimensionTree, bases, ranks: Mapping[int, int],
                   s: SampleSet, cfg: "LearnerConfig") -> TreeTensor:
    """Marginal-product start padded by a small random completion to the ranks.

    Each leaf's marginal coefficient vector is itself pruned by a univariate
    leave-one-out selection, so the starting model is the product of
    degree-selected one-dimensional estimates rather than full-degree ones
    (whose noise the multiplicative structure would amplify).
    """
    m = marginal_product_tensor(tree, bases, s)
    if s.n >= 2 and cfg.sparsity != "none":
        cores = list(m.cores)
        for leaf in tree.leaves():
            basis = bases[tree.leaf_dim(leaf) - 1]
            if len(basis.candidate_patterns()) <= 1:
                continue
            phi = basis.eval_many(s.points[:, tree.leaf_dim(leaf) - 1])
            u = phi.mean(axis=0)[:, None]
            sq = (phi ** 2).sum(axis=0)[:, None]
            pattern = _select_pattern(u, sq, "working_set", bases, tree, leaf,
                                      s.n, None, cfg.pattern_schedule)
            masked = np.zeros(u.size)
            masked[pattern] = u.reshape(-1)[pattern]
            cores[leaf] = masked.reshape(u.shape)
        m = TreeTensor(tree, m.bases, tuple(cores))
    if all(ranks[i] <= 1 for i in range(len(tree))):
        return m
    leaf_dims = {i: bases[tree.leaf_dim(i) - 1].size for i in tree.leaves()}
    pad_ranks = clip_ranks_admissible(
        tree, {i: (1 if i == tree.root else max(1, ranks[i] - 1))
               for i in range(len(tree))}, leaf_dims)
    noise = random_tree_tensor(tree, bases, pad_ranks, np.random.default_rng(cfg.seed))
    m_norm = norm(m)
    level = 1e-2 * (m_norm if m_norm > 0 else 1.0)
    g0 = add(m, scale(noise, level / max(norm(noise), 1e-300)))
    return truncate_to_ranks(g0, dict(ranks))


def _sweep_order(tree: DimensionTree) -> list[int]:
    """Leaves first, then interior nodes by decreasing level, root last."""
    return list(tree.leaves()) + sorted(tree.internal(), key=lambda i: -tree.level(i))


def _node_strategy(cfg: LearnerConfig, tree: DimensionTree, bases, alpha: int) -> str:
    if cfg.sparsity == "none":
        return "none"
    if cfg.sparsity == "thresholding":
        return "thresholding"
    is_leaf = tree.is_leaf(alpha)
    if cfg.sparsity == "working_set":
        return "working_set" if is_leaf else "none"
    # auto: working set on leaves with a non-trivial pattern sequence
    if is_leaf and len(bases[tree.leaf_dim(alpha) - 1].candidate_patterns()) > 1:
        return "working_set"
    return "none"


def fit_fixed(tree: DimensionTree, ranks: Mapping[int, int], bases: Sequence[Basis],
              s: SampleSet, cfg: Optional[LearnerConfig] = None,
              init_tensor: Optional[TreeTensor] = None,
              trace: Optional[list] = None) -> TreeTensor:
    """Alternating closed-form minimization of the empirical risk.

    Sweeps update every node with the pattern-selected mean of Psi until
    ``max_sweeps`` or the per-sweep relative risk decrease stalls.  The
    recorded empirical risk trace is nonincreasing (within roundoff): the
    update installed at each node is the best LOO candidate among those not
    increasing the risk, and the unconstrained update always qualifies.
    """
    cfg = cfg or LearnerConfig()
    bases = tuple(bases)
    leaf_dims = {i: bases[tree.leaf_dim(i) - 1].size for i in tree.leaves()}
    check_ranks_admissible(tree, ranks, leaf_dims)

    if init_tensor is not None:
        if init_tensor.tree != tree:
            raise ValueError("init tensor tree mismatch")
        g0 = init_tensor
        if any(g0.rank(i) > ranks[i] for i in range(len(tree))):
            g0 = truncate_to_ranks(g0, dict(ranks))
    elif cfg.init == "random_orthonormal":
        rng = np.random.default_rng(cfg.seed)
        g0 = random_tree_tensor(tree, bases, ranks, rng)
    else:
        g0 = _marginal_init(tree, bases, ranks, s, cfg)

    ws = _FitWorkspace(Network(g0), s.points)
    order = _sweep_order(tree)
    n = s.n

    use_loo = n >= 2
    if n < 2 and cfg.sparsity not in ("none",):
        warnings.warn("n = 1: leave-one-out selection disabled, "
                      "falling back to unconstrained updates")

    # the sparsity pattern of each core is selected once, at the first visit;
    # later sweeps refit the coefficients on the fixed support (the exact
    # block minimizer over that support), so re-selection noise cannot
    # ratchet the patterns upward across sweeps.  Working-set supports are
    # stored as basis-row sets, which stay meaningful when a node's rank
    # shrinks; a rank-deficient masked core is trimmed immediately so that
    # no orthonormal completion can smuggle weight outside the pattern.
    support: dict[int, Optional[tuple[str, np.ndarray]]] = {}

    risk = np.inf
    for _ in range(cfg.max_sweeps):
        sweep_start_risk = risk
        for alpha in order:
            ws.move(alpha)
            core_prev = ws.net.cores[alpha]
            u, sq = ws.psi_mean_and_sq(alpha)
            risk_prev = float(np.sum(core_prev ** 2)
                              - 2.0 * np.sum(u * core_prev))

            if alpha not in support:
                strategy = _node_strategy(cfg, tree, bases, alpha)
                if strategy == "none" or not use_loo:
                    support[alpha] = None
                else:
                    flat = _select_pattern(
                        u, sq, strategy, bases, tree, alpha, n,
                        risk_prev if cfg.monotone_guard else None,
                        cfg.pattern_schedule)
                    if strategy == "working_set":
                        support[alpha] = ("rows", np.unique(flat // u.shape[-1]))
                    else:
                        support[alpha] = ("flat", flat)

            chosen = support[alpha]
            if chosen is None:
                new_core, risk = u, -float(np.sum(u ** 2))
            else:
                kind, idx = chosen
                new_core = np.zeros_like(u)
                if kind == "rows":
                    new_core.reshape(u.shape[0], -1)[idx] = \
                        u.reshape(u.shape[0], -1)[idx]
                else:
                    new_core.reshape(-1)[idx] = u.reshape(-1)[idx]
                risk = -float(np.sum(new_core ** 2))
            ws.set_core(alpha, new_core)
            if chosen is not None and chosen[0] == "rows":
                ws.trim_rank(alpha)
            if trace is not None:
                trace.append(risk)
        if sweep_start_risk - risk <= cfg.stagnation_tol * max(abs(risk), 1e-300):
            break
    return ws.net.to_tensor()


def _select_pattern(u: np.ndarray, sq: np.ndarray, strategy: str, bases, tree,
                    alpha: int, n: int, risk_cap: Optional[float],
                    schedule: str = "full") -> np.ndarray:
    """LOO-selected flat pattern; optionally rejects risk-increasing choices.

    Both strategies yield nested patterns that are prefixes of a fixed entry
    ordering (degree-major rows, or magnitudes descending), so the selection
    runs on cumulative sums instead of one pass per pattern.
    """
    flat_u2 = (u ** 2).reshape(-1)
    flat_sq = sq.reshape(-1)
    if strategy == "working_set":
        r = u.shape[-1]
        basis = bases[tree.leaf_dim(alpha) - 1]
        order = np.arange(u.size)
        cuts = [(len(rows)) * r
                for rows in _schedule_patterns(basis, schedule)]
    else:
        flat_abs = np.abs(u.reshape(-1))
        order = np.argsort(-flat_abs, kind="stable")
        sorted_abs = flat_abs[order]
        change = np.flatnonzero(np.diff(sorted_abs) != 0)
        cuts = [int(c) + 1 for c in change] + [len(order)]

    c2c = np.cumsum(flat_u2[order])
    p2c = np.cumsum(flat_sq[order])
    slack = 1e-12 * (1.0 + (abs(risk_cap) if risk_cap is not None else 0.0))
    best_cut, best_loo = None, np.inf
    for cut in cuts:
        c2, p2 = float(c2c[cut - 1]), float(p2c[cut - 1])
        if risk_cap is not None and -c2 > risk_cap + slack:
            continue
        loo = _loo_from_sums(n, c2, p2)
        if loo < best_loo:
            best_cut, best_loo = cut, loo
    if best_cut is None:
        best_cut = len(order)  # the unconstrained update never raises the risk
    return np.sort(order[:best_cut])
