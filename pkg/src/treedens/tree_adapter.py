"""Stochastic optimization of the dimension tree.

A Markov process over trees of the same arity: each proposal draws a number
of node permutations from a truncated power law, draws node pairs biased
toward high parent ranks and short tree paths, applies them with controlled
recompression, and is accepted exactly when the storage complexity does not
increase.  Applying one permutation contracts the cores along the tree path
between the two parents into a transfer tensor and re-splits it with
truncated SVDs according to the permuted tree, so the represented function
moves by at most a relative ``eps`` per proposal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dimension_tree import DimensionTree, TreeError, swap_nodes_with_map
from .tree_tensor import Network, TreeTensor, _pick_rank

__all__ = [
    "TreeProposalConfig",
    "draw_permutation_count",
    "draw_swap_pair",
    "apply_permutation",
    "optimize_tree",
]


@dataclass(frozen=True)
class TreeProposalConfig:
    gamma1: float = 2.0
    gamma2: float = 2.0
    gamma3: float = 2.0
    eps: float = 1e-13
    max_iterations: int = 100
    m_max: int = 10
    seed: int = 0
    restarts: int = 1
    size_cap: int = 1 << 25
    flop_cap: float = 2e10

    def __post_init__(self):
        if min(self.gamma1, self.gamma2, self.gamma3) <= 0:
            raise ValueError("gamma parameters must be positive")
        if not 0.0 <= self.eps < 1.0:
            raise ValueError("eps must be in [0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


# -- proposal distributions ------------------------------------------------------


def draw_permutation_count(cfg: TreeProposalConfig, rng: np.random.Generator) -> int:
    """m >= 1 with P(m = k) proportional to k^(-gamma1), truncated at m_max."""
    k = np.arange(1, cfg.m_max + 1)
    w = k.astype(float) ** (-cfg.gamma1)
    return int(rng.choice(k, p=w / w.sum()))


def _swappable_targets(tree: DimensionTree, alpha: int) -> list[int]:
    """Nodes that are neither ascendants nor descendants of alpha (nor alpha).

    The sibling is excluded too: swapping siblings returns the identical
    tree, so it carries zero probability under any cost-aware distance.
    """
    blocked = {alpha, tree.root}
    blocked.update(tree.ascendants(alpha))
    blocked.update(tree.descendants(alpha))
    parent = tree.parent(alpha)
    if parent is not None:
        blocked.update(c for c in tree.children(parent) if c != alpha)
    return [i for i in range(len(tree)) if i not in blocked]


def draw_swap_pair(tree: DimensionTree, ranks, cfg: TreeProposalConfig,
                   rng: np.random.Generator) -> tuple[int, int]:
    """Draw (alpha, beta): alpha favors high parent ranks, beta short paths.

    Nodes without any valid partner (everything else is an ascendant,
    descendant or the sibling) never enter the alpha draw; an error is only
    possible when the whole tree admits no swap at all (d = 2).
    """
    nodes = [i for i in range(len(tree))
             if i != tree.root and _swappable_targets(tree, i)]
    if not nodes:
        raise TreeError("no swappable node pair exists")
    w = np.array([float(ranks[tree.parent(i)]) ** cfg.gamma2 for i in nodes])
    alpha = int(rng.choice(nodes, p=w / w.sum()))
    targets = _swappable_targets(tree, alpha)
    dist = np.array([float(tree.path_length(alpha, b)) ** (-cfg.gamma3)
                     for b in targets])
    beta = int(rng.choice(targets, p=dist / dist.sum()))
    return alpha, beta


# -- applying one permutation -------------------------------------------------------


def _path_region(tree: DimensionTree, a: int, b: int):
    """Slots (path nodes between the parents), chains and the lca."""
    pa, pb = tree.parent(a), tree.parent(b)
    lca = tree.lca(pa, pb)
    a_chain = []
    node = pa
    while node != lca:
        a_chain.append(node)
        node = tree.parent(node)
    b_chain = []
    node = pb
    while node != lca:
        b_chain.append(node)
        node = tree.parent(node)
    return pa, pb, lca, a_chain, b_chain


def permutation_cost(g: TreeTensor, a: int, b: int) -> tuple[int, float]:
    """(transfer tensor entries, rough SVD flop estimate) for a swap."""
    tree = g.tree
    pa, pb, lca, a_chain, b_chain = _path_region(tree, a, b)
    slots = a_chain + b_chain + [lca]
    path = set(slots)
    entries = g.rank(lca)
    boundary = []
    for u in slots:
        for c in tree.children(u):
            if c not in path:
                entries *= g.rank(c)
                boundary.append(g.rank(c))
    flops = 0.0
    for u in a_chain + b_chain:
        rows = 1
        for c in tree.children(u):
            if c not in path:
                rows *= g.rank(c)
        rows *= max(boundary) if boundary else 1
        flops += float(rows) * float(entries)
    return int(entries), flops


def apply_permutation(g: TreeTensor, a: int, b: int, eps: float) -> TreeTensor:
    """Swap nodes a and b of g's tree, recompressing to relative error eps.

    The cores on the path between the two parents are contracted into a
    transfer tensor (boundary modes: the swapped subtrees, the side subtrees
    hanging off the path, and the lca's parent edge) and re-split by
    truncated SVDs following the permuted tree, with the squared error
    budget split evenly across the SVDs.  Subtree cores are carried over
    unchanged.
    """
    tree = g.tree
    tree._check_id(a)
    tree._check_id(b)
    if tree.subset_mask(a) & tree.subset_mask(b):
        raise TreeError(f"nodes {a} and {b} are not swappable")
    if tree.parent(a) == tree.parent(b):
        return g  # sibling swap: canonical form is unchanged

    pa, pb, lca, a_chain, b_chain = _path_region(tree, a, b)
    slots = a_chain + b_chain + [lca]
    path = set(slots)

    net = Network(g)
    net.move_center_to(lca)
    cores = net.cores

    # contract the path cores into the transfer tensor; modes carry labels
    # ("edge", x) naming the tree edge between x and its parent
    def build(u: int) -> tuple[np.ndarray, list]:
        arr = cores[u]
        labels = [("edge", c) for c in tree.children(u)] + [("edge", u)]
        for c in tree.children(u):
            if c in path:
                sub, sub_labels = build(c)
                ia = sub_labels.index(("edge", c))
                ib = labels.index(("edge", c))
                arr = np.tensordot(sub, arr, axes=([ia], [ib]))
                labels = (sub_labels[:ia] + sub_labels[ia + 1:]
                          + labels[:ib] + labels[ib + 1:])
        return arr, labels

    z, labels = build(lca)
    norm0 = float(np.linalg.norm(z))  # equals ||g||: attachments are isometric

    new_tree, id_map = swap_nodes_with_map(tree, a, b)

    # children edges of each slot in the permuted tree, with a and b exchanged
    def new_edges(u: int) -> list:
        out = []
        for c in tree.children(u):
            if c in path:
                out.append(("edge", c))
            elif c == a:
                out.append(("edge", b))
            elif c == b:
                out.append(("edge", a))
            else:
                out.append(("edge", c))
        return out

    # subsets in the permuted tree, to sort slot children canonically
    new_mask: dict = {}
    for i in range(len(tree)):
        if i not in path:
            new_mask[("edge", i)] = tree.subset_mask(i)

    def edge_size(lbl, arr, lbls) -> int:
        return arr.shape[lbls.index(lbl)]

    n_svd = len(a_chain) + len(b_chain)
    budget = (eps ** 2) * (norm0 ** 2) / max(n_svd, 1)
    new_cores_by_slot: dict[int, np.ndarray] = {}

    for u in a_chain + b_chain:
        edges = new_edges(u)
        edges.sort(key=lambda e: (new_mask[e] & -new_mask[e]).bit_length())
        new_mask[("edge", u)] = 0
        for e in edges:
            new_mask[("edge", u)] |= new_mask[e]
        axes = [labels.index(e) for e in edges]
        z = np.moveaxis(z, axes, range(len(axes)))
        moved = [labels[i] for i in axes]
        rest = [l for l in labels if l not in moved]
        labels = moved + rest
        row_shape = z.shape[: len(axes)]
        mat = z.reshape(int(np.prod(row_shape)), -1)
        u_mat, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = _pick_rank(s, budget, None)
        new_cores_by_slot[u] = u_mat[:, :r].reshape(row_shape + (r,))
        z = (s[:r, None] * vt[:r]).reshape((r,) + z.shape[len(axes):])
        labels = [("edge", u)] + labels[len(axes):]

    # the lca absorbs the remaining weight; no SVD needed
    edges = new_edges(lca)
    edges.sort(key=lambda e: (new_mask[e] & -new_mask[e]).bit_length())
    axes = [labels.index(e) for e in edges] + [labels.index(("edge", lca))]
    z = np.moveaxis(z, axes, range(len(axes)))
    new_cores_by_slot[lca] = z

    out_cores: list[Optional[np.ndarray]] = [None] * len(new_tree)
    for old_id in range(len(tree)):
        if old_id in path:
            out_cores[id_map[old_id]] = new_cores_by_slot[old_id]
        else:
            out_cores[id_map[old_id]] = cores[old_id]
    return TreeTensor(new_tree, g.bases, tuple(out_cores),
                      orthonormal_root=id_map[lca])


# -- the optimization chain -----------------------------------------------------------


def optimize_tree(g: TreeTensor, cfg: Optional[TreeProposalConfig] = None,
                  events: Optional[list] = None) -> TreeTensor:
    """Markov chain over trees, accepting complexity-nonincreasing proposals.

    Each iteration proposes m node permutations applied at tolerance eps/m,
    so any accepted proposal moves the function by at most a relative eps.
    Proposals whose transfer tensors exceed the size or flop caps are
    discarded untried (they could not pay off on this complexity budget).
    With ``restarts > 1`` several independent chains run and the one ending
    at the lowest complexity wins.
    """
    cfg = cfg or TreeProposalConfig()
    best = None
    for chain in range(cfg.restarts):
        chain_events: list = []
        result = _run_chain(g, cfg, np.random.default_rng((cfg.seed, chain)),
                            chain_events)
        if events is not None:
            events.extend({"chain": chain, **e} for e in chain_events)
        if best is None or result.storage_complexity() < best.storage_complexity():
            best = result
    return best


def _run_chain(g: TreeTensor, cfg: TreeProposalConfig, rng: np.random.Generator,
               events: Optional[list]) -> TreeTensor:
    current = g
    current_cost = g.storage_complexity()
    for it in range(cfg.max_iterations):
        m = draw_permutation_count(cfg, rng)
        candidate = current
        feasible = True
        swaps = []
        for _ in range(m):
            try:
                pair = draw_swap_pair(candidate.tree, candidate.ranks(), cfg, rng)
            except TreeError:
                feasible = False
                break
            size, flops = permutation_cost(candidate, *pair)
            if size > cfg.size_cap or flops > cfg.flop_cap:
                feasible = False
                break
            candidate = apply_permutation(candidate, *pair, eps=cfg.eps / m)
            swaps.append(pair)
        if not feasible:
            continue
        cost = candidate.storage_complexity()
        if cost <= current_cost:
            current, current_cost = candidate, cost
            if events is not None:
                events.append({"iteration": it, "swaps": len(swaps),
                               "complexity": cost})
    return current
