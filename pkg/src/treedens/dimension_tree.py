"""Dimension partition trees over the variable set {1, ..., d}.

A dimension partition tree is a rooted tree whose nodes are non-empty
subsets of {1, ..., d}: the root is the full set, the children of every
internal node form a non-trivial partition of it, and the leaves are
singletons.  Trees are immutable values; structural edits (node swaps)
return new trees, which makes rollback of rejected proposals free.

Subsets are stored as bitmasks (bit ``k-1`` set means variable ``k`` is in
the subset), so disjointness and ancestry tests are O(1).  Node identity is
positional: node ids are indices into ``tree.nodes``, assigned in a canonical
depth-first pre-order with children sorted by their smallest element, which
makes serialization and tests reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "Node",
    "DimensionTree",
    "TreeError",
    "build_linear_tree",
    "build_balanced_tree",
    "random_binary_tree",
    "storage_complexity",
    "uniform_ranks",
    "check_ranks_admissible",
]


class TreeError(ValueError):
    """Raised for invalid tree structures, node ids or rank vectors."""


@dataclass(frozen=True)
class Node:
    """A tree node: a subset bitmask plus parent/children links by id."""

    subset: int
    parent: Optional[int]
    children: tuple[int, ...]

    @property
    def is_leaf(self) -> bool:
        return not self.children


def _mask_of(elems: Iterable[int]) -> int:
    mask = 0
    for e in elems:
        mask |= 1 << (e - 1)
    return mask


def _elems_of(mask: int) -> tuple[int, ...]:
    out = []
    k = 1
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return tuple(out)


def _min_elem(mask: int) -> int:
    return (mask & -mask).bit_length()


@dataclass(frozen=True)
class DimensionTree:
    """Immutable dimension partition tree over {1, ..., d}.

    Attributes
    ----------
    d : int
        Number of variables.
    nodes : tuple[Node, ...]
        Nodes in canonical depth-first pre-order; ``nodes[0]`` is the root.
    """

    d: int
    nodes: tuple[Node, ...]

    # -- construction ------------------------------------------------------

    @staticmethod
    def from_children_lists(d: int, subsets: Sequence[Iterable[int]],
                            children: Sequence[Sequence[int]],
                            root: int) -> "DimensionTree":
        """Build a tree from raw per-node subsets and children id lists.

        Input node ids are arbitrary; the result is re-indexed into canonical
        pre-order.  Validates the partition-tree axioms.
        """
        masks = [_mask_of(s) for s in subsets]
        out_nodes: list[Node] = []

        def emit(old_id: int, parent_new: Optional[int]) -> int:
            new_id = len(out_nodes)
            out_nodes.append(Node(masks[old_id], parent_new, ()))
            kids = sorted(children[old_id], key=lambda c: _min_elem(masks[c]))
            kid_ids = tuple(emit(c, new_id) for c in kids)
            out_nodes[new_id] = Node(masks[old_id], parent_new, kid_ids)
            return new_id

        emit(root, None)
        tree = DimensionTree(d, tuple(out_nodes))
        tree.validate()
        return tree

    def validate(self) -> None:
        """Check all partition-tree axioms; raise TreeError on violation."""
        if self.d < 1:
            raise TreeError("d must be positive")
        full = (1 << self.d) - 1
        if not self.nodes or self.nodes[0].subset != full:
            raise TreeError("root subset must be {1,...,d}")
        if self.nodes[0].parent is not None:
            raise TreeError("root must have no parent")
        for i, node in enumerate(self.nodes):
            if node.subset == 0:
                raise TreeError(f"node {i} has empty subset")
            if node.children:
                if len(node.children) < 2:
                    raise TreeError(f"internal node {i} has a single child")
                union = 0
                for c in node.children:
                    child = self.nodes[c]
                    if child.parent != i:
                        raise TreeError(f"bad parent link at node {c}")
                    if union & child.subset:
                        raise TreeError(f"children of node {i} overlap")
                    union |= child.subset
                if union != node.subset:
                    raise TreeError(f"children of node {i} do not partition it")
            else:
                if bin(node.subset).count("1") != 1:
                    raise TreeError(f"leaf node {i} is not a singleton")
        # pairwise disjointness at equal levels follows from the partition
        # property, but check it anyway since it is part of the contract
        by_level: dict[int, int] = {}
        for i in range(len(self.nodes)):
            lev = self.level(i)
            if by_level.get(lev, 0) & self.nodes[i].subset:
                raise TreeError(f"same-level overlap at node {i}")
            by_level[lev] = by_level.get(lev, 0) | self.nodes[i].subset

    # -- queries -----------------------------------------------------------

    @property
    def root(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self.nodes)

    def _check_id(self, alpha: int) -> None:
        if not 0 <= alpha < len(self.nodes):
            raise TreeError(f"unknown node id {alpha}")

    def is_leaf(self, alpha: int) -> bool:
        self._check_id(alpha)
        return self.nodes[alpha].is_leaf

    def subset(self, alpha: int) -> tuple[int, ...]:
        """Variables of node ``alpha`` as a sorted 1-based tuple."""
        self._check_id(alpha)
        return _elems_of(self.nodes[alpha].subset)

    def subset_mask(self, alpha: int) -> int:
        self._check_id(alpha)
        return self.nodes[alpha].subset

    def leaf_dim(self, alpha: int) -> int:
        """The single variable of a leaf node."""
        if not self.is_leaf(alpha):
            raise TreeError(f"node {alpha} is not a leaf")
        return _min_elem(self.nodes[alpha].subset)

    def children(self, alpha: int) -> tuple[int, ...]:
        self._check_id(alpha)
        return self.nodes[alpha].children

    def parent(self, alpha: int) -> Optional[int]:
        self._check_id(alpha)
        return self.nodes[alpha].parent

    def sibling(self, alpha: int) -> int:
        """The other child of a binary parent."""
        p = self.parent(alpha)
        if p is None:
            raise TreeError("root has no sibling")
        sibs = [c for c in self.nodes[p].children if c != alpha]
        if len(sibs) != 1:
            raise TreeError(f"node {alpha} has {len(sibs)} siblings")
        return sibs[0]

    def level(self, alpha: int) -> int:
        self._check_id(alpha)
        lev = 0
        p = self.nodes[alpha].parent
        while p is not None:
            lev += 1
            p = self.nodes[p].parent
        return lev

    def depth(self) -> int:
        return max(self.level(i) for i in range(len(self.nodes)))

    def ascendants(self, alpha: int) -> tuple[int, ...]:
        """Strict ascendants of ``alpha``, from parent up to the root."""
        self._check_id(alpha)
        out = []
        p = self.nodes[alpha].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return tuple(out)

    def descendants(self, alpha: int) -> tuple[int, ...]:
        """Strict descendants of ``alpha`` in pre-order."""
        self._check_id(alpha)
        out: list[int] = []
        stack = list(self.nodes[alpha].children)
        while stack:
            n = stack.pop(0)
            out.append(n)
            stack = list(self.nodes[n].children) + stack
        return tuple(out)

    def lca(self, alpha: int, beta: int) -> int:
        """Lowest common ancestor."""
        anc = {alpha, *self.ascendants(alpha)}
        n = beta
        while n not in anc:
            n = self.nodes[n].parent  # root is common, loop terminates
        return n

    def path_length(self, alpha: int, beta: int) -> int:
        """Number of edges on the path between two nodes."""
        c = self.lca(alpha, beta)
        return (self.level(alpha) - self.level(c)) + (self.level(beta) - self.level(c))

    def path(self, alpha: int, beta: int) -> tuple[int, ...]:
        """Node ids along the path from ``alpha`` to ``beta``, inclusive."""
        c = self.lca(alpha, beta)
        up = [alpha]
        while up[-1] != c:
            up.append(self.nodes[up[-1]].parent)
        down = [beta]
        while down[-1] != c:
            down.append(self.nodes[down[-1]].parent)
        return tuple(up + down[-2::-1])

    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i, n in enumerate(self.nodes) if n.is_leaf)

    def internal(self) -> tuple[int, ...]:
        return tuple(i for i, n in enumerate(self.nodes) if not n.is_leaf)

    def leaf_of_dim(self, dim: int) -> int:
        """Leaf node id carrying variable ``dim``."""
        target = 1 << (dim - 1)
        for i, n in enumerate(self.nodes):
            if n.is_leaf and n.subset == target:
                return i
        raise TreeError(f"no leaf for dimension {dim}")

    def find_subset(self, elems: Iterable[int]) -> Optional[int]:
        """Node id with exactly this subset, or None."""
        mask = _mask_of(elems)
        for i, n in enumerate(self.nodes):
            if n.subset == mask:
                return i
        return None

    def is_binary(self) -> bool:
        return all(len(n.children) in (0, 2) for n in self.nodes)

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "nodes": [
                {"subset": list(self.subset(i)), "children": list(n.children)}
                for i, n in enumerate(self.nodes)
            ],
            "root": 0,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), separators=(",", ":"))

    @staticmethod
    def from_json_dict(doc: Mapping) -> "DimensionTree":
        subsets = [n["subset"] for n in doc["nodes"]]
        children = [n["children"] for n in doc["nodes"]]
        return DimensionTree.from_children_lists(doc["d"], subsets, children,
                                                 doc.get("root", 0))

    @staticmethod
    def from_json(text: str) -> "DimensionTree":
        return DimensionTree.from_json_dict(json.loads(text))


# -- builders ---------------------------------------------------------------


def _tree_from_nested(d: int, spec) -> DimensionTree:
    """Build from a nested structure: a leaf is an int, an internal node a list."""
    subsets: list[list[int]] = []
    children: list[list[int]] = []

    def walk(node) -> int:
        my_id = len(subsets)
        subsets.append([])
        children.append([])
        if isinstance(node, int):
            subsets[my_id] = [node]
        else:
            kid_ids = []
            for sub in node:
                kid_ids.append(walk(sub))
            children[my_id] = kid_ids
            acc: list[int] = []
            for k in kid_ids:
                acc.extend(subsets[k])
            subsets[my_id] = acc
        return my_id

    walk(spec)
    return DimensionTree.from_children_lists(d, subsets, children, 0)


def build_linear_tree(d: int, order: Optional[Sequence[int]] = None) -> DimensionTree:
    """Depth-(d-1) binary tree with interior nodes {order(1),...,order(k)}.

    ``order`` defaults to the identity.  The deepest pair of leaves is
    {order(1)}, {order(2)}; each interior node pairs the chain so far with
    the next leaf {order(k)}.
    """
    if d < 2:
        raise TreeError("linear tree needs d >= 2")
    if order is None:
        order = tuple(range(1, d + 1))
    order = tuple(int(v) for v in order)
    if sorted(order) != list(range(1, d + 1)):
        raise TreeError(f"order {order} is not a permutation of 1..{d}")
    spec: object = [order[0], order[1]]
    for k in range(2, d):
        spec = [spec, order[k]]
    return _tree_from_nested(d, spec)


def build_balanced_tree(d: int) -> DimensionTree:
    """Binary tree of depth ceil(log2 d), splitting {1..d} into halves."""
    if d < 2:
        raise TreeError("balanced tree needs d >= 2")

    def split(lo: int, hi: int):  # variables lo..hi inclusive
        if lo == hi:
            return lo
        mid = lo + (hi - lo + 1 + 1) // 2 - 1  # left gets ceil(k/2)
        return [split(lo, mid), split(mid + 1, hi)]

    return _tree_from_nested(d, split(1, d))


def random_binary_tree(d: int, rng: np.random.Generator) -> DimensionTree:
    """Random binary dimension partition tree; deterministic given the rng state."""
    if d < 2:
        raise TreeError("random binary tree needs d >= 2")

    def split(elems: list[int]):
        if len(elems) == 1:
            return elems[0]
        # random non-trivial bipartition of the element list
        k = int(rng.integers(1, len(elems)))
        picks = rng.permutation(len(elems))
        left = [elems[i] for i in sorted(picks[:k])]
        right = [elems[i] for i in sorted(picks[k:])]
        return [split(left), split(right)]

    return _tree_from_nested(d, split(list(range(1, d + 1))))


# -- rank vectors and storage -------------------------------------------------


def uniform_ranks(tree: DimensionTree, r: int) -> dict[int, int]:
    """Rank vector with rank ``r`` everywhere except 1 at the root."""
    return {i: (1 if i == tree.root else int(r)) for i in range(len(tree))}


def check_ranks_admissible(tree: DimensionTree, ranks: Mapping[int, int],
                           leaf_dims: Mapping[int, int]) -> None:
    """Validate a rank vector: root rank 1, positivity, leaf and product caps."""
    for i in range(len(tree)):
        if i not in ranks:
            raise TreeError(f"missing rank for node {i}")
        r = ranks[i]
        if r < 1:
            raise TreeError(f"rank at node {i} must be >= 1, got {r}")
    if ranks[tree.root] != 1:
        raise TreeError("root rank must be 1")
    for i in tree.leaves():
        if i not in leaf_dims:
            raise TreeError(f"missing leaf dimension for node {i}")
        if ranks[i] > leaf_dims[i]:
            raise TreeError(f"leaf rank {ranks[i]} exceeds basis size {leaf_dims[i]}")
    for i in tree.internal():
        cap = 1
        for c in tree.children(i):
            cap *= ranks[c]
        if ranks[i] > cap:
            raise TreeError(f"rank {ranks[i]} at node {i} exceeds children product {cap}")


def clip_ranks_admissible(tree: DimensionTree, ranks: Mapping[int, int],
                          leaf_dims: Mapping[int, int]) -> dict[int, int]:
    """Largest admissible rank vector at or below the given one."""
    out = {i: int(ranks[i]) for i in range(len(tree))}
    out[tree.root] = 1
    for i in tree.leaves():
        out[i] = min(out[i], leaf_dims[i])
    for i in sorted(tree.internal(), key=lambda n: -tree.level(n)):
        if i == tree.root:
            continue
        cap = 1
        for c in tree.children(i):
            cap *= out[c]
        out[i] = min(out[i], cap)
    return out


def storage_complexity(tree: DimensionTree, ranks: Mapping[int, int],
                       leaf_dims: Mapping[int, int]) -> int:
    """Parameter count C(T, r): interior cores plus leaf coefficient matrices."""
    check_ranks_admissible(tree, ranks, leaf_dims)
    total = 0
    for i in tree.internal():
        prod = 1
        for c in tree.children(i):
            prod *= ranks[c]
        total += ranks[i] * prod
    for i in tree.leaves():
        total += leaf_dims[i] * ranks[i]
    return total


# -- node permutation ---------------------------------------------------------


def swap_nodes(tree: DimensionTree, a: int, b: int) -> DimensionTree:
    """Swap two nodes with disjoint subsets; see also :func:`swap_nodes_with_map`."""
    return swap_nodes_with_map(tree, a, b)[0]


def swap_nodes_with_map(tree: DimensionTree, a: int, b: int
                        ) -> tuple[DimensionTree, dict[int, int]]:
    """Swap nodes ``a`` and ``b`` and return (new_tree, old_id -> new_id map).

    After the swap, a's brothers are b's former brothers and vice versa; the
    descendants of both nodes are untouched and subsets along the former
    ascendant paths are recomputed.  Requires disjoint subsets (neither node
    an ascendant of the other) and non-root nodes.
    """
    tree._check_id(a)
    tree._check_id(b)
    if a == b:
        raise TreeError("cannot swap a node with itself")
    if tree.subset_mask(a) & tree.subset_mask(b):
        raise TreeError(f"nodes {a} and {b} are not disjoint")
    pa, pb = tree.parent(a), tree.parent(b)
    if pa is None or pb is None:
        raise TreeError("cannot swap the root")

    # relink: replace a by b under pa and b by a under pb
    new_children: list[list[int]] = [list(n.children) for n in tree.nodes]
    new_children[pa][new_children[pa].index(a)] = b
    new_children[pb][new_children[pb].index(b)] = a

    # recompute subsets bottom-up from the new linkage
    masks = [0] * len(tree.nodes)

    def fill(old_id: int) -> int:
        kids = new_children[old_id]
        if not kids:
            masks[old_id] = tree.nodes[old_id].subset
        else:
            m = 0
            for c in kids:
                m |= fill(c)
            masks[old_id] = m
        return masks[old_id]

    fill(tree.root)

    out_nodes: list[Node] = []
    id_map: dict[int, int] = {}

    def emit(old_id: int, parent_new: Optional[int]) -> int:
        new_id = len(out_nodes)
        id_map[old_id] = new_id
        out_nodes.append(Node(masks[old_id], parent_new, ()))
        kids = sorted(new_children[old_id], key=lambda c: _min_elem(masks[c]))
        kid_ids = tuple(emit(c, new_id) for c in kids)
        out_nodes[new_id] = Node(masks[old_id], parent_new, kid_ids)
        return new_id

    emit(tree.root, None)
    new_tree = DimensionTree(tree.d, tuple(out_nodes))
    new_tree.validate()
    return new_tree, id_map
