"""Tree tensor networks: representation, evaluation and linear algebra.

A :class:`TreeTensor` stores one coefficient core per node of a dimension
partition tree.  Leaf cores are ``(N_nu, r_alpha)`` matrices mixing basis
functions; internal cores have shape ``(r_child_1, ..., r_child_s, r_alpha)``
(child-major, rank-last, children in the tree's canonical order); the root
rank is always 1.

The central primitive is the movable orthonormalization center: all cores
except the center are kept isometric "toward" the center, so the functions
multiplying the center core form an orthonormal system and the L2 norm of
the represented function equals the Frobenius norm of the center core.  The
center is moved edge by edge with QR factorizations, which is what
orthonormalization, singular values, truncation and the learner's
closed-form updates are built on.

Dense conversions (``full_tensor`` / ``full_to_tree``) act as verification
oracles and implement the leaves-to-root truncated higher-order SVD.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .bases import Basis, basis_from_json_dict
from .dimension_tree import (
    DimensionTree,
    TreeError,
    check_ranks_admissible,
)

__all__ = [
    "TreeTensor",
    "FullTensor",
    "evaluate",
    "evaluate_many",
    "full_tensor",
    "full_to_tree",
    "orthonormalize_at",
    "norm",
    "add",
    "scale",
    "psi_alpha",
    "alpha_singular_values",
    "truncate",
    "truncate_to_ranks",
    "alpha_rank_of_full",
    "random_tree_tensor",
    "zero_tree_tensor",
    "tensor_to_json",
    "tensor_from_json",
    "save_tensor",
    "load_tensor",
]

FULL_TENSOR_CAP = 1 << 24


@dataclass(frozen=True)
class FullTensor:
    """Dense coefficient tensor, axes ordered by variable 1..d."""

    dims: tuple[int, ...]
    entries: np.ndarray

    def __post_init__(self):
        if tuple(self.entries.shape) != tuple(self.dims):
            raise ValueError("entries shape does not match dims")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))


@dataclass(frozen=True)
class TreeTensor:
    """A function in tree-based tensor format.

    Treated as an immutable value: operations return new instances.
    ``orthonormal_root`` flags, when set, that the system multiplying the
    core of that node is L2-orthonormal (so the function's norm equals that
    core's Frobenius norm).
    """

    tree: DimensionTree
    bases: tuple[Basis, ...]
    cores: tuple[np.ndarray, ...]
    orthonormal_root: Optional[int] = None

    def __post_init__(self):
        if len(self.bases) != self.tree.d:
            raise ValueError("need one basis per dimension")
        if len(self.cores) != len(self.tree):
            raise ValueError("need one core per tree node")
        for i, core in enumerate(self.cores):
            if self.tree.is_leaf(i):
                n_expected = self.bases[self.tree.leaf_dim(i) - 1].size
                if core.ndim != 2 or core.shape[0] != n_expected:
                    raise ValueError(f"bad leaf core shape at node {i}: {core.shape}")
            else:
                kids = self.tree.children(i)
                if core.ndim != len(kids) + 1:
                    raise ValueError(f"bad core order at node {i}")
                for ax, c in enumerate(kids):
                    if core.shape[ax] != self.cores[c].shape[-1]:
                        raise ValueError(f"rank mismatch on edge {i}->{c}")
        if self.cores[self.tree.root].shape[-1] != 1:
            raise ValueError("root rank must be 1")

    def rank(self, alpha: int) -> int:
        return self.cores[alpha].shape[-1]

    def ranks(self) -> dict[int, int]:
        return {i: c.shape[-1] for i, c in enumerate(self.cores)}

    def leaf_dims(self) -> dict[int, int]:
        return {i: self.bases[self.tree.leaf_dim(i) - 1].size for i in self.tree.leaves()}

    def storage_complexity(self) -> int:
        """Total parameter count; equals C(T, r) for the current ranks."""
        return int(sum(c.size for c in self.cores))

    def __call__(self, x) -> float:
        return evaluate(self, x)


# -- construction -------------------------------------------------------------


def random_tree_tensor(tree: DimensionTree, bases: Sequence[Basis],
                       ranks: Mapping[int, int], rng: np.random.Generator,
                       orthonormal: bool = True) -> TreeTensor:
    """Tensor with i.i.d. standard normal cores, optionally root-orthonormalized."""
    bases = tuple(bases)
    leaf_dims = {i: bases[tree.leaf_dim(i) - 1].size for i in tree.leaves()}
    check_ranks_admissible(tree, ranks, leaf_dims)
    cores = []
    for i in range(len(tree)):
        if tree.is_leaf(i):
            shape: tuple[int, ...] = (leaf_dims[i], ranks[i])
        else:
            shape = tuple(ranks[c] for c in tree.children(i)) + (ranks[i],)
        cores.append(rng.standard_normal(shape))
    g = TreeTensor(tree, bases, tuple(cores))
    if orthonormal:
        g = orthonormalize_at(g, tree.root)
    return g


def zero_tree_tensor(tree: DimensionTree, bases: Sequence[Basis]) -> TreeTensor:
    """The zero function, all ranks 1."""
    bases = tuple(bases)
    cores = []
    for i in range(len(tree)):
        if tree.is_leaf(i):
            cores.append(np.zeros((bases[tree.leaf_dim(i) - 1].size, 1)))
        else:
            cores.append(np.zeros((1,) * len(tree.children(i)) + (1,)))
    return TreeTensor(tree, bases, tuple(cores))


# -- evaluation ---------------------------------------------------------------


def _leaf_phi(g: TreeTensor, X: np.ndarray) -> dict[int, np.ndarray]:
    """Basis evaluations per leaf node: (n, N_nu) arrays."""
    out = {}
    for leaf in g.tree.leaves():
        nu = g.tree.leaf_dim(leaf)
        out[leaf] = g.bases[nu - 1].eval_many(X[:, nu - 1])
    return out


def batch_values(tree: DimensionTree, cores: Sequence[np.ndarray],
                 phi: Mapping[int, np.ndarray], node: int) -> np.ndarray:
    """Values of the node's downward functions at all samples: (n, r_node).

    Leaf: Phi @ C.  Internal: contract children values through the core.
    """
    if tree.is_leaf(node):
        return phi[node] @ cores[node]
    kids = tree.children(node)
    core = cores[node]
    vals = [batch_values(tree, cores, phi, c) for c in kids]
    if len(kids) == 2:
        return np.einsum("nb,nc,bck->nk", vals[0], vals[1], core, optimize=True)
    acc = np.broadcast_to(core[None], (vals[0].shape[0],) + core.shape)
    for v in vals:
        acc = np.einsum("nb,nb...->n...", v, acc, optimize=True)
    return acc


def evaluate_many(g: TreeTensor, X: np.ndarray) -> np.ndarray:
    """Evaluate g at each row of X: returns (n,) values."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != g.tree.d:
        raise ValueError(f"points must be (n, {g.tree.d})")
    phi = _leaf_phi(g, X)
    return batch_values(g.tree, g.cores, phi, g.tree.root)[:, 0]


def evaluate(g: TreeTensor, x) -> float:
    """Evaluate g at a single point."""
    return float(evaluate_many(g, np.asarray(x, dtype=float)[None, :])[0])


def batch_environments(tree: DimensionTree, cores: Sequence[np.ndarray],
                       alpha: int, n: int, value_fn) -> np.ndarray:
    """Environment values w^alpha at all samples: (n, r_alpha).

    w^alpha_k is the function of the complementary variables obtained by
    contracting everything outside alpha's subtree; g(x) pairs it with
    alpha's downward functions.  ``value_fn(node) -> (n, r)`` supplies the
    downward values of off-path nodes.  Binary trees only.
    """
    w = np.ones((n, 1))
    chain = list(reversed(tree.ascendants(alpha)))
    if alpha != tree.root:
        chain.append(alpha)
    for par, node in zip(chain[:-1], chain[1:]):
        core = cores[par]
        kids = tree.children(par)
        if len(kids) != 2:
            raise NotImplementedError("environments require a binary tree")
        ax = kids.index(node)
        v = value_fn(kids[1 - ax])
        if ax == 0:
            w = np.einsum("ns,nk,ask->na", v, w, core, optimize=True)
        else:
            w = np.einsum("ns,nk,sak->na", v, w, core, optimize=True)
    return w


# -- the movable orthonormalization center ------------------------------------


def _signed_qr(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with nonnegative R diagonal, for deterministic output."""
    q, r = np.linalg.qr(m)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, r * s[:, None]


class Network:
    """Mutable view of a tree tensor with an orthonormalization center.

    Invariant: every core except ``center`` is an isometry when matricized
    with its mode pointing toward the center as columns.  All moves preserve
    the represented function exactly (up to roundoff).
    """

    def __init__(self, g: TreeTensor):
        self.tree = g.tree
        self.bases = g.bases
        self.cores: list[np.ndarray] = [np.array(c) for c in g.cores]
        self.center: Optional[int] = g.orthonormal_root

    def to_tensor(self) -> TreeTensor:
        return TreeTensor(self.tree, self.bases,
                          tuple(np.array(c) for c in self.cores), self.center)

    def rank(self, alpha: int) -> int:
        return self.cores[alpha].shape[-1]

    # each move returns the ids of the nodes whose cores changed

    def _push_up(self, child: int) -> tuple[int, int]:
        """Move the center from ``child`` to its parent."""
        par = self.tree.parent(child)
        core = self.cores[child]
        m = core.reshape(-1, core.shape[-1])
        q, r = _signed_qr(m)
        self.cores[child] = q.reshape(core.shape[:-1] + (q.shape[1],))
        ax = self.tree.children(par).index(child)
        pc = np.tensordot(self.cores[par], r, axes=([ax], [1]))
        self.cores[par] = np.moveaxis(pc, -1, ax)
        self.center = par
        return child, par

    def _push_down(self, child: int) -> tuple[int, int]:
        """Move the center from the parent of ``child`` down to it."""
        par = self.tree.parent(child)
        core = self.cores[par]
        ax = self.tree.children(par).index(child)
        m = np.moveaxis(core, ax, 0).reshape(core.shape[ax], -1)
        q, r = _signed_qr(m.T)
        new_par = np.moveaxis(
            q.T.reshape((q.shape[1],) + tuple(np.delete(core.shape, ax))), 0, ax)
        self.cores[par] = new_par
        self.cores[child] = np.tensordot(self.cores[child], r.T, axes=([-1], [0]))
        self.center = child
        return par, child

    def _orthonormalize_all(self) -> list[int]:
        """Leaves-to-root QR sweep; afterwards the center is the root."""
        order = sorted((i for i in range(len(self.tree)) if i != self.tree.root),
                       key=lambda i: -self.tree.level(i))
        changed = set()
        for node in order:
            core = self.cores[node]
            m = core.reshape(-1, core.shape[-1])
            q, r = _signed_qr(m)
            self.cores[node] = q.reshape(core.shape[:-1] + (q.shape[1],))
            par = self.tree.parent(node)
            ax = self.tree.children(par).index(node)
            pc = np.tensordot(self.cores[par], r, axes=([ax], [1]))
            self.cores[par] = np.moveaxis(pc, -1, ax)
            changed.update((node, par))
        self.center = self.tree.root
        return sorted(changed)

    def move_center_to(self, alpha: int) -> list[int]:
        """Establish the center at ``alpha``; returns ids of changed cores."""
        self.tree._check_id(alpha)
        changed: set[int] = set()
        if self.center is None:
            changed.update(self._orthonormalize_all())
        if self.center == alpha:
            return sorted(changed)
        path = self.tree.path(self.center, alpha)
        for prev, nxt in zip(path[:-1], path[1:]):
            if self.tree.parent(prev) == nxt:
                changed.update(self._push_up(prev))
            else:
                changed.update(self._push_down(nxt))
        return sorted(changed)


def orthonormalize_at(g: TreeTensor, alpha: int) -> TreeTensor:
    """Reparametrize g so the system multiplying core ``alpha`` is orthonormal.

    The returned tensor represents the same function; its norm equals the
    Frobenius norm of the core at ``alpha``.
    """
    net = Network(g)
    net.move_center_to(alpha)
    return net.to_tensor()


def norm(g: TreeTensor) -> float:
    """L2(mu) norm of g (exploits basis orthonormality)."""
    if g.orthonormal_root is not None:
        return float(np.linalg.norm(g.cores[g.orthonormal_root]))
    return float(np.linalg.norm(orthonormalize_at(g, g.tree.root).cores[g.tree.root]))


def scale(g: TreeTensor, c: float) -> TreeTensor:
    """The function c * g."""
    cores = list(g.cores)
    root = g.tree.root
    cores[root] = cores[root] * float(c)
    return replace(g, cores=tuple(cores))


# -- addition -----------------------------------------------------------------


def add(g: TreeTensor, h: TreeTensor) -> TreeTensor:
    """g + h by block-diagonal core concatenation (root blocks summed)."""
    if g.tree != h.tree:
        raise TreeError("tree mismatch in add")
    if g.bases != h.bases:
        raise ValueError("basis mismatch in add")
    tree = g.tree
    cores = []
    for i in range(len(tree)):
        a, b = g.cores[i], h.cores[i]
        if tree.is_leaf(i):
            cores.append(np.hstack([a, b]))
        else:
            rank = 1 if i == tree.root else a.shape[-1] + b.shape[-1]
            shape = tuple(sa + sb for sa, sb in zip(a.shape[:-1], b.shape[:-1])) + (rank,)
            core = np.zeros(shape)
            sl_a = tuple(slice(0, s) for s in a.shape[:-1])
            sl_b = tuple(slice(s, None) for s in a.shape[:-1])
            if i == tree.root:
                core[sl_a + (slice(0, 1),)] = a
                core[sl_b + (slice(0, 1),)] = b
            else:
                core[sl_a + (slice(0, a.shape[-1]),)] = a
                core[sl_b + (slice(a.shape[-1], None),)] = b
            cores.append(core)
    return TreeTensor(tree, g.bases, tuple(cores))


# -- dense conversions ----------------------------------------------------------


def full_tensor(g: TreeTensor, cap: int = FULL_TENSOR_CAP) -> FullTensor:
    """Dense coefficient tensor of g, axes in variable order 1..d."""
    sizes = [b.size for b in g.bases]
    if int(np.prod(sizes, dtype=np.int64)) > cap:
        raise ValueError(f"full tensor would exceed the cap of {cap} entries")

    def rec(node: int) -> tuple[np.ndarray, list[int]]:
        if g.tree.is_leaf(node):
            return g.cores[node], [g.tree.leaf_dim(node)]
        kids = g.tree.children(node)
        t = g.cores[node]
        all_vars: list[int] = []
        for i in reversed(range(len(kids))):
            arr, vs = rec(kids[i])
            t = np.tensordot(arr, t, axes=([-1], [len(all_vars) + i]))
            all_vars = vs + all_vars
        perm = list(np.argsort(all_vars))
        t = np.transpose(t, perm + [t.ndim - 1])
        return t, sorted(all_vars)

    t, _ = rec(g.tree.root)
    return FullTensor(tuple(sizes), t[..., 0])


def _pick_rank(sigma: np.ndarray, budget: Optional[float],
               requested: Optional[int]) -> int:
    """Truncation rank: fixed, or smallest r whose tail energy fits the budget.

    Ties at the cut are kept whole so the result does not depend on how the
    SVD backend orders equal singular values.
    """
    m = len(sigma)
    if requested is not None:
        return max(1, min(requested, m))
    if budget is None:
        return m
    energy = sigma ** 2
    tail = np.concatenate([np.cumsum(energy[::-1])[::-1], [0.0]])  # tail[r] after keeping r
    r = 1
    while r < m and tail[r] > budget:
        r += 1
    while r < m and sigma[r] == sigma[r - 1]:
        r += 1
    return r


def full_to_tree(F: FullTensor, tree: DimensionTree, bases: Sequence[Basis],
                 tol: Optional[float] = None,
                 ranks: Optional[Mapping[int, int]] = None) -> TreeTensor:
    """Leaves-to-root truncated HOSVD of a dense tensor into tree format.

    Exactly one of ``tol`` (relative L2 error, with the energy budget split
    evenly over the 2d-2 truncated nodes) or ``ranks`` must drive the
    truncation; ``tol=0`` keeps all numerically nonzero singular values.
    """
    bases = tuple(bases)
    if tuple(b.size for b in bases) != tuple(F.dims):
        raise ValueError("basis sizes do not match tensor dims")
    if (tol is None) == (ranks is None):
        raise ValueError("specify exactly one of tol or ranks")
    if tol is not None and not 0.0 <= tol < 1.0:
        raise ValueError("tol must be in [0, 1)")
    if ranks is not None:
        leaf_dims = {i: bases[tree.leaf_dim(i) - 1].size for i in tree.leaves()}
        check_ranks_admissible(tree, ranks, leaf_dims)

    n_trunc = len(tree) - 1
    budget = None
    if tol is not None:
        budget = (tol ** 2) * float(np.sum(F.entries ** 2)) / max(n_trunc, 1)

    work = np.array(F.entries)
    labels: list[int] = [tree.leaf_of_dim(nu) for nu in range(1, tree.d + 1)]
    cores: list[Optional[np.ndarray]] = [None] * len(tree)

    order = list(tree.leaves()) + sorted(
        (i for i in tree.internal() if i != tree.root), key=lambda i: -tree.level(i))
    for node in order:
        if tree.is_leaf(node):
            axes = [labels.index(node)]
        else:
            axes = [labels.index(c) for c in tree.children(node)]
        work = np.moveaxis(work, axes, range(len(axes)))
        for ax in sorted(axes, reverse=True):
            labels.pop(ax)
        row_shape = work.shape[: len(axes)]
        mat = work.reshape(int(np.prod(row_shape)), -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = _pick_rank(s, budget, None if ranks is None else ranks[node])
        cores[node] = u[:, :r].reshape(row_shape + (r,))
        work = (s[:r, None] * vt[:r]).reshape((r,) + work.shape[len(axes):])
        labels.insert(0, node)

    axes = [labels.index(c) for c in tree.children(tree.root)]
    work = np.moveaxis(work, axes, range(len(axes)))
    cores[tree.root] = work[..., None]
    return TreeTensor(tree, bases, tuple(cores), orthonormal_root=tree.root)


def alpha_rank_of_full(F: FullTensor, alpha: Sequence[int],
                       tol: float = 1e-12) -> int:
    """Rank of the alpha-matricization: singular values above tol * sigma_1."""
    alpha = sorted(set(int(v) for v in alpha))
    d = len(F.dims)
    if not alpha or any(v < 1 or v > d for v in alpha) or len(alpha) == d:
        raise ValueError("alpha must be a proper non-empty subset of 1..d")
    axes = [v - 1 for v in alpha]
    mat = np.moveaxis(F.entries, axes, range(len(axes)))
    mat = mat.reshape(int(np.prod([F.dims[a] for a in axes])), -1)
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


# -- spectral operations --------------------------------------------------------


def alpha_singular_values(g: TreeTensor, alpha: int) -> np.ndarray:
    """Singular values of the alpha-matricization of g, padded to rank r_alpha."""
    if alpha == g.tree.root:
        raise TreeError("alpha-singular values are defined for non-root nodes")
    r_in = g.rank(alpha)
    net = Network(g)
    net.move_center_to(alpha)
    core = net.cores[alpha]
    s = np.linalg.svd(core.reshape(-1, core.shape[-1]), compute_uv=False)
    out = np.zeros(max(r_in, len(s)))
    out[: len(s)] = s
    return out[:r_in] if r_in >= len(s) else out


def _truncate_net(net: Network, budget: Optional[float],
                  ranks: Optional[Mapping[int, int]]) -> None:
    """Trim every non-root rank in place via SVDs at the moving center."""
    tree = net.tree
    order = list(tree.leaves()) + sorted(
        (i for i in tree.internal() if i != tree.root), key=lambda i: -tree.level(i))
    for node in order:
        net.move_center_to(node)
        core = net.cores[node]
        m = core.reshape(-1, core.shape[-1])
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        r = _pick_rank(s, budget, None if ranks is None else ranks.get(node))
        if r >= len(s) and ranks is None and budget is None:
            continue
        net.cores[node] = (u[:, :r] * s[:r]).reshape(core.shape[:-1] + (r,))
        par = tree.parent(node)
        ax = tree.children(par).index(node)
        pc = np.tensordot(net.cores[par], vt[:r].T, axes=([ax], [0]))
        net.cores[par] = np.moveaxis(pc, -1, ax)
        # the parent edit preserves its isometry toward the center, so the
        # center legitimately stays at ``node``


def truncate(g: TreeTensor, tol: float) -> TreeTensor:
    """Rank truncation with relative L2 error at most ``tol``."""
    if not 0.0 <= tol < 1.0:
        raise ValueError("tol must be in [0, 1)")
    nrm = norm(g)
    if nrm == 0.0:
        return g
    budget = (tol ** 2) * nrm ** 2 / max(len(g.tree) - 1, 1)
    net = Network(g)
    _truncate_net(net, budget, None)
    return net.to_tensor()


def truncate_to_ranks(g: TreeTensor, ranks: Mapping[int, int]) -> TreeTensor:
    """Best-effort truncation to the given per-node ranks."""
    net = Network(g)
    _truncate_net(net, None, ranks)
    return net.to_tensor()


# -- Psi at a node ---------------------------------------------------------------


def psi_alpha(g: TreeTensor, alpha: int, x) -> np.ndarray:
    """The tensor Psi^alpha(x), shaped like the core at alpha.

    Satisfies <Psi^alpha(x), C^alpha> = g(x) for the current cores; when g is
    orthonormalized at alpha the entries form an orthonormal system.
    """
    g.tree._check_id(alpha)
    X = np.asarray(x, dtype=float)[None, :]
    phi = _leaf_phi(g, X)
    tree = g.tree

    memo: dict[int, np.ndarray] = {}

    def val(node: int) -> np.ndarray:
        if node not in memo:
            memo[node] = batch_values(tree, g.cores, phi, node)
        return memo[node]

    w = batch_environments(tree, g.cores, alpha, 1, val)
    if tree.is_leaf(alpha):
        return np.einsum("ni,na->ia", phi[alpha], w)
    arrs = [val(c)[0] for c in tree.children(alpha)] + [w[0]]
    out = arrs[0]
    for a in arrs[1:]:
        out = np.multiply.outer(out, a)
    return out


# -- serialization ----------------------------------------------------------------

_BINARY_MAGIC = b"TDTN\x00\x01"


def tensor_to_json_dict(g: TreeTensor, with_data: bool = True) -> dict:
    doc = {
        "tree": g.tree.to_json_dict(),
        "bases": [b.to_json_dict() for b in g.bases],
        "cores": [],
    }
    for i, core in enumerate(g.cores):
        entry: dict = {"node": i, "shape": list(core.shape)}
        if with_data:
            entry["data"] = [float(v) for v in core.reshape(-1)]
        doc["cores"].append(entry)
    return doc


def tensor_to_json(g: TreeTensor) -> str:
    return json.dumps(tensor_to_json_dict(g), separators=(",", ":"))


def tensor_from_json_dict(doc: Mapping, core_blobs: Optional[list[np.ndarray]] = None
                          ) -> TreeTensor:
    tree = DimensionTree.from_json_dict(doc["tree"])
    bases = tuple(basis_from_json_dict(b) for b in doc["bases"])
    cores: list[Optional[np.ndarray]] = [None] * len(tree)
    for k, entry in enumerate(doc["cores"]):
        shape = tuple(int(s) for s in entry["shape"])
        if core_blobs is not None:
            data = core_blobs[k]
        else:
            data = np.asarray(entry["data"], dtype=float)
        cores[int(entry["node"])] = data.reshape(shape)
    return TreeTensor(tree, bases, tuple(cores))


def tensor_from_json(text: str) -> TreeTensor:
    return tensor_from_json_dict(json.loads(text))


def save_tensor(g: TreeTensor, path: str, binary: Optional[bool] = None) -> None:
    """Write a model file; binary uses little-endian float64 core blocks."""
    if binary is None:
        binary = not str(path).endswith(".json")
    if not binary:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(tensor_to_json(g))
        return
    header = json.dumps(tensor_to_json_dict(g, with_data=False),
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for core in g.cores:
            fh.write(np.ascontiguousarray(core, dtype="<f8").tobytes())


def load_tensor(path: str) -> TreeTensor:
    with open(path, "rb") as fh:
        head = fh.read(len(_BINARY_MAGIC))
        if head != _BINARY_MAGIC:
            data = (head + fh.read()).decode("utf-8")
            return tensor_from_json(data)
        (hlen,) = struct.unpack("<I", fh.read(4))
        doc = json.loads(fh.read(hlen).decode("utf-8"))
        blobs = []
        for entry in doc["cores"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            blobs.append(np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float))
        return tensor_from_json_dict(doc, blobs)
