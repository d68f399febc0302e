"""Benchmark probability models with exact samplers and density oracles.

Every model pairs a seeded sampler with an exact density, so learned
approximations can be scored against the truth: a truncated multivariate
Gaussian, a discrete Markov chain with rank-2 transitions, a clique
graphical model with rank-3 factors, and mixtures of product measures.
Discrete models can also materialize their full probability table, which is
what the compression and tree-optimization experiments operate on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .bases import CanonicalBasis, LegendreBasis
from .learner import SampleSet
from .tree_tensor import FullTensor

__all__ = [
    "TruncatedGaussian",
    "MarkovChain",
    "GraphicalModel",
    "ProductMixture",
    "preset_covariances",
    "make_rank2_stochastic",
    "make_rank3_clique_tensor",
    "example_markov_chain",
    "learning_markov_chain",
    "example_graphical_model",
    "distribution_from_json_dict",
]

FULL_TABLE_CAP = 1 << 24


# -- random structured factors -------------------------------------------------


def make_rank2_stochastic(n: int, rng: np.random.Generator,
                          max_tries: int = 100) -> np.ndarray:
    """Row-stochastic (n, n) matrix of matrix rank exactly 2.

    Rows are convex combinations w_i q1 + (1 - w_i) q2 of two random
    probability vectors, so the rank is at most 2; regenerates until the
    second singular value is well separated from roundoff.
    """
    if n < 3:
        raise ValueError("need n >= 3 states")
    for _ in range(max_tries):
        q1 = rng.random(n)
        q1 /= q1.sum()
        q2 = rng.random(n)
        q2 /= q2.sum()
        w = rng.random(n)
        p = w[:, None] * q1[None, :] + (1.0 - w[:, None]) * q2[None, :]
        s = np.linalg.svd(p, compute_uv=False)
        if s[1] > 1e-8 * s[0] and s[2] < 1e-12 * s[0]:
            return p
    raise RuntimeError("failed to generate a rank-2 stochastic matrix")


def make_rank3_clique_tensor(shape: Sequence[int], rng: np.random.Generator,
                             max_tries: int = 100) -> np.ndarray:
    """Positive tensor whose every non-trivial matricization has rank 3.

    Built as a sum of three random positive elementary tensors (rank <= 3 by
    construction); regenerated until each matricization rank is exactly 3.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 3 for s in shape):
        raise ValueError("every mode must have size >= 3")
    order = len(shape)
    for _ in range(max_tries):
        t = np.zeros(shape)
        for _k in range(3):
            factor = rng.random(shape[0]) + 0.05
            term = factor
            for ax in range(1, order):
                term = np.multiply.outer(term, rng.random(shape[ax]) + 0.05)
            t = t + term
        ok = True
        for split in range(1, 2 ** (order - 1)):
            axes = [ax for ax in range(order) if (split >> ax) & 1]
            rest = [ax for ax in range(order) if ax not in axes]
            mat = np.transpose(t, axes + rest).reshape(
                int(np.prod([shape[a] for a in axes])), -1)
            s = np.linalg.svd(mat, compute_uv=False)
            if len(s) < 3 or s[2] < 1e-8 * s[0] or (len(s) > 3 and s[3] > 1e-12 * s[0]):
                ok = False
                break
        if ok:
            return t
    raise RuntimeError("failed to generate a rank-3 clique tensor")


# -- covariance presets -----------------------------------------------------------


def preset_covariances() -> dict[str, np.ndarray]:
    """The two 6x6 covariance matrices of the Gaussian experiments.

    ``group_independent`` couples (1,3,4,6) and (2,5) only; ``band_diagonal``
    becomes banded with superdiagonal (1, 1/2, 1/3, 1/4, 1/5) under the
    variable permutation (4, 6, 3, 5, 1, 2).
    """
    group_independent = np.array([
        [2.0, 0.0, 0.5, 1.0, 0.0, 0.5],
        [0.0, 1.0, 0.0, 0.0, 0.5, 0.0],
        [0.5, 0.0, 2.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 3.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0, 1.0, 0.0],
        [0.5, 0.0, 1.0, 0.0, 0.0, 2.0],
    ])
    band_diagonal = np.array([
        [2.0, 1 / 5, 0.0, 0.0, 1 / 4, 0.0],
        [1 / 5, 2.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 0.0, 1 / 3, 1 / 2],
        [0.0, 0.0, 0.0, 2.0, 0.0, 1.0],
        [1 / 4, 0.0, 1 / 3, 0.0, 2.0, 0.0],
        [0.0, 0.0, 1 / 2, 1.0, 0.0, 2.0],
    ])
    return {"group_independent": group_independent, "band_diagonal": band_diagonal}


# -- continuous model ----------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedGaussian:
    """Zero-mean normal truncated to the box x_nu in [-5 sigma_nu, 5 sigma_nu].

    The density is normalized with the untruncated constant; the mass beyond
    five standard deviations is below 1e-5 of the total, so the relative
    normalization error is negligible against the statistical errors here.
    """

    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "covariance", cov)

    @property
    def d(self) -> int:
        return self.covariance.shape[0]

    @cached_property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @cached_property
    def box(self) -> np.ndarray:
        """(d, 2) array of interval bounds."""
        half = 5.0 * self.sigmas
        return np.column_stack([-half, half])

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariance)

    @cached_property
    def _log_const(self) -> float:
        sign, logdet = np.linalg.slogdet(self.covariance)
        return -0.5 * (self.d * np.log(2.0 * np.pi) + logdet)

    def sample(self, n: int, rng: np.random.Generator) -> SampleSet:
        """n i.i.d. draws; draws outside the box are rejected and redrawn."""
        out = np.empty((0, self.d))
        half = 5.0 * self.sigmas
        while out.shape[0] < n:
            batch = rng.standard_normal((max(n - out.shape[0], 16), self.d)) @ self._chol.T
            keep = np.all(np.abs(batch) <= half, axis=1)
            out = np.vstack([out, batch[keep]])
        return SampleSet(out[:n])

    def density_many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.linalg.solve(self.covariance, x.T)
        quad = np.sum(x.T * z, axis=0)
        vals = np.exp(self._log_const - 0.5 * quad)
        inside = np.all(np.abs(x) <= 5.0 * self.sigmas[None, :], axis=1)
        return np.where(inside, vals, 0.0)

    def density(self, x) -> float:
        return float(self.density_many(np.asarray(x, dtype=float)[None, :])[0])

    def sample_reference(self, n: int, rng: np.random.Generator) -> SampleSet:
        """Uniform draws on the truncation box (normalized Lebesgue measure)."""
        u = rng.random((n, self.d))
        lo, hi = self.box[:, 0], self.box[:, 1]
        return SampleSet(lo + u * (hi - lo))

    def bases(self, max_degree: int = 50) -> list[LegendreBasis]:
        return [LegendreBasis(float(lo), float(hi), max_degree)
                for lo, hi in self.box]


# -- discrete models -------------------------------------------------------------------


class _DiscreteModel:
    """Shared interface: density from the materialized probability table."""

    d: int
    sizes: tuple[int, ...]

    def exact_tensor(self) -> FullTensor:
        raise NotImplementedError

    @cached_property
    def _table(self) -> np.ndarray:
        return self.exact_tensor().entries

    def density_many(self, x: np.ndarray) -> np.ndarray:
        idx = np.rint(np.asarray(x, dtype=float)).astype(int) - 1
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.sizes)[None, :]):
            raise ValueError("state out of range")
        return self._table[tuple(idx.T)]

    def density(self, x) -> float:
        return float(self.density_many(np.asarray(x, dtype=float)[None, :])[0])

    def sample_reference(self, n: int, rng: np.random.Generator) -> SampleSet:
        """Uniform draws over the index grid (entry sampling)."""
        cols = [rng.integers(1, s + 1, size=n) for s in self.sizes]
        return SampleSet(np.column_stack(cols).astype(float))

    def bases(self) -> list[CanonicalBasis]:
        return [CanonicalBasis(s) for s in self.sizes]


@dataclass(frozen=True)
class MarkovChain(_DiscreteModel):
    """Discrete-time Markov process on {1..N}^d with given transition matrices.

    ``transitions`` holds one row-stochastic matrix per step (d-1 of them;
    they may all be the same object).  The initial law is uniform.
    """

    n_states: int
    transitions: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(p, dtype=float) for p in self.transitions)
        for p in mats:
            if p.shape != (self.n_states, self.n_states):
                raise ValueError("transition matrix shape mismatch")
            if not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError("transition rows must sum to 1")
        object.__setattr__(self, "transitions", mats)

    @property
    def d(self) -> int:
        return len(self.transitions) + 1

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_states,) * self.d

    @property
    def initial(self) -> np.ndarray:
        return np.full(self.n_states, 1.0 / self.n_states)

    def sample(self, n: int, rng: np.random.Generator) -> SampleSet:
        states = np.empty((n, self.d), dtype=int)
        states[:, 0] = rng.integers(0, self.n_states, size=n)
        u = rng.random((n, self.d - 1))
        for step, p in enumerate(self.transitions):
            cum = np.cumsum(p, axis=1)
            states[:, step + 1] = np.sum(
                u[:, step, None] > cum[states[:, step]], axis=1)
        return SampleSet(states.astype(float) + 1.0)

    def density_many(self, x: np.ndarray) -> np.ndarray:
        idx = np.rint(np.asarray(x, dtype=float)).astype(int) - 1
        vals = self.initial[idx[:, 0]].copy()
        for step, p in enumerate(self.transitions):
            vals *= p[idx[:, step], idx[:, step + 1]]
        return vals

    def exact_tensor(self, cap: int = FULL_TABLE_CAP) -> FullTensor:
        if self.n_states ** self.d > cap:
            raise ValueError("probability table exceeds the cap")
        t = self.initial
        for p in self.transitions:
            t = t[..., :, None] * p  # broadcast the last state against its successor
        return FullTensor(self.sizes, t)


@dataclass(frozen=True)
class GraphicalModel(_DiscreteModel):
    """Product of nonnegative clique factors on {1..N}^d, normalized to sum 1."""

    d: int
    n_states: int
    cliques: tuple[tuple[tuple[int, ...], np.ndarray], ...]

    def __post_init__(self):
        seen = set()
        cleaned = []
        for dims, tensor in self.cliques:
            dims = tuple(int(v) for v in dims)
            tensor = np.asarray(tensor, dtype=float)
            if any(v < 1 or v > self.d for v in dims):
                raise ValueError("clique variable out of range")
            if tensor.shape != (self.n_states,) * len(dims):
                raise ValueError("clique tensor shape mismatch")
            if np.any(tensor < 0):
                raise ValueError("clique tensors must be nonnegative")
            seen.update(dims)
            cleaned.append((dims, tensor))
        if seen != set(range(1, self.d + 1)):
            raise ValueError("cliques must cover every variable")
        object.__setattr__(self, "cliques", tuple(cleaned))

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_states,) * self.d

    def exact_tensor(self, cap: int = FULL_TABLE_CAP) -> FullTensor:
        if self.n_states ** self.d > cap:
            raise ValueError("probability table exceeds the cap")
        table = np.ones(self.sizes)
        for dims, tensor in self.cliques:
            shape = [self.n_states if (nu in dims) else 1 for nu in range(1, self.d + 1)]
            # sort the clique axes by variable, then broadcast into position
            expanded = np.transpose(tensor, np.argsort(dims))
            table *= expanded.reshape(shape)
        table /= table.sum()
        return FullTensor(self.sizes, table)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.cumsum(self._table.reshape(-1))

    def sample(self, n: int, rng: np.random.Generator) -> SampleSet:
        """Categorical draws from the materialized table via inverse CDF."""
        u = rng.random(n) * self._cumulative[-1]
        flat = np.searchsorted(self._cumulative, u, side="right")
        flat = np.minimum(flat, self._table.size - 1)
        idx = np.column_stack(np.unravel_index(flat, self.sizes))
        return SampleSet(idx.astype(float) + 1.0)


@dataclass(frozen=True)
class ProductMixture(_DiscreteModel):
    """Mixture of product measures on a discrete grid.

    ``factors[k][nu]`` is the probability vector of variable nu+1 under
    component k; weights are convex.
    """

    weights: np.ndarray
    factors: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be convex")
        comps = tuple(tuple(np.asarray(p, dtype=float) for p in comp)
                      for comp in self.factors)
        if len(comps) != len(w):
            raise ValueError("one factor list per weight")
        d = len(comps[0])
        for comp in comps:
            if len(comp) != d:
                raise ValueError("all components must cover the same variables")
            for p in comp:
                if abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0):
                    raise ValueError("factors must be probability vectors")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "factors", comps)

    @property
    def d(self) -> int:
        return len(self.factors[0])

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.factors[0])

    def sample(self, n: int, rng: np.random.Generator) -> SampleSet:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        out = np.empty((n, self.d), dtype=float)
        for k in range(len(self.weights)):
            mask = comp == k
            m = int(mask.sum())
            if m == 0:
                continue
            for nu in range(self.d):
                out[mask, nu] = rng.choice(self.sizes[nu], size=m,
                                           p=self.factors[k][nu]) + 1.0
        return SampleSet(out)

    def exact_tensor(self, cap: int = FULL_TABLE_CAP) -> FullTensor:
        if int(np.prod(self.sizes)) > cap:
            raise ValueError("probability table exceeds the cap")
        table = np.zeros(self.sizes)
        for w, comp in zip(self.weights, self.factors):
            term = comp[0]
            for p in comp[1:]:
                term = np.multiply.outer(term, p)
            table += w * term
        return FullTensor(self.sizes, table)


# -- named example models ---------------------------------------------------------------


def example_markov_chain(d: int = 8, n_states: int = 5, seed: int = 421) -> MarkovChain:
    """Markov chain with an independent rank-2 transition matrix per step."""
    rng = np.random.default_rng(seed)
    mats = tuple(make_rank2_stochastic(n_states, rng) for _ in range(d - 1))
    return MarkovChain(n_states, mats)


def learning_markov_chain(d: int = 8, n_states: int = 5, seed: int = 421) -> MarkovChain:
    """Markov chain with one rank-2 transition matrix shared by every step."""
    rng = np.random.default_rng(seed)
    p = make_rank2_stochastic(n_states, rng)
    return MarkovChain(n_states, (p,) * (d - 1))


GRAPHICAL_CLIQUES = ((1, 2, 3, 7), (3, 4, 5, 6), (4, 8), (8, 9, 10))


def example_graphical_model(seed: int = 97, rank3: bool = True) -> GraphicalModel:
    """d=10 clique model over {1,2,3,7}, {3,4,5,6}, {4,8}, {8,9,10}.

    With ``rank3`` the clique factors have every matricization of rank 3
    (the learning benchmark); otherwise they are generic positive tensors,
    whose representation ranks saturate the dimensional bounds (the
    compression / tree-optimization benchmark).
    """
    rng = np.random.default_rng(seed)
    if rank3:
        cliques = tuple(
            (dims, make_rank3_clique_tensor((5,) * len(dims), rng))
            for dims in GRAPHICAL_CLIQUES)
    else:
        cliques = tuple(
            (dims, rng.random((5,) * len(dims)) + 0.05)
            for dims in GRAPHICAL_CLIQUES)
    return GraphicalModel(10, 5, cliques)


# -- JSON specs ---------------------------------------------------------------------------


DISTRIBUTION_PRESETS = {
    "table1": {"kind": "truncated_gaussian", "preset": "group_independent"},
    "table2": {"kind": "truncated_gaussian", "preset": "band_diagonal"},
    "table3": {"kind": "markov_chain", "d": 8, "n_states": 5, "seed": 421,
               "per_step": False},
    "table4": {"kind": "graphical_model", "seed": 97},
}


def distribution_from_json_dict(doc: Mapping):
    """Instantiate a benchmark model from its JSON spec.

    ``{"preset": "table1" | ... | "table4"}`` selects one of the named
    benchmark setups directly.
    """
    if "kind" not in doc and "preset" in doc:
        doc = DISTRIBUTION_PRESETS[doc["preset"]]
    kind = doc["kind"]
    if kind == "truncated_gaussian":
        if "preset" in doc:
            cov = preset_covariances()[doc["preset"]]
        else:
            cov = np.asarray(doc["covariance"], dtype=float)
        return TruncatedGaussian(cov)
    if kind == "markov_chain":
        d = int(doc.get("d", 8))
        n_states = int(doc.get("n_states", 5))
        seed = int(doc.get("seed", 421))
        if doc.get("per_step", False):
            return example_markov_chain(d, n_states, seed)
        return learning_markov_chain(d, n_states, seed)
    if kind == "graphical_model":
        return example_graphical_model(int(doc.get("seed", 97)))
    if kind == "product_mixture":
        return ProductMixture(np.asarray(doc["weights"], dtype=float),
                              tuple(tuple(np.asarray(p, dtype=float) for p in comp)
                                    for comp in doc["factors"]))
    raise ValueError(f"unknown distribution kind {kind!r}")
