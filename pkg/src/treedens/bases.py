"""Per-dimension orthonormal function bases.

Two kinds are provided: the canonical (indicator) basis on a finite state
space {1, ..., N}, and Legendre polynomials affinely mapped to an interval
[a, b] and normalized with respect to the Lebesgue measure there.  Both are
orthonormal, so coefficient tensors inherit the L2 geometry of the functions
they represent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = ["CanonicalBasis", "LegendreBasis", "Basis", "basis_from_json_dict"]


class DomainError(ValueError):
    """Point outside the basis domain."""


@dataclass(frozen=True)
class CanonicalBasis:
    """Indicator basis on the finite state space {1, ..., size}.

    phi_i(x) = 1 if x == i else 0, orthonormal under the counting measure.
    A coefficient vector equals the function values on the grid.
    """

    size: int

    kind = "canonical"

    def eval_one(self, x: float) -> np.ndarray:
        return self.eval_many(np.array([x]))[0]

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate all basis functions at points ``xs``; returns (n, size)."""
        idx = np.rint(np.asarray(xs, dtype=float)).astype(int)
        if np.any(idx < 1) or np.any(idx > self.size):
            raise DomainError(f"state out of range 1..{self.size}")
        out = np.zeros((idx.shape[0], self.size))
        out[np.arange(idx.shape[0]), idx - 1] = 1.0
        return out

    def candidate_patterns(self) -> list[np.ndarray]:
        """No natural nesting: the single full index set."""
        return [np.arange(self.size)]

    def gram(self) -> np.ndarray:
        return np.eye(self.size)

    def to_json_dict(self) -> dict:
        return {"kind": "canonical", "size": self.size}


@dataclass(frozen=True)
class LegendreBasis:
    """Legendre polynomials on [a, b], orthonormal w.r.t. Lebesgue measure.

    phi_i(x) = sqrt((2i+1)/(b-a)) * P_i(2(x-a)/(b-a) - 1), evaluated with the
    three-term recurrence, which is stable to degree 50 and beyond.
    """

    a: float
    b: float
    max_degree: int

    kind = "legendre"

    @property
    def size(self) -> int:
        return self.max_degree + 1

    def _to_reference(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        lo, hi = min(self.a, self.b), max(self.a, self.b)
        tol = 1e-12 * (hi - lo)
        if np.any(xs < lo - tol) or np.any(xs > hi + tol):
            raise DomainError(f"point outside [{self.a}, {self.b}]")
        t = 2.0 * (xs - self.a) / (self.b - self.a) - 1.0
        return np.clip(t, -1.0, 1.0)

    def eval_one(self, x: float) -> np.ndarray:
        return self.eval_many(np.array([x]))[0]

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate all basis functions at points ``xs``; returns (n, size)."""
        t = self._to_reference(xs)
        n = t.shape[0]
        p = self.max_degree
        vals = np.empty((n, p + 1))
        vals[:, 0] = 1.0
        if p >= 1:
            vals[:, 1] = t
        for k in range(1, p):
            vals[:, k + 1] = ((2 * k + 1) * t * vals[:, k] - k * vals[:, k - 1]) / (k + 1)
        scale = np.sqrt((2.0 * np.arange(p + 1) + 1.0) / (self.b - self.a))
        return vals * scale

    def candidate_patterns(self) -> list[np.ndarray]:
        """Nested index sets of polynomial degrees <= 0, 1, ..., max_degree."""
        return [np.arange(k + 1) for k in range(self.max_degree + 1)]

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes/weights on [a, b], exact for the Gram integrands."""
        n_quad = self.max_degree + 2
        t, w = np.polynomial.legendre.leggauss(n_quad)
        half = 0.5 * (self.b - self.a)
        return self.a + half * (t + 1.0), half * w

    def gram(self) -> np.ndarray:
        """Gram matrix by quadrature; identity up to roundoff."""
        x, w = self.quadrature()
        phi = self.eval_many(x)
        return phi.T @ (phi * w[:, None])

    def to_json_dict(self) -> dict:
        return {"kind": "legendre", "interval": [self.a, self.b],
                "max_degree": self.max_degree}


Basis = Union[CanonicalBasis, LegendreBasis]


def basis_from_json_dict(doc: Mapping) -> Basis:
    kind = doc["kind"]
    if kind == "canonical":
        return CanonicalBasis(int(doc["size"]))
    if kind == "legendre":
        a, b = doc["interval"]
        return LegendreBasis(float(a), float(b), int(doc["max_degree"]))
    raise ValueError(f"unknown basis kind {kind!r}")


def bases_to_json(bases: Sequence[Basis]) -> str:
    return json.dumps([b.to_json_dict() for b in bases], separators=(",", ":"))
