"""Orthonormal basis evaluation, Gram checks and candidate patterns."""

import numpy as np
import pytest

from treedens.bases import (
    CanonicalBasis,
    DomainError,
    LegendreBasis,
    basis_from_json_dict,
)


class TestCanonical:
    def test_indicator(self):
        b = CanonicalBasis(5)
        np.testing.assert_array_equal(b.eval_one(3.0), [0, 0, 1, 0, 0])

    def test_gram_exact_identity(self):
        b = CanonicalBasis(4)
        np.testing.assert_array_equal(b.gram(), np.eye(4))

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            CanonicalBasis(5).eval_one(6.0)

    def test_single_pattern(self):
        pats = CanonicalBasis(5).candidate_patterns()
        assert len(pats) == 1
        np.testing.assert_array_equal(pats[0], np.arange(5))

    def test_coefficients_are_grid_values(self):
        # a coefficient vector against the canonical basis evaluates to itself
        b = CanonicalBasis(4)
        coef = np.array([0.3, -1.0, 2.0, 0.7])
        phi = b.eval_many(np.arange(1.0, 5.0))
        np.testing.assert_allclose(phi @ coef, coef)


class TestLegendre:
    def test_constant_is_unit_norm(self):
        b = LegendreBasis(-1.0, 1.0, 0)
        assert b.eval_one(0.37)[0] == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-15)

    @pytest.mark.parametrize("a,b,deg", [(-1, 1, 3), (-4, 4, 10), (2.5, 7.0, 50)])
    def test_gram_identity_by_quadrature(self, a, b, deg):
        basis = LegendreBasis(float(a), float(b), deg)
        gram = basis.gram()
        assert np.abs(gram - np.eye(deg + 1)).max() <= 1e-10

    def test_domain_error(self):
        with pytest.raises(DomainError):
            LegendreBasis(-1.0, 1.0, 2).eval_one(1.5)

    def test_nested_patterns_degree3(self):
        pats = LegendreBasis(-1, 1, 3).candidate_patterns()
        assert [len(p) for p in pats] == [1, 2, 3, 4]
        for small, big in zip(pats[:-1], pats[1:]):
            assert set(small) <= set(big)

    def test_degree50_patterns(self):
        pats = LegendreBasis(-1, 1, 50).candidate_patterns()
        assert len(pats) == 51
        assert len(pats[-1]) == 51

    def test_recurrence_matches_numpy(self):
        b = LegendreBasis(-1.0, 1.0, 12)
        x = np.linspace(-1, 1, 7)
        vals = b.eval_many(x)
        for k in range(13):
            ref = np.polynomial.legendre.Legendre.basis(k)(x) * np.sqrt((2 * k + 1) / 2)
            np.testing.assert_allclose(vals[:, k], ref, atol=1e-12)


def test_json_round_trip():
    for basis in (CanonicalBasis(7), LegendreBasis(-2.0, 3.0, 9)):
        again = basis_from_json_dict(basis.to_json_dict())
        assert again == basis
