"""Tests for the closed-form probabilities."""

import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lateconsensus.exceptions import OracleDomainError
from lateconsensus.oracle import (
    FORMULAS,
    drift_expansion,
    evaluate,
    paley_zygmund,
    prob_le2,
    prob_pick_zero,
    prob_pick_zero_exact,
    prob_receive_exactly,
)


class TestReceiveCounts:
    """Tests for prob_receive_exactly and prob_le2."""

    def test_no_senders(self):
        """Nobody pushes, so nothing is received."""
        assert prob_receive_exactly(100, 0, 6, 0) == 1.0

    def test_nothing_received(self):
        """(1 − 1/n)^(k·n_t) at n=1000, n_t=750."""
        value = prob_receive_exactly(1000, 750, 6, 0)
        assert value == pytest.approx((1 - 1e-3) ** 4500, rel=1e-10)
        assert value == pytest.approx(0.0111, abs=5e-5)

    def test_normalized(self):
        """The distribution sums to 1."""
        total = math.fsum(prob_receive_exactly(50, 10, 2, j) for j in range(21))
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_matches_exact_binomial(self):
        """Log-space evaluation agrees with exact rational arithmetic."""
        n, n_t, k, j = 40, 30, 6, 5
        exact = math.comb(k * n_t, j) * Fraction(1, n) ** j * Fraction(n - 1, n) ** (k * n_t - j)
        assert prob_receive_exactly(n, n_t, k, j) == pytest.approx(float(exact), rel=1e-10)

    @pytest.mark.parametrize("j", [-1, 61])
    def test_j_out_of_range(self, j):
        """j must lie in 0..k·n_t."""
        with pytest.raises(OracleDomainError):
            prob_receive_exactly(100, 10, 6, j)

    def test_le2_bound(self):
        """At n_t = 3n/4 the starvation probability is below 2/11."""
        assert prob_le2(10**6, 750_000) <= 2 / 11

    def test_le2_monotone(self):
        """More senders, fewer starved nodes."""
        assert prob_le2(1000, 1000) < prob_le2(1000, 750)


class TestPickZero:
    """Tests for prob_pick_zero."""

    def test_extremes(self):
        """No zeros or only zeros."""
        assert prob_pick_zero(100, 0) == 0.0
        assert prob_pick_zero(100, 100) == 1.0

    def test_half(self):
        """Near 1/2 when the pool is balanced."""
        assert abs(prob_pick_zero(4096, 2048) - 0.5) <= 1 / 4096

    def test_exact_formula(self):
        """The product form for ℓ = 3."""
        n_t, x_t = 10, 4
        zeros, pool = 6 * x_t, 6 * n_t
        ones = pool - zeros
        expected = (
            3 * Fraction(zeros, pool) * Fraction(zeros - 1, pool - 1) * Fraction(ones, pool - 2)
            + Fraction(zeros, pool) * Fraction(zeros - 1, pool - 1) * Fraction(zeros - 2, pool - 2)
        )
        assert prob_pick_zero_exact(n_t, x_t) == expected

    @given(st.integers(min_value=1, max_value=500).flatmap(
        lambda n_t: st.tuples(st.just(n_t), st.integers(min_value=0, max_value=n_t))
    ))
    def test_complementary(self, args):
        """Adopting 0 at X_t and at n_t − X_t sum to one."""
        n_t, x_t = args
        assert prob_pick_zero(n_t, x_t) + prob_pick_zero(n_t, n_t - x_t) == pytest.approx(1.0, abs=1e-12)

    def test_domain(self):
        """X_t beyond n_t and even ℓ are rejected."""
        with pytest.raises(OracleDomainError):
            prob_pick_zero(10, 11)
        with pytest.raises(OracleDomainError):
            prob_pick_zero(10, 5, l=4)


class TestDrift:
    """Tests for drift_expansion."""

    def test_values(self):
        """Known points of 1/2 − (3/2)δ + 2δ³."""
        assert drift_expansion(0) == 0.5
        assert drift_expansion(0.25) == pytest.approx(0.15625)

    def test_limit_of_exact(self):
        """The exact probability converges to the expansion."""
        n_t = 100_000
        exact = prob_pick_zero(n_t, int(n_t * 0.4))
        assert abs(drift_expansion(0.1) - exact) <= 10 / n_t

    def test_domain(self):
        """δ must lie in [0, 1/2]."""
        with pytest.raises(OracleDomainError):
            drift_expansion(0.6)


class TestPaleyZygmund:
    """Tests for the second-moment bound."""

    def test_values(self):
        """Boundary values and the jump constant."""
        assert paley_zygmund(1.0, 2.0, 1.0) == 0.0
        assert paley_zygmund(3.0, 9.0, 0.0) == 1.0
        n = 4096
        assert paley_zygmund(n / 8, n**2 / 12, 0.5) == pytest.approx(3 / 64)

    def test_domain(self):
        """E[Δ⁴] must be positive."""
        with pytest.raises(OracleDomainError):
            paley_zygmund(1.0, 0.0, 0.5)


class TestEvaluate:
    """Tests for evaluation by name."""

    def test_by_name(self):
        """String arguments are parsed per formula."""
        assert evaluate("drift_expansion", ["1/4"]) == pytest.approx(0.15625)
        assert evaluate("prob_pick_zero", ["100", "100"]) == 1.0

    def test_unknown(self):
        """Unknown names list the choices."""
        with pytest.raises(OracleDomainError, match="prob_le2"):
            evaluate("nope", [])

    def test_arity(self):
        """Wrong argument counts are rejected."""
        with pytest.raises(OracleDomainError, match="takes 4 arguments"):
            evaluate("prob_receive_exactly", ["1", "2"])

    def test_unparseable(self):
        """Non-numeric arguments are rejected."""
        with pytest.raises(OracleDomainError, match="cannot parse"):
            evaluate("prob_le2", ["a", "b", "c"])

    def test_registry(self):
        """Every formula is registered."""
        assert set(FORMULAS) == {
            "prob_receive_exactly", "prob_le2", "prob_pick_zero", "drift_expansion", "paley_zygmund",
        }
