"""
Closed-form probabilities of the binary protocol.

These are the exact quantities the round dynamics are analysed with: how many
pushes a node receives, the chance a fresh sample adopts 0, the limiting drift
of the imbalance and the second-moment bound on its jump. They serve as ground
truth for the Monte Carlo checks in ``lateconsensus.verify``.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from fractions import Fraction

from scipy.stats import binom

from lateconsensus.exceptions import OracleDomainError


def _require(condition: bool, message: str, parameter: str) -> None:
    if not condition:
        raise OracleDomainError(message, parameter=parameter)


def prob_receive_exactly(n: int, n_t: int, k: int, j: int) -> float:
    """
    Probability that a fixed node receives exactly ``j`` of the k·n_t pushes.

    Each push picks its destination uniformly among n nodes, so the count is
    Binomial(k·n_t, 1/n). Evaluated in log space.

    Raises:
        OracleDomainError: If j lies outside 0..k·n_t or n, n_t, k are invalid
    """
    _require(n >= 1, f"n must be positive, got {n}", "n")
    _require(0 <= n_t <= n, f"n_t must lie in [0, {n}], got {n_t}", "n_t")
    _require(k >= 1, f"k must be positive, got {k}", "k")
    trials = k * n_t
    _require(0 <= j <= trials, f"j must lie in [0, {trials}], got {j}", "j")
    if trials == 0:
        return 1.0
    return float(math.exp(binom.logpmf(j, trials, 1.0 / n)))


def prob_le2(n: int, n_t: int, k: int = 6) -> float:
    """Probability that a node receives at most 2 values (fewer than ℓ=3)."""
    top = min(2, k * n_t)
    return math.fsum(prob_receive_exactly(n, n_t, k, j) for j in range(top + 1))


def prob_pick_zero_exact(n_t: int, x_t: int, k: int = 6, l: int = 3) -> Fraction:  # noqa: E741
    """
    Exact probability that a majority of ℓ draws from the k·n_t pushed values is 0.

    The ℓ values are drawn without replacement from a global pool holding
    k·X_t zeros and k·(n_t − X_t) ones.

    Raises:
        OracleDomainError: If n_t < 1, X_t ∉ [0, n_t], ℓ is even or k·n_t < ℓ
    """
    _require(n_t >= 1, f"n_t must be at least 1, got {n_t}", "n_t")
    _require(0 <= x_t <= n_t, f"X_t must lie in [0, {n_t}], got {x_t}", "x_t")
    _require(l % 2 == 1, f"ℓ must be odd, got {l}", "l")
    pool, zeros = k * n_t, k * x_t
    _require(pool >= l, f"pool of {pool} values is smaller than ℓ={l}", "n_t")
    ones = pool - zeros
    favourable = sum(
        math.comb(zeros, j) * math.comb(ones, l - j) for j in range(l // 2 + 1, l + 1)
    )
    return Fraction(favourable, math.comb(pool, l))


def prob_pick_zero(n_t: int, x_t: int, k: int = 6, l: int = 3) -> float:  # noqa: E741
    """Float form of :func:`prob_pick_zero_exact`."""
    return float(prob_pick_zero_exact(n_t, x_t, k, l))


def drift_expansion(delta: float) -> float:
    """
    Limit of Pr[adopt 0] when the relative imbalance toward 1 is δ.

    Returns 1/2 − (3/2)δ + 2δ³.

    Raises:
        OracleDomainError: If δ lies outside [0, 1/2]
    """
    _require(0.0 <= delta <= 0.5, f"δ must lie in [0, 1/2], got {delta}", "delta")
    return 0.5 - 1.5 * delta + 2.0 * delta**3


def paley_zygmund(mean2: float, mean4: float, theta: float) -> float:
    """
    Lower bound (1 − θ)²·E[Z]²/E[Z²] on Pr[Z > θ·E[Z]] for Z = Δ².

    ``mean2`` is E[Δ²] and ``mean4`` is E[Δ⁴].

    Raises:
        OracleDomainError: If mean4 ≤ 0 or θ lies outside [0, 1]
    """
    _require(mean4 > 0, f"E[Δ⁴] must be positive, got {mean4}", "mean4")
    _require(0.0 <= theta <= 1.0, f"θ must lie in [0, 1], got {theta}", "theta")
    return (1.0 - theta) ** 2 * mean2**2 / mean4


@dataclass(frozen=True)
class Formula:
    """A named oracle formula callable from the command line."""

    name: str
    function: Callable[..., float]
    parameters: tuple[str, ...]
    integer: bool = True

    def __call__(self, *args: str) -> float:
        if len(args) != len(self.parameters):
            raise OracleDomainError(
                f"{self.name} takes {len(self.parameters)} arguments "
                f"({', '.join(self.parameters)}), got {len(args)}",
                parameter=self.name,
            )
        cast: Callable[[str], float | int] = int if self.integer else _as_float
        try:
            values = [cast(a) for a in args]
        except ValueError:
            raise OracleDomainError(
                f"cannot parse arguments {' '.join(args)} for {self.name}",
                parameter=self.name,
            ) from None
        return self.function(*values)


def _as_float(text: str) -> float:
    return float(Fraction(text))


FORMULAS: dict[str, Formula] = {
    f.name: f
    for f in (
        Formula("prob_receive_exactly", prob_receive_exactly, ("n", "n_t", "k", "j")),
        Formula("prob_le2", prob_le2, ("n", "n_t", "k")),
        Formula("prob_pick_zero", prob_pick_zero, ("n_t", "x_t")),
        Formula("drift_expansion", drift_expansion, ("delta",), integer=False),
        Formula("paley_zygmund", paley_zygmund, ("mean2", "mean4", "theta"), integer=False),
    )
}


def evaluate(name: str, args: list[str]) -> float:
    """
    Evaluate a formula by name with string arguments.

    Raises:
        OracleDomainError: For unknown formulas or out-of-domain arguments
    """
    formula = FORMULAS.get(name)
    if formula is None:
        raise OracleDomainError(
            f"Unknown formula: {name} (choose from {', '.join(FORMULAS)})",
            parameter="formula",
        )
    return formula(*args)
