"""Independent oracles used by the verification suite and the tests.

These deliberately avoid the production code paths: the exhaustive
stabilizer below replays raw stream instructions and explores every
legal toppling order, so agreement with the kernel stabilizer is a real
cross-check rather than a tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import InvariantViolation
from .stacks import StackSet


@dataclass(frozen=True)
class MicroResult:
    eta: tuple
    odometer: tuple


def exhaustive_stabilize_full(eta0, stacks: StackSet, lo: int) -> MicroResult:
    """Explore every legal full-toppling order of a micro instance and
    check they all end in the same configuration and odometer.

    ``eta0`` covers the closed interval starting at ``lo``; its first and
    last slots absorb.  Raises if two orders disagree (they cannot, if
    the toppling scheme is truly abelian).
    """
    m = len(eta0)
    start = (tuple(int(v) for v in eta0), (0,) * m)
    memo: dict[tuple, MicroResult] = {}

    def instr(x_idx: int, j: int) -> int:
        return stacks.instruction(lo + x_idx, 0, j)

    def explore(state) -> MicroResult:
        if state in memo:
            return memo[state]
        eta, cons = state
        result = None
        for x in range(1, m - 1):
            if eta[x] >= 2:
                e = list(eta)
                c = list(cons)
                b1 = instr(x, c[x])
                b2 = instr(x, c[x] + 1)
                c[x] += 2
                e[x] -= 2
                e[x + b1] += 1
                e[x + b2] += 1
                sub = explore((tuple(e), tuple(c)))
                if result is None:
                    result = sub
                elif result != sub:
                    raise InvariantViolation(
                        f"toppling orders disagree from state {state}: "
                        f"{result} vs {sub}"
                    )
        if result is None:
            odo = tuple(cj // 2 for cj in cons)
            result = MicroResult(eta, odo)
        memo[state] = result
        return result

    return explore(start)


# ---------------------------------------------------------------------------
# Exact law values
# ---------------------------------------------------------------------------


def geometric_pmf(p: float, k: int) -> float:
    """P(N = k) for N geometric on {1, 2, ...} with success probability p."""
    return (1.0 - p) ** (k - 1) * p


def geometric_odd_probability(p: float) -> float:
    """P(N odd) for the same law: sum over odd k of (1-p)^(k-1) p."""
    q = 1.0 - p
    return p / (1.0 - q * q)


def excursion_reach_probability(ell: int) -> float:
    """Chance a simple-random-walk excursion attains displacement >= ell."""
    return 1.0 / ell


def even_visit_probability() -> float:
    """Chance an excursion goes left and visits -1 an even number of
    times: 1/2 (left) times 1/3 (geometric(1/2) count is even)."""
    return 1.0 / 6.0


def right_emission_ceiling(a: int, K: int) -> float:
    """Gambler's-ruin bound on emitting to the right from a block of
    width a with period K: worst case over in-block starting sites."""
    return K / (2.0 * K - a)


def refresh_loss_ceiling(k: int) -> float:
    """Tail bound (5/6)^((k-1)/2) on losing >= k nonzero symbols in one
    reveal step of the auxiliary block process."""
    return (5.0 / 6.0) ** ((k - 1) / 2.0)


# ---------------------------------------------------------------------------
# Statistical tolerances
# ---------------------------------------------------------------------------


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 1e-300) / n)


def within_z(p_hat: float, p: float, n: int, z: float = 3.0) -> bool:
    return abs(p_hat - p) <= z * binomial_sigma(p, n)


def below_ceiling(p_hat: float, ceiling: float, n: int, z: float = 3.0) -> bool:
    return p_hat <= ceiling + z * binomial_sigma(min(max(ceiling, 1e-12), 1 - 1e-12), n)


def total_variation(emp_counts, pmf, n: int, tail_from: int | None = None) -> float:
    """TV distance between empirical counts over {1..len-1} (last bin =
    overflow) and a pmf callable."""
    emp = np.asarray(emp_counts, dtype=np.float64) / n
    tv = 0.0
    kmax = len(emp) - 1
    tail = 1.0
    for k in range(1, kmax):
        pk = pmf(k)
        tail -= pk
        tv += abs(emp[k] - pk)
    tv += abs(emp[kmax] + emp[0] - max(tail, 0.0))
    return 0.5 * tv


def mean_ci(values, z: float = 1.96) -> tuple[float, float, float]:
    """(mean, half-width, stderr) of a sample under a normal approximation."""
    v = np.asarray(values, dtype=np.float64)
    m = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return m, z * se, se


def fresh_micro_stacks(seed: int, lo: int, hi: int) -> StackSet:
    return StackSet(lo, hi + 1, seed)
