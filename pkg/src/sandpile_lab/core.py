"""Particle configurations, legal topplings, odometers, stabilization.

A :class:`LatticeState` lives on a closed integer interval ``[lo, hi]``
whose two endpoint sites absorb: a particle moved onto an endpoint stays
there forever and is counted as boundary-frozen mass.  Only interior
sites ever topple.

Two toppling schemes are supported.  In the full scheme a site with at
least two particles consumes the next two stack instructions and moves
two particles independently.  In the half scheme a single particle moves
per toppling; a site is legal when it has two particles, or one particle
with odd parity.  Both consume the same per-site instruction streams, so
coupled comparisons between the schemes are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .errors import CapExceeded, ConfigError, IllegalMoveError
from .stacks import StackSet

DEFAULT_CAP = 10**9

POLICIES = {
    "leftmost": kernels.POLICY_LEFTMOST,
    "rightmost": kernels.POLICY_RIGHTMOST,
    "random": kernels.POLICY_RANDOM,
    "queue": kernels.POLICY_QUEUE,
    "stack": kernels.POLICY_STACK,
}


@dataclass
class LatticeState:
    """Counts and parities on [lo, hi]; the endpoint slots hold the
    absorbed (boundary-frozen) particles."""

    lo: int
    hi: int
    eta: np.ndarray
    omega: np.ndarray

    @classmethod
    def empty(cls, lo: int, hi: int) -> "LatticeState":
        if hi - lo < 2:
            raise ConfigError("interval needs at least one interior site")
        n = hi - lo + 1
        return cls(lo, hi, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int8))

    @classmethod
    def from_counts(cls, lo: int, counts, omega=None) -> "LatticeState":
        """State with ``counts`` on the full closed interval starting at lo."""
        eta = np.asarray(counts, dtype=np.int64).copy()
        st = cls.empty(lo, lo + len(eta) - 1)
        st.eta[:] = eta
        if omega is not None:
            st.omega[:] = np.asarray(omega, dtype=np.int8)
        return st

    # -- indexing helpers -------------------------------------------------
    def idx(self, x: int) -> int:
        if not (self.lo <= x <= self.hi):
            raise IndexError(f"site {x} outside [{self.lo}, {self.hi}]")
        return x - self.lo

    def eta_at(self, x: int) -> int:
        return int(self.eta[self.idx(x)])

    def omega_at(self, x: int) -> int:
        return int(self.omega[self.idx(x)])

    def is_interior(self, x: int) -> bool:
        return self.lo < x < self.hi

    @property
    def boundary_frozen(self) -> tuple[int, int]:
        return int(self.eta[0]), int(self.eta[-1])

    @property
    def interior_mass(self) -> int:
        return int(self.eta[1:-1].sum())

    @property
    def total_mass(self) -> int:
        return int(self.eta.sum())

    def copy(self) -> "LatticeState":
        return LatticeState(self.lo, self.hi, self.eta.copy(), self.omega.copy())


@dataclass
class Odometer:
    """Per-site toppling counts from one stabilization run."""

    lo: int
    counts: np.ndarray
    mode: str  # "full" or "half"

    def at(self, x: int) -> int:
        return int(self.counts[x - self.lo])

    @property
    def total(self) -> int:
        return int(self.counts.sum())


# ---------------------------------------------------------------------------
# Elementary moves
# ---------------------------------------------------------------------------


def is_full_legal(state: LatticeState, x: int) -> bool:
    return state.is_interior(x) and state.eta_at(x) >= 2


def is_half_legal(state: LatticeState, x: int) -> bool:
    if not state.is_interior(x):
        return False
    e = state.eta_at(x)
    return e >= 2 or (e == 1 and state.omega_at(x) == 1)


def apply_instruction(state: LatticeState, x: int, direction: int) -> LatticeState:
    """Move one particle from x one step; flips the parity at x."""
    if direction not in (-1, 1):
        raise IllegalMoveError(f"direction must be +-1, got {direction}")
    if not state.is_interior(x):
        raise IllegalMoveError(f"site {x} is not interior")
    i = state.idx(x)
    if state.eta[i] < 1:
        raise IllegalMoveError(f"no particle to move at site {x}")
    state.eta[i] -= 1
    state.eta[i + direction] += 1
    state.omega[i] ^= 1
    return state


def full_topple(state: LatticeState, stacks: StackSet, x: int) -> LatticeState:
    """Consume two instructions at x and move two particles; net parity
    at x is unchanged (flipped twice)."""
    if not is_full_legal(state, x):
        raise IllegalMoveError(f"site {x} is not legal for a full toppling")
    for _ in range(2):
        d = stacks.draw(x)
        apply_instruction(state, x, d)
    return state


def half_topple(state: LatticeState, stacks: StackSet, x: int) -> LatticeState:
    if not is_half_legal(state, x):
        raise IllegalMoveError(f"site {x} is not legal for a half toppling")
    d = stacks.draw(x)
    return apply_instruction(state, x, d)


# ---------------------------------------------------------------------------
# Stabilization
# ---------------------------------------------------------------------------


def _run_stabilize(state, stacks, policy, half, cap, policy_seed):
    if stacks.lo > state.lo or stacks.hi < state.hi + 1:
        raise ConfigError("stack interval must cover the closed state interval")
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)}")
    off = state.lo - stacks.lo
    n = state.hi - state.lo + 1
    keys = stacks.keys[off : off + n]
    consumed = stacks.consumed[off : off + n]
    odo = np.zeros(state.hi - state.lo + 1, dtype=np.int64)
    pkey = rng.stream_key(policy_seed, rng.DOMAIN_REPLICA, 0, 1)
    status, total = kernels.stabilize_kernel(
        state.eta,
        state.omega,
        consumed,
        keys,
        odo,
        half,
        POLICIES[policy],
        np.uint64(pkey),
        cap,
    )
    if status == kernels.CAP_HIT:
        raise CapExceeded(f"stabilization exceeded the toppling cap ({cap})")
    return Odometer(state.lo, odo, "half" if half else "full")


def stabilize_full(
    state: LatticeState,
    stacks: StackSet,
    policy: str = "leftmost",
    cap: int = DEFAULT_CAP,
    policy_seed: int = 0,
) -> tuple[LatticeState, Odometer]:
    """Full topplings until no interior site has two particles."""
    odo = _run_stabilize(state, stacks, policy, False, cap, policy_seed)
    return state, odo


def stabilize_half(
    state: LatticeState,
    stacks: StackSet,
    policy: str = "leftmost",
    cap: int = DEFAULT_CAP,
    policy_seed: int = 0,
) -> tuple[LatticeState, Odometer]:
    """Half topplings until no interior site is half-legal."""
    odo = _run_stabilize(state, stacks, policy, True, cap, policy_seed)
    return state, odo


# ---------------------------------------------------------------------------
# Initial laws and the activity proxy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensitySpec:
    """Initial particle law: iid Poisson, iid finite-support, or constant."""

    kind: str  # poisson | finite | constant
    mu: float = 0.0
    support: tuple[tuple[int, float], ...] = ()
    value: int = 0

    def __post_init__(self):
        if self.kind not in ("poisson", "finite", "constant"):
            raise ConfigError(f"unknown density kind {self.kind!r}")
        if self.kind == "poisson" and self.mu < 0:
            raise ConfigError("poisson mean must be nonnegative")
        if self.kind == "finite":
            if not self.support:
                raise ConfigError("finite law needs support entries")
            tot = sum(p for _, p in self.support)
            if abs(tot - 1.0) > 1e-9:
                raise ConfigError(f"finite law probabilities sum to {tot}, not 1")
            if any(v < 0 or p < 0 for v, p in self.support):
                raise ConfigError("finite law needs nonnegative values and masses")

    @property
    def mean(self) -> float:
        if self.kind == "poisson":
            return self.mu
        if self.kind == "constant":
            return float(self.value)
        return sum(v * p for v, p in self.support)

    def max_value(self) -> int:
        if self.kind == "constant":
            return self.value
        if self.kind == "finite":
            return max(v for v, p in self.support if p > 0)
        raise ConfigError("poisson law has unbounded support")

    def sample_at(self, seed: int, site: int) -> int:
        """Deterministic per-site draw; the same (seed, site) always gives
        the same count, which couples nested windows."""
        if self.kind == "constant":
            return self.value
        u = rng.site_uniform(seed, site)
        if self.kind == "finite":
            acc = 0.0
            for v, p in self.support:
                acc += p
                if u < acc:
                    return v
            return self.support[-1][0]
        # poisson inverse cdf
        k = 0
        p = math.exp(-self.mu)
        acc = p
        while u >= acc:
            k += 1
            p *= self.mu / k
            acc += p
            if k > 10_000:  # numerically impossible for desk-scale mu
                break
        return k


def sample_initial(spec: DensitySpec, lo: int, hi: int, seed: int) -> LatticeState:
    st = LatticeState.empty(lo, hi)
    for x in range(lo + 1, hi):
        st.eta[x - lo] = spec.sample_at(seed, x)
    return st


@dataclass
class ActivityCurve:
    windows: list[int]
    odometer_at_origin: list[int]
    topple_mode: str = "full"
    seed: int = 0


def activity_proxy(
    spec: DensitySpec,
    window_sizes: list[int],
    seed: int,
    policy: str = "queue",
    cap: int = DEFAULT_CAP,
) -> ActivityCurve:
    """Odometer at the origin of the full stabilization of [-L, L], for
    each window size L.

    Windows are coupled: site x carries the same initial count and the
    same instruction stream in every window, so the returned sequence is
    nondecreasing in L (a legal sequence for a window stays legal in any
    larger window).
    """
    if list(window_sizes) != sorted(set(window_sizes)) or not window_sizes:
        raise ConfigError("window sizes must be strictly increasing and nonempty")
    values = []
    for L in window_sizes:
        st = sample_initial(spec, -L, L, seed)
        stacks = StackSet(-L, L + 1, seed)
        _, odo = stabilize_full(st, stacks, policy=policy, cap=cap, policy_seed=seed)
        values.append(odo.at(0))
    return ActivityCurve(list(window_sizes), values, "full", seed)
