"""Single-block carpet process: paths, parity chain, auxiliary process.

Inside one block ``[0, a]`` the hot particle repeatedly leaves the hole
(the leftmost odd-parity site) and walks until it returns or reaches a
neighboring block at distance ``K - a - 1`` beyond the window edges.
Each hole-to-hole path updates the block parity by the parity of its
local times; the block freezes when no odd parity remains.

The auxiliary process mirrors the parity chain in ``{0, 1, ?}`` symbols,
revealing only what the paths' ranges and two forced-parity cases
determine; undetermined symbols are tracked in the Hidden ledger, one
entry per (path, site).

Two path backends exist: ``stack`` replays the carpet/hole dynamics of
``carpet.CarpetRun`` on a one-block layout (exact, instruction-level)
and ``sampler`` draws paths by law with the window walk (fast, used for
million-sample statistics).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .carpet import CarpetRun, FreeParticle, layout_stacks
from .core import LatticeState
from .errors import ConfigError, InvariantViolation
from .layout import BlockLayout

UNKNOWN = np.int8(2)  # the '?' symbol

KIND_EXCURSION = "Excursion"
KIND_LONG = "LongExcursion"
KIND_DOUBLE = "DoubleSided"
KIND_FAILED = "FailedRearrival"
KIND_FROZEN_RUN = "FrozenRun"


@dataclass
class Path:
    """One hole-to-hole (or frozen-run) composite path, summarized."""

    kind: str
    side: str  # left | right | none
    start: int
    length: int
    min_range: int  # clipped to one site beyond the walk window
    max_range: int
    parity: np.ndarray  # per-site local-time parity over [0, a]
    emissions: int = 0
    emission_sides: tuple[str, ...] = ()
    positions: list[int] | None = None

    def determined_sites(self, a: int) -> set[int]:
        """Block sites whose parity is forced by kind, side and range."""
        det: set[int] = set()
        if self.kind in (KIND_EXCURSION, KIND_LONG, KIND_DOUBLE):
            if (self.kind == KIND_DOUBLE or self.side == "left") and 0 <= self.start - 1 <= a:
                det.add(self.start - 1)
            if (self.kind == KIND_DOUBLE or self.side == "right") and 0 <= self.max_range <= a:
                det.add(self.max_range)
        return det


def parity_of_path(positions) -> tuple[dict[int, int], dict[int, int]]:
    """Local time and its parity for an explicit path: position ``u`` is
    counted for steps ``0 .. len-2`` (the final position is excluded)."""
    local: dict[int, int] = {}
    for u in range(len(positions) - 1):
        local[positions[u]] = local.get(positions[u], 0) + 1
    parity = {i: v % 2 for i, v in local.items()}
    return local, parity


def step_carpet(omega_tilde: np.ndarray, path: Path) -> np.ndarray:
    """Parity-chain update: add the path's local-time parity mod 2."""
    out = omega_tilde.copy()
    out ^= path.parity
    return out


# ---------------------------------------------------------------------------
# Auxiliary process
# ---------------------------------------------------------------------------

INIT_PATH = -1  # ledger index owning the question marks of the initial state


@dataclass
class AuxBlockState:
    """Partially revealed parity configuration with the Hidden ledger.

    Ledger entries may include the virtual site ``a + 1`` when the owning
    path ranged beyond the block top: the parity-uncertainty pairing that
    keeps hidden runs at length two then straddles the block edge, and
    dropping the partner would make the in-block run look like a
    singleton."""

    a: int
    symbols: np.ndarray  # int8 in {0, 1, 2=?}
    defined: bool = True
    hidden: dict[int, set[int]] = field(default_factory=dict)
    determined: dict[int, frozenset[int]] = field(default_factory=dict)
    # determined[s]: sites where path s's parity is forced by its kind,
    # side and range (evaluated during later inspections)

    @classmethod
    def base(cls, a: int) -> "AuxBlockState":
        return cls.epsilon_base(a, 1)

    @classmethod
    def epsilon_base(cls, a: int, leading_zeros: int) -> "AuxBlockState":
        if leading_zeros < 1 or leading_zeros > a:
            raise ConfigError("leading zero count out of range")
        sym = np.full(a + 1, UNKNOWN, dtype=np.int8)
        sym[:leading_zeros] = 0
        sym[leading_zeros] = 1
        st = cls(a, sym)
        rest = set(range(leading_zeros + 1, a + 2))  # a+1 virtual partner
        if rest:
            st.hidden[INIT_PATH] = rest
            st.determined[INIT_PATH] = frozenset()
        return st

    @classmethod
    def revealed(cls, omega_tilde: np.ndarray) -> "AuxBlockState":
        return cls(len(omega_tilde) - 1, omega_tilde.astype(np.int8).copy())

    def leftmost_one(self) -> int:
        ones = np.nonzero(self.symbols == 1)[0]
        return int(ones[0]) if len(ones) else self.a + 1

    def n_nonzero(self) -> int:
        return int((self.symbols != 0).sum())

    def is_base(self) -> bool:
        return (
            self.symbols[0] == 0
            and self.symbols[1] == 1
            and bool((self.symbols[2:] == UNKNOWN).all())
        )

    def is_exit(self) -> bool:
        return bool((self.symbols == 0).all())

    def restart_from(self, omega_tilde: np.ndarray) -> None:
        """Full reveal of the true parity state; clears the ledger."""
        self.symbols = omega_tilde.astype(np.int8).copy()
        self.hidden.clear()
        self.determined.clear()
        self.defined = True


def step_aux(aux: AuxBlockState, path: Path, omega_next: np.ndarray, t: int) -> int:
    """One reveal step of the auxiliary process after chain step ``t``
    with composite path ``path`` and true post-step parity ``omega_next``.

    Returns the refresh loss: the number of nonzero symbols destroyed by
    the find-leftmost-one and inspect phases.  Marks the state undefined
    on failed re-arrivals and frozen runs.
    """
    if not aux.defined:
        raise InvariantViolation("stepping an undefined auxiliary state")
    if path.kind in (KIND_FAILED, KIND_FROZEN_RUN):
        aux.defined = False
        return 0
    a = aux.a
    L = path.start
    # -- refresh the range with question marks ---------------------------
    lo = max(path.min_range, 0)
    hi = min(path.max_range, a)
    fresh: set[int] = set()
    for i in range(lo, hi + 1):
        if i == L:
            continue
        if path.max_range == L + 1 and i == L + 1:
            if aux.symbols[i] != UNKNOWN:
                aux.symbols[i] ^= 1  # forced single visit: parity one
        elif path.min_range == L - 1 and i == L - 1:
            if aux.symbols[i] != UNKNOWN:
                aux.symbols[i] ^= 1
        else:
            aux.symbols[i] = UNKNOWN
            fresh.add(i)
    aux.symbols[L] = 0
    if fresh:
        if path.max_range > a:
            fresh.add(a + 1)  # virtual partner beyond the block top
        aux.hidden[t] = fresh
        aux.determined[t] = frozenset(path.determined_sites(a))
    n_star = aux.n_nonzero()
    # -- find the leftmost one -------------------------------------------
    ones = np.nonzero(omega_next == 1)[0]
    l_new = int(ones[0]) if len(ones) else a + 1
    if l_new > a:
        aux.symbols[:] = 0
        aux.hidden.clear()
        aux.determined.clear()
        return n_star
    aux.symbols[:l_new] = 0
    aux.symbols[l_new] = 1
    for s in list(aux.hidden):
        kept = {i for i in aux.hidden[s] if i > l_new}
        if any(i <= a for i in kept):
            aux.hidden[s] = kept
        else:
            del aux.hidden[s]
            aux.determined.pop(s, None)
    # -- inspect the bit just right of the leftmost one -------------------
    j = l_new + 1
    if j <= a:
        for s in list(aux.hidden):
            if j in aux.hidden[s] and j in aux.determined[s]:
                aux.hidden[s].discard(j)
                if not any(i <= aux.a for i in aux.hidden[s]):
                    del aux.hidden[s]
                    aux.determined.pop(s, None)
        if any(j in sites for sites in aux.hidden.values()):
            aux.symbols[j] = UNKNOWN
        else:
            aux.symbols[j] = omega_next[j]
    return n_star - aux.n_nonzero()


def aux_invariant_violations(aux: AuxBlockState, omega_tilde: np.ndarray) -> list[str]:
    """Exact structural checks: known symbols match the true parity, the
    leftmost ones agree, question marks appear iff a ledger entry covers
    them, and each path's hidden set splits around the leftmost one into
    runs that are empty or contiguous of size at least two (the run may
    close with the virtual site just beyond the block top)."""
    out = []
    if not aux.defined:
        return out
    a = aux.a
    known = aux.symbols != UNKNOWN
    if not np.array_equal(aux.symbols[known], omega_tilde[known]):
        out.append("known symbol disagrees with the true parity")
    ones = np.nonzero(omega_tilde == 1)[0]
    l_true = int(ones[0]) if len(ones) else a + 1
    if aux.leftmost_one() != l_true:
        out.append(f"leftmost one mismatch: {aux.leftmost_one()} vs {l_true}")
    covered: set[int] = set()
    for sites in aux.hidden.values():
        covered |= {i for i in sites if i <= a}
    qmarks = set(int(i) for i in np.nonzero(aux.symbols == UNKNOWN)[0])
    if qmarks != covered:
        out.append("question marks and ledger coverage disagree")
    L = aux.leftmost_one()
    for s, sites in aux.hidden.items():
        # every maximal run of hidden sites is a pair or longer: an
        # undetermined parity always comes with an undetermined neighbor
        # from the same path (the run may close on the virtual top site)
        run = 0
        prev = None
        for i in sorted(sites):
            if prev is not None and i == prev + 1:
                run += 1
            else:
                if run == 1:
                    out.append(f"ledger entry {s} holds an isolated hidden site near {prev}")
                run = 1
            prev = i
        if run == 1:
            out.append(f"ledger entry {s} holds an isolated hidden site near {prev}")
        if any(i == L for i in sites):
            out.append(f"ledger entry {s} covers the leftmost one")
    for i in range(aux.leftmost_one()):
        if aux.symbols[i] != 0:
            out.append("normal form broken left of the leftmost one")
            break
    return out


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------


class PathSampler:
    """Law-exact composite paths via the window walk."""

    def __init__(self, a: int, K: int, seed: int, respawn: str = "right", cap: int = 10**12):
        if K < a + 2:
            raise ConfigError("need K >= a + 2")
        if respawn not in ("right", "left", "alternate"):
            raise ConfigError(f"unknown respawn policy {respawn!r}")
        self.a = a
        self.K = K
        self.qden = K - a - 1
        self.respawn = respawn
        self.cap = cap
        self._state = np.array([rng.mix64(seed ^ 0x51B7)], dtype=np.uint64)
        self._alt = False

    def _respawn_site(self) -> int:
        if self.respawn == "right":
            return self.a
        if self.respawn == "left":
            return 0
        self._alt = not self._alt
        return self.a if self._alt else 0

    def sample_path(self, L: int, frozen: bool = False) -> Path:
        """One composite path from hole ``L`` (or a frozen run from the
        respawn site when ``frozen``), folding failed re-arrival attempts
        into the returned composite."""
        a = self.a
        flips = np.zeros(a + 1, dtype=np.int8)
        if frozen:
            start = self._respawn_site()
            out, steps, mn, mx = kernels.window_walk(
                self._state, start, kernels.NO_STOP, -1, a + 1, self.qden, flips, a, self.cap
            )
            side = "left" if out == kernels.EMIT_LEFT else "right"
            return Path(KIND_FROZEN_RUN, side, start, steps, mn, mx, flips, 1, (side,))
        if not (0 <= L <= a):
            raise ConfigError("hole must be a block site")
        sides: list[str] = []
        total = 0
        mn = mx = L
        pos = L
        arriving_from = "none"
        while True:
            if sides and pos == L:
                out = kernels.ARRIVED  # respawned input landed in the hole
                s, m1, m2 = 0, pos, pos
            else:
                out, s, m1, m2 = kernels.window_walk(
                    self._state, pos, L, -1, a + 1, self.qden, flips, a, self.cap
                )
            total += s
            mn = min(mn, m1)
            mx = max(mx, m2)
            if out == kernels.ARRIVED:
                break
            sides.append("left" if out == kernels.EMIT_LEFT else "right")
            pos = self._respawn_site()
            arriving_from = "right" if pos == a else "left"
        if not sides:
            kind = KIND_EXCURSION
            side = "right" if mx > L else "left"
        elif len(sides) > 1:
            kind = KIND_FAILED
            side = sides[0]
        else:
            side = sides[0]
            kind = KIND_LONG if arriving_from == side else KIND_DOUBLE
        return Path(kind, side, L, total, mn, mx, flips, len(sides), tuple(sides))


def sample_path(L: int, a: int, K: int, seed: int, frozen: bool = False, respawn: str = "right") -> Path:
    """Convenience one-shot sampler (fresh stream)."""
    return PathSampler(a, K, seed, respawn).sample_path(L, frozen=frozen)


# ---------------------------------------------------------------------------
# The one-block chain driver
# ---------------------------------------------------------------------------


@dataclass
class BlockStats:
    a: int
    K: int
    seed: int
    steps: int
    n_trace: np.ndarray
    l_trace: np.ndarray
    losses: np.ndarray
    base_hits: int
    exit_hits: int
    first_base: int
    first_exit: int
    kind_counts: dict[str, int]
    emissions_left: int
    emissions_right: int
    freezes: int
    unfreezes: int
    failed_rearrivals: int
    attempted_emissions: int
    aux_violations: int
    e_of_k: list[int]
    left_of_k: list[int]
    f_of_k: list[int]


class OneBlockChain:
    """Sampler-backend chain with the coupled auxiliary process."""

    def __init__(
        self,
        a: int,
        K: int,
        seed: int,
        init: str = "base",
        epsilon: float = 1.0 / 200.0,
        respawn: str = "right",
        omega0: np.ndarray | None = None,
        track_aux: bool = True,
        check_aux: bool = True,
    ):
        self.a, self.K = a, K
        self.sampler = PathSampler(a, K, seed, respawn)
        bits = np.array(
            [rng.stream_bit(rng.stream_key(seed, rng.DOMAIN_INIT, i, 0), 0) for i in range(a + 1)]
        )
        omega = ((bits + 1) // 2).astype(np.int8)
        if init == "base":
            omega[0] = 0
            omega[1] = 1
            self.aux = AuxBlockState.base(a)
        elif init == "epsilon-base":
            lead = max(1, int(epsilon * a))
            omega[:lead] = 0
            omega[lead] = 1
            self.aux = AuxBlockState.epsilon_base(a, lead)
        elif init == "exit":
            omega[:] = 0
            self.aux = AuxBlockState.revealed(omega)
        elif init == "revealed":
            self.aux = AuxBlockState.revealed(omega)
        elif init == "explicit":
            if omega0 is None:
                raise ConfigError("explicit init needs omega0")
            omega = np.asarray(omega0, dtype=np.int8).copy()
            self.aux = AuxBlockState.revealed(omega)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.omega = omega
        self.track_aux = track_aux
        self.check_aux = check_aux
        self.t = 0
        self.frozen = self._leftmost_one() > a
        self.tallies = {
            KIND_EXCURSION: 0,
            KIND_LONG: 0,
            KIND_DOUBLE: 0,
            KIND_FAILED: 0,
            KIND_FROZEN_RUN: 0,
        }
        self.emissions_left = 0
        self.emissions_right = 0
        self.freezes = 0
        self.unfreezes = 0
        self.failed_rearrivals = 0
        self.attempted = 0
        self.aux_violations = 0
        self.losses: list[int] = []
        self._restart_pending = False

    def _leftmost_one(self) -> int:
        ones = np.nonzero(self.omega == 1)[0]
        return int(ones[0]) if len(ones) else self.a + 1

    def step(self) -> Path:
        """Advance the chain by one composite path (or one frozen run)."""
        if self.track_aux and self._restart_pending:
            self.aux.restart_from(self.omega)
            self._restart_pending = False
        L = self._leftmost_one()
        if self.frozen:
            path = self.sampler.sample_path(0, frozen=True)
        else:
            path = self.sampler.sample_path(L)
        self.tallies[path.kind] += 1
        if path.kind == KIND_FAILED:
            self.failed_rearrivals += path.emissions - 1
        self.omega ^= path.parity
        # attempted emissions complete at each in-path emission, plus at a
        # freeze (hole arrival with all parities even)
        self.attempted += path.emissions
        self.emissions_left += sum(1 for s in path.emission_sides if s == "left")
        self.emissions_right += sum(1 for s in path.emission_sides if s == "right")
        new_l = self._leftmost_one()
        froze_now = False
        if self.frozen:
            if new_l <= self.a:
                self.frozen = False
                self.unfreezes += 1
        elif new_l > self.a:
            self.frozen = True
            self.freezes += 1
            self.attempted += 1
            froze_now = True
        if self.track_aux:
            if self.aux.defined:
                loss = step_aux(self.aux, path, self.omega, self.t)
                if path.kind in (KIND_EXCURSION, KIND_LONG, KIND_DOUBLE) and not froze_now:
                    self.losses.append(loss)
                if not self.aux.defined:
                    self._restart_pending = True
                elif self.check_aux:
                    bad = aux_invariant_violations(self.aux, self.omega)
                    if bad:
                        self.aux_violations += len(bad)
                        raise InvariantViolation("; ".join(bad))
            else:
                self._restart_pending = True
        self.t += 1
        return path


def run_block_chain(
    a: int,
    K: int,
    init: str = "base",
    horizon: int = 1000,
    seed: int = 0,
    respawn: str = "right",
    epsilon: float = 1.0 / 200.0,
    omega0=None,
    stop_at_exit: bool = False,
    track_aux: bool = True,
) -> BlockStats:
    """Drive the one-block chain for ``horizon`` composite steps and
    collect trajectory statistics of the auxiliary process."""
    chain = OneBlockChain(a, K, seed, init=init, epsilon=epsilon, respawn=respawn, omega0=omega0, track_aux=track_aux)
    n_trace = np.zeros(horizon + 1, dtype=np.int64)
    l_trace = np.zeros(horizon + 1, dtype=np.int64)
    base_hits = 0
    exit_hits = 0
    first_base = -1
    first_exit = -1
    e_of_k: list[int] = []
    left_of_k: list[int] = []
    f_of_k: list[int] = []
    if track_aux:
        n_trace[0] = chain.aux.n_nonzero()
        l_trace[0] = chain.aux.leftmost_one()
        if chain.aux.is_exit():
            exit_hits += 1
            first_exit = 0
    for t in range(1, horizon + 1):
        freezes_before = chain.freezes
        lefts_before = chain.emissions_left
        path = chain.step()
        if track_aux and chain.aux.defined:
            n_trace[t] = chain.aux.n_nonzero()
            l_trace[t] = chain.aux.leftmost_one()
            if chain.aux.is_base():
                base_hits += 1
                if first_base < 0:
                    first_base = t
            if chain.aux.is_exit():
                exit_hits += 1
                if first_exit < 0:
                    first_exit = t
        else:
            n_trace[t] = -1
            l_trace[t] = -1
        left_running = lefts_before
        for side in path.emission_sides:
            if side == "left":
                left_running += 1
            e_of_k.append(t)
            left_of_k.append(left_running)
            f_of_k.append(0)
        if chain.freezes > freezes_before:
            e_of_k.append(t)
            left_of_k.append(left_running)
            f_of_k.append(1)
        if stop_at_exit and chain.frozen:
            n_trace = n_trace[: t + 1]
            l_trace = l_trace[: t + 1]
            break
    return BlockStats(
        a=a,
        K=K,
        seed=seed,
        steps=chain.t,
        n_trace=n_trace,
        l_trace=l_trace,
        losses=np.asarray(chain.losses, dtype=np.int64),
        base_hits=base_hits,
        exit_hits=exit_hits,
        first_base=first_base,
        first_exit=first_exit,
        kind_counts=dict(chain.tallies),
        emissions_left=chain.emissions_left,
        emissions_right=chain.emissions_right,
        freezes=chain.freezes,
        unfreezes=chain.unfreezes,
        failed_rearrivals=chain.failed_rearrivals,
        attempted_emissions=chain.attempted,
        aux_violations=chain.aux_violations,
        e_of_k=e_of_k,
        left_of_k=left_of_k,
        f_of_k=f_of_k,
    )


# ---------------------------------------------------------------------------
# Attempted emissions, stack backend
# ---------------------------------------------------------------------------


@dataclass
class EmissionRecord:
    k: int
    left: int  # cumulative left emissions after attempt k
    frozen: int  # 0/1 frozen state of the block after attempt k
    e: int  # cumulative parity-chain steps after attempt k
    side: int  # -1 left emission, +1 right, 0 freeze


def attempted_emissions(
    a: int,
    K: int,
    seed: int,
    k_max: int,
    omega_seed: int | None = None,
    cap: int = 10**9,
    check: str = "event",
) -> list[EmissionRecord]:
    """Stack-driven one-block run re-parameterized by attempted
    emissions: a fresh particle is injected at the block's right end
    whenever no thawed particle remains, and each hot designation runs to
    a freeze or an emission."""
    lay = BlockLayout(a, K, 1)
    lat = LatticeState.empty(lay.lo, lay.hi)
    lat.eta[1:-1] = 1
    oseed = seed if omega_seed is None else omega_seed
    for x in range(lat.lo + 1, lat.hi):
        if rng.site_uniform(oseed, x, index=5) < 0.5:
            lat.omega[x - lat.lo] = 1
    stacks = layout_stacks(lay, seed)
    run = CarpetRun(lay, lat, stacks, cap=cap, check=check)
    records: list[EmissionRecord] = []
    chain_steps = 0
    right_end = lay.block_right(0)
    while len(records) < k_max:
        ev = run.step()
        if ev is None:
            run.inject(right_end)
            continue
        # every hole arrival is one parity-chain step; a frozen run is one
        # more (it updates the parity without returning to the hole)
        chain_steps += ev.excursions + (1 if ev.frozen_run else 0)
        side = 0 if ev.kind == "Froze" else ev.emitted_side
        records.append(
            EmissionRecord(
                k=len(records) + 1,
                left=int(run.left_emissions[0]),
                frozen=1 if run.frozen_pid[0] >= 0 else 0,
                e=chain_steps,
                side=side,
            )
        )
    return records


def chain_tallies(a: int, K: int, emissions: int, seed: int, init_frozen: bool = False, max_steps: int = 10**12):
    """Bulk sampler-backend tallies (see kernels.chain_tally_kernel)."""
    t = kernels.chain_tally_kernel(a, K, emissions, seed, 1 if init_frozen else 0, max_steps)
    return {
        "attempted": int(t[0]),
        "left": int(t[1]),
        "right": int(t[2]),
        "freezes": int(t[3]),
        "unfreezes": int(t[4]),
        "failed_rearrivals": int(t[5]),
        "chain_steps": int(t[6]),
        "walk_steps": int(t[7]),
        "stagnant_pairs": int(t[8]),
        "pairs": int(t[9]),
        "plain_excursions": int(t[10]),
        "capped": bool(t[11]),
    }


# ---------------------------------------------------------------------------
# Exact-law oracles over paths
# ---------------------------------------------------------------------------


def reach_law_counts(n_samples: int, ell_max: int, seed: int) -> np.ndarray:
    return kernels.reach_law_kernel(n_samples, ell_max, seed)


def even_visit_fraction(n_samples: int, seed: int) -> float:
    return kernels.even_visit_kernel(n_samples, seed) / n_samples


def oracle_bounce_law(n_samples: int, seed: int, i_site: int = 2, hist_size: int = 64):
    """Empirical bounce-count histogram between i and i+1 within right
    excursions reaching i+2, plus the odd-count fraction."""
    if n_samples < 10**4:
        raise ConfigError("bounce law needs at least 1e4 samples to be meaningful")
    hist, n_odd, n_total = kernels.bounce_law_kernel(n_samples, i_site, seed, hist_size)
    return hist, n_odd / n_total, n_total
