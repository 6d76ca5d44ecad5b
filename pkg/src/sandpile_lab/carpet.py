"""Carpet/hole toppling procedure on a block layout.

The interval is tiled by blocks of width ``a`` with period ``K``.  One
site per block is the hole; every other interior site carries exactly
one immobile carpet particle.  The remaining (free) particles are
toppled one at a time: the hot particle walks until it returns to the
hole of its block (the hole then relocates to the leftmost odd-parity
site, or the block freezes when no odd parity remains) or until it
reaches the nearest site of a neighboring block, where it rests thawed.
Blocks holding a frozen particle run their hot particle straight to a
neighboring block and may unfreeze afterwards.

Partial stabilization is reached when no thawed particle remains.  The
instruction-level walking happens in compiled kernels; this module owns
holes, roles, events, counters and the structural invariants, with the
particle bookkeeping held in flat arrays so the per-event invariant
sweep stays cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .core import LatticeState
from .errors import CapExceeded, ConfigError, InvariantViolation
from .layout import BlockLayout
from .stacks import StackSet

DEFAULT_CAP = 10**9

_DUMMY_FLIPS = np.zeros(1, dtype=np.int8)

FROZEN = 1
PARKED = 2


# ---------------------------------------------------------------------------
# Valid configurations and holes
# ---------------------------------------------------------------------------


def validate_config(lattice: LatticeState, layout: BlockLayout) -> bool:
    """True when the configuration is one particle per interior site,
    except at most one empty site per block, with surplus particles only
    at block endpoints."""
    if lattice.lo != layout.lo or lattice.hi != layout.hi:
        return False
    eta = lattice.eta
    sites = np.arange(lattice.lo, lattice.hi + 1)
    r = (sites - layout.origin) % layout.K
    b = (sites - layout.origin) // layout.K
    in_block = (r <= layout.a) & (b >= 0) & (b < layout.n)
    interior = np.zeros_like(in_block)
    interior[1:-1] = True
    if (eta[interior & ~in_block] != 1).any():
        return False
    surplus_ok = (r == 0) | (r == layout.a)
    if (eta[interior & in_block & ~surplus_ok] > 1).any():
        return False
    for i in range(layout.n):
        lo = layout.block_left(i) - lattice.lo
        if (eta[lo : lo + layout.a + 1] == 0).sum() > 1:
            return False
    return True


def locate_holes(lattice: LatticeState, layout: BlockLayout):
    """Hole site of each block plus per-block frozen designation.

    Preference order inside a block: the empty site; else the leftmost
    odd-parity site; else the right endpoint, which then hosts a frozen
    free particle.
    """
    if not validate_config(lattice, layout):
        raise ConfigError("configuration is not valid for the carpet/hole procedure")
    holes = np.empty(layout.n, dtype=np.int64)
    frozen = np.zeros(layout.n, dtype=bool)
    for i in range(layout.n):
        lo = layout.block_left(i) - lattice.lo
        eta = lattice.eta[lo : lo + layout.a + 1]
        omega = lattice.omega[lo : lo + layout.a + 1]
        empty = np.nonzero(eta == 0)[0]
        odd = np.nonzero(omega == 1)[0]
        if len(empty):
            holes[i] = layout.block_left(i) + int(empty[0])
        elif len(odd):
            holes[i] = layout.block_left(i) + int(odd[0])
        else:
            holes[i] = layout.block_right(i)
            frozen[i] = True
    return holes, frozen


@dataclass
class FreeParticle:
    pid: int
    site: int
    frozen: bool = False
    parked: bool = False


@dataclass
class Event:
    kind: str  # Froze | Emit | Unfreeze | FailedRearrival
    block: int
    site_from: int
    site_to: int
    steps: int = 0
    excursions: int = 0
    emitted_side: int = 0  # -1 left, +1 right, 0 none
    frozen_run: bool = False  # the hot ran through a frozen block


@dataclass
class CarpetReport:
    layout: dict
    frozen_per_block: np.ndarray
    left_emissions: np.ndarray
    right_emissions: np.ndarray
    attempted_emissions: np.ndarray
    freeze_events: np.ndarray
    unfreeze_events: int
    failed_rearrivals: int
    boundary_left: int
    boundary_right: int
    parked_right: int
    free_initial: int
    odometer: np.ndarray
    steps: int
    events: int
    invariant_violations: int
    event_log: list[Event] = field(default_factory=list)

    def frozen_count(self, n0: int = 0, n1: int | None = None) -> int:
        if n1 is None:
            n1 = len(self.frozen_per_block) - 1
        return int(self.frozen_per_block[n0 : n1 + 1].sum())

    @property
    def l_vector(self) -> np.ndarray:
        """Realized left-flow counters (L_0, ..., L_{n-1}, 0)."""
        return np.concatenate([self.left_emissions, [0]])


class CarpetRun:
    """Stateful driver for the toppling loop.

    ``active_hi_block`` restricts the dynamics to blocks 0..j: particles
    emitted right from block j are parked and no block beyond j is ever
    selected, which realizes the coarse-grained counter runs.
    """

    def __init__(
        self,
        layout: BlockLayout,
        lattice: LatticeState,
        stacks: StackSet,
        active_hi_block: int | None = None,
        cap: int = DEFAULT_CAP,
        record_events: bool = False,
        check: str = "event",  # event | end | off
    ):
        if stacks.layout is None or stacks.layout.describe() != layout.describe():
            raise ConfigError("stacks were not created for this layout")
        if stacks.lo > lattice.lo or stacks.hi < lattice.hi + 1:
            raise ConfigError("stacks must cover the closed working interval")
        if check not in ("event", "end", "off"):
            raise ConfigError(f"unknown check level {check!r}")
        self.layout = layout
        self.lattice = lattice
        self.stacks = stacks
        self.cap = cap
        self.record_events = record_events
        self.check = check
        self.active_hi = layout.n - 1 if active_hi_block is None else active_hi_block
        if not (0 <= self.active_hi < layout.n):
            raise ConfigError("active block range out of bounds")

        off = lattice.lo - stacks.lo
        n_sites = lattice.hi - lattice.lo + 1
        self._keys = stacks.keys[off : off + n_sites]
        self._consumed = stacks.consumed[off : off + n_sites]

        holes, frozen_flags = locate_holes(lattice, layout)
        self.holes = holes
        # particle store: parallel arrays with swap-delete removal
        self._pid = np.empty(16, dtype=np.int64)
        self._site = np.empty(16, dtype=np.int64)
        self._flag = np.empty(16, dtype=np.int8)
        self._np = 0
        self._next_pid = 0
        self.frozen_pid = np.full(layout.n, -1, dtype=np.int64)
        self.had_hot = np.zeros(layout.n, dtype=bool)
        self._assign_roles(frozen_flags)

        self.odometer = np.zeros(n_sites, dtype=np.int64)
        self.left_emissions = np.zeros(layout.n, dtype=np.int64)
        self.right_emissions = np.zeros(layout.n, dtype=np.int64)
        self.attempted = np.zeros(layout.n, dtype=np.int64)
        self.freezes = np.zeros(layout.n, dtype=np.int64)
        self.unfreezes = 0
        self.failed_rearrivals = 0
        self.boundary_left = 0
        self.boundary_right = 0
        self.parked_right = 0
        self.steps = 0
        self.events = 0
        self.event_log: list[Event] = []
        self.free_initial = self._np
        self._mass0 = lattice.total_mass
        self._check_now()

    # -- particle store -----------------------------------------------------
    def _grow(self) -> None:
        cap = 2 * len(self._pid)
        for name in ("_pid", "_site", "_flag"):
            arr = getattr(self, name)
            new = np.empty(cap, dtype=arr.dtype)
            new[: self._np] = arr[: self._np]
            setattr(self, name, new)

    def _add_particle(self, site: int, flag: int = 0) -> int:
        if self._np == len(self._pid):
            self._grow()
        i = self._np
        self._pid[i] = self._next_pid
        self._site[i] = site
        self._flag[i] = flag
        self._next_pid += 1
        self._np += 1
        return i

    def _remove_particle(self, idx: int) -> None:
        last = self._np - 1
        for arr in (self._pid, self._site, self._flag):
            arr[idx] = arr[last]
        self._np = last

    def _idx_of_pid(self, pid: int) -> int:
        hits = np.nonzero(self._pid[: self._np] == pid)[0]
        if not len(hits):
            raise InvariantViolation(f"lost track of particle {pid}")
        return int(hits[0])

    @property
    def free(self) -> list[FreeParticle]:
        """Snapshot of the free particles (copy; mutations don't stick)."""
        return [
            FreeParticle(
                int(self._pid[i]),
                int(self._site[i]),
                bool(self._flag[i] & FROZEN),
                bool(self._flag[i] & PARKED),
            )
            for i in range(self._np)
        ]

    # -- construction --------------------------------------------------------
    def _assign_roles(self, frozen_flags) -> None:
        lay = self.layout
        lat = self.lattice
        carpet = np.ones(lat.hi - lat.lo + 1, dtype=np.int64)
        carpet[0] = carpet[-1] = 0
        carpet[self.holes - lat.lo] = 0
        surplus = lat.eta - carpet
        if (surplus[1:-1] < 0).any():
            raise InvariantViolation("missing carpet particle")
        for idx in np.nonzero(surplus[1:-1] > 0)[0]:
            x = int(idx) + lat.lo + 1
            b = lay.block_of(x)
            if b == -1:
                raise InvariantViolation(f"free particle in transit at {x}")
            flag = PARKED if b > self.active_hi else 0
            for _ in range(int(surplus[idx + 1])):
                self._add_particle(x, flag)
        for i in range(lay.n):
            if frozen_flags[i]:
                right = lay.block_right(i)
                cands = np.nonzero(
                    (self._site[: self._np] == right)
                    & (self._flag[: self._np] & FROZEN == 0)
                )[0]
                if not len(cands):
                    raise InvariantViolation(
                        f"block {i} should host a frozen particle at its right end"
                    )
                k = int(cands[np.argmin(self._pid[cands])])
                self._flag[k] |= FROZEN
                self.frozen_pid[i] = self._pid[k]

    # -- hot selection -----------------------------------------------------
    def select_hot(self):
        """Leftmost active block holding a thawed particle; inside it the
        hole resident wins, then lowest site, then lowest id.  None at
        partial stabilization."""
        n = self._np
        if n == 0:
            return None
        lay = self.layout
        site = self._site[:n]
        thawed = self._flag[:n] == 0
        if not thawed.any():
            return None
        rel = site - lay.origin
        b = rel // lay.K
        r = rel - b * lay.K
        bad = thawed & ((r > lay.a) | (b < 0) | (b > self.active_hi))
        if bad.any():
            raise InvariantViolation(
                f"thawed particle off the active blocks at {site[bad][0]}"
            )
        in_hole = site == self.holes[np.clip(b, 0, lay.n - 1)]
        # lexicographic (block, not-in-hole, site, pid) packed into int64
        key = (
            ((b << 1) | (~in_hole).astype(np.int64)) * (1 << 44)
            + (site - lay.lo) * (1 << 22)
            + self._pid[:n]
        )
        key[~thawed] = np.iinfo(np.int64).max
        k = int(np.argmin(key))
        return int(b[k]), k

    # -- the loop ------------------------------------------------------------
    def step(self):
        """One attempted emission: select the hot particle and run it to
        a freeze or an emission.  Returns the Event, or None when no
        thawed particle remains."""
        sel = self.select_hot()
        if sel is None:
            return None
        block, hot_idx = sel
        hot_pid = int(self._pid[hot_idx])
        lay = self.layout
        self.had_hot[block] = True
        lt, rt = lay.left_target(block), lay.right_target(block)
        bs, be = lay.block_left(block), lay.block_right(block)
        lo = self.lattice.lo
        start = int(self._site[hot_idx])
        frozen_block = self.frozen_pid[block] >= 0

        if frozen_block:
            status, end, steps = kernels.hot_walk(
                self.lattice.eta,
                self.lattice.omega,
                self._consumed,
                self._keys,
                self.odometer,
                _DUMMY_FLIPS,
                False,
                start,
                kernels.NO_STOP,
                lt,
                bs,
                be,
                rt,
                lo,
                self.cap,
                self.steps,
            )
            excursions = 0
        else:
            status, end, steps, excursions, _reloc = kernels.hot_episode(
                self.lattice.eta,
                self.lattice.omega,
                self._consumed,
                self._keys,
                self.odometer,
                self.holes,
                block,
                start,
                lt,
                bs,
                be,
                rt,
                lo,
                self.cap,
                self.steps,
            )
        self.steps += steps
        if status == kernels.ILLEGAL:
            raise InvariantViolation(
                f"illegal half-toppling at site {end} (block {block}); aborting replica"
            )
        if status == kernels.CAP_HIT:
            raise CapExceeded(f"carpet run exceeded toppling cap {self.cap}")

        self.attempted[block] += 1
        self.events += 1
        if status == kernels.FROZE:
            # hot joins the carpet in the hole it returned to; the carpet
            # particle at the block's right end becomes the frozen one
            self._remove_particle(hot_idx)
            k = self._add_particle(be, FROZEN)
            self.frozen_pid[block] = self._pid[k]
            self.freezes[block] += 1
            event = Event("Froze", block, start, be, steps, excursions)
        else:
            side = -1 if status == kernels.EMIT_LEFT else 1
            if side < 0:
                self.left_emissions[block] += 1
            else:
                self.right_emissions[block] += 1
            self._site[hot_idx] = end
            if end == self.lattice.lo:
                self.boundary_left += 1
                self._remove_particle(hot_idx)
            elif end == self.lattice.hi:
                self.boundary_right += 1
                self._remove_particle(hot_idx)
            elif side > 0 and block == self.active_hi and self.active_hi < lay.n - 1:
                self.parked_right += 1
                self._flag[hot_idx] |= PARKED
            # a hot particle that left a block endpoint and was emitted
            # without ever touching the hole failed to re-arrive
            if not frozen_block and excursions == 0 and start != self.holes[block]:
                kind = "FailedRearrival"
                self.failed_rearrivals += 1
            else:
                kind = "Emit"
            event = Event(kind, block, start, end, steps, excursions, side, frozen_block)
            if frozen_block:
                self._try_unfreeze(block)
        if self.record_events:
            self.event_log.append(event)
        if self.check == "event":
            self._check_now()
        return event

    def inject(self, site: int) -> int:
        """Add a fresh thawed free particle (an input from outside the
        working interval); conservation baselines shift with it.  Returns
        the particle id."""
        if self.layout.block_of(site) == -1:
            raise ConfigError("injections must land on a block site")
        self.lattice.eta[site - self.lattice.lo] += 1
        k = self._add_particle(site)
        self.free_initial += 1
        self._mass0 += 1
        return int(self._pid[k])

    def _try_unfreeze(self, block: int) -> None:
        lay = self.layout
        lo = lay.block_left(block) - self.lattice.lo
        odd = np.nonzero(self.lattice.omega[lo : lo + lay.a + 1] == 1)[0]
        if not len(odd):
            return
        y = lay.block_left(block) + int(odd[0])
        # frozen particle joins the carpet at the right end; the carpet
        # particle at the leftmost odd-parity site thaws; hole moves there
        self._remove_particle(self._idx_of_pid(int(self.frozen_pid[block])))
        self.frozen_pid[block] = -1
        self.holes[block] = y
        self._add_particle(y)
        self.unfreezes += 1
        if self.record_events:
            self.event_log.append(Event("Unfreeze", block, lay.block_right(block), y))

    def run(self) -> CarpetReport:
        while True:
            if self.step() is None:
                break
        if self.check != "off":
            self._check_now(final=True)
        return self.report()

    def report(self) -> CarpetReport:
        return CarpetReport(
            layout=self.layout.describe(),
            frozen_per_block=(self.frozen_pid >= 0).astype(np.int64),
            left_emissions=self.left_emissions.copy(),
            right_emissions=self.right_emissions.copy(),
            attempted_emissions=self.attempted.copy(),
            freeze_events=self.freezes.copy(),
            unfreeze_events=self.unfreezes,
            failed_rearrivals=self.failed_rearrivals,
            boundary_left=self.boundary_left,
            boundary_right=self.boundary_right,
            parked_right=self.parked_right,
            free_initial=self.free_initial,
            odometer=self.odometer.copy(),
            steps=self.steps,
            events=self.events,
            invariant_violations=0,
            event_log=self.event_log,
        )

    # -- invariants ---------------------------------------------------------
    def _check_now(self, final: bool = False) -> None:
        lay = self.layout
        lat = self.lattice
        n = self._np
        n_sites = lat.hi - lat.lo + 1
        holes_idx = self.holes - lat.lo
        # (P1) one hole per block, inside its block
        block_lo = lay.origin + np.arange(lay.n, dtype=np.int64) * lay.K
        if ((self.holes < block_lo) | (self.holes > block_lo + lay.a)).any():
            raise InvariantViolation("a hole left its block")
        # eta decomposes as one carpet per non-hole site plus free particles
        site = self._site[:n]
        flag = self._flag[:n]
        free_at = np.bincount(site - lat.lo, minlength=n_sites)
        carpet = np.ones(n_sites, dtype=np.int64)
        carpet[0] = carpet[-1] = 0
        carpet[holes_idx] = 0
        diff = carpet + free_at - lat.eta
        diff[0] = diff[-1] = 0
        if diff.any():
            bad = int(np.nonzero(diff)[0][0]) + lat.lo
            raise InvariantViolation(
                f"carpet decomposition failed at site {bad}: eta={lat.eta_at(bad)}"
            )
        # (P4) free particles rest in holes or at block endpoints; (F2)
        # adds that inside an activated block only the hole qualifies
        rel = site - lay.origin
        b = rel // lay.K
        r = rel - b * lay.K
        if ((r > lay.a) | (b < 0) | (b >= lay.n)).any():
            raise InvariantViolation("free particle resting in a transit region")
        in_hole = site == self.holes[b]
        at_end = (r == 0) | (r == lay.a)
        if (~(in_hole | at_end)).any():
            raise InvariantViolation("free particle at an illegal rest site")
        stale = self.had_hot[b] & ~(at_end | in_hole)
        if stale.any():
            raise InvariantViolation(
                "particle strands mid-block after its block's first hot designation"
            )
        # (P5) frozen blocks anchor the hole and the frozen particle right
        fb = np.nonzero(self.frozen_pid >= 0)[0]
        for i in fb:
            k = self._idx_of_pid(int(self.frozen_pid[i]))
            if self._site[k] != lay.block_right(i) or self.holes[i] != lay.block_right(i):
                raise InvariantViolation(f"frozen block {i} lost its right-end anchoring")
        # (F4) free particles and total mass are conserved
        out = self.boundary_left + self.boundary_right
        if n + out != self.free_initial:
            raise InvariantViolation("free particle count not conserved")
        if lat.total_mass != self._mass0:
            raise InvariantViolation("total mass not conserved")
        if final:
            # (F5) at most one particle per interior site at the end, up to
            # the right edge of the active region (beyond it, parked and
            # never-activated particles legitimately pile up)
            hi_idx = min(lay.right_target(self.active_hi), lat.hi) - lat.lo
            if int(lat.eta[1:hi_idx].max(initial=0)) > 1:
                raise InvariantViolation("end state has a multiply occupied site")


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def run_partial_stabilization(
    layout: BlockLayout,
    lattice: LatticeState,
    stacks: StackSet,
    cap: int = DEFAULT_CAP,
    record_events: bool = False,
    check: str = "event",
) -> CarpetReport:
    run = CarpetRun(layout, lattice, stacks, cap=cap, record_events=record_events, check=check)
    return run.run()


def coarse_counters(
    layout: BlockLayout,
    eta,
    omega,
    j: int,
    s: int,
    seed: int,
    cap: int = DEFAULT_CAP,
    check: str = "event",
):
    """Left-flow and freeze counters of blocks 0..j when ``s`` extra
    particles are planted at the right end of block j.

    Runs the dynamics from (eta + s at block_right(j), omega) with a
    fresh stack set for ``seed`` until no thawed particle remains in
    blocks 0..j; right emissions from block j are parked.  Returns
    (L, F): arrays indexed by block 0..j.
    """
    if not (0 <= j < layout.n):
        raise ConfigError("block index out of range")
    if s < 0:
        raise ConfigError("extra particle count must be nonnegative")
    lattice = LatticeState.from_counts(layout.lo, eta, omega)
    lattice.eta[layout.block_right(j) - layout.lo] += s
    stacks = layout_stacks(layout, seed)
    run = CarpetRun(layout, lattice, stacks, active_hi_block=j, cap=cap, check=check)
    run.run()
    return run.left_emissions[: j + 1].copy(), (run.frozen_pid[: j + 1] >= 0).astype(np.int64)


def layout_stacks(layout: BlockLayout, seed: int) -> StackSet:
    """Streams covering the closed working interval of a layout."""
    return StackSet(layout.lo, layout.hi + 1, seed, layout)


def check_H_events(odometer: np.ndarray, layout: BlockLayout, beta: float):
    """Per-block odometer-threshold flags H_i = [m(block_left(i)) >= beta*n]
    and the window events H(n0, n1) = not H_{n0-1} and all H_i in n0..n1,
    with H_{-1} treated as false."""
    n = layout.n
    thresh = beta * n
    H = np.array(
        [odometer[layout.block_left(i) - layout.lo] >= thresh for i in range(n)],
        dtype=bool,
    )

    def window(n0: int, n1: int) -> bool:
        prev = False if n0 == 0 else bool(H[n0 - 1])
        return (not prev) and bool(H[n0 : n1 + 1].all())

    return H, window


# ---------------------------------------------------------------------------
# Random valid configurations (verification fodder)
# ---------------------------------------------------------------------------


def random_valid_config(
    layout: BlockLayout,
    seed: int,
    extra_particles: int = 0,
    empty_fraction: float = 0.5,
    omega_fraction: float = 0.5,
) -> LatticeState:
    """A seeded random valid configuration: one particle per interior
    site, minus at most one empty site per block, plus extras on block
    endpoints, with iid parity bits."""
    lat = LatticeState.empty(layout.lo, layout.hi)
    lat.eta[1:-1] = 1
    for x in range(lat.lo + 1, lat.hi):
        if rng.site_uniform(seed, x, index=1) < omega_fraction:
            lat.omega[x - lat.lo] = 1
    for i in range(layout.n):
        u = rng.site_uniform(seed, layout.block_left(i), index=2)
        if u < empty_fraction:
            span = layout.a + 1
            pick = layout.block_left(i) + int(u / empty_fraction * span) % span
            lat.eta[pick - lat.lo] = 0
    for k in range(extra_particles):
        u = rng.site_uniform(seed, k, index=3)
        v = rng.site_uniform(seed, k, index=4)
        i = int(u * layout.n) % layout.n
        side = layout.block_left(i) if v < 0.5 else layout.block_right(i)
        lat.eta[side - lat.lo] += 1
    return lat
