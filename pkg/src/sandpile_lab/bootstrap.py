"""Alternating IDLA / carpet-hole procedure on nested intervals.

Stage ``i`` works on the symmetric interval ``[-M_i, M_i]`` with
``M_i = (m~_i + 1)K - a/2`` and ``m~_{i+1} = floor(m~_i (1 + gamma))``;
blocks sit at ``[m'K - a/2, m'K + a/2]`` for ``m'`` in ``[-m~_i, m~_i]``.
Each stage runs three sub-steps:

1. IDLA sweep of the fresh annuli (every site down to at most one
   particle, surplus walking to the inner or outer freeze points);
2. IDLA fill from the previous boundary piles until the annuli are
   completely occupied or the piles run dry;
3. carpet/hole partial stabilization of the whole interval, when the
   configuration is valid.

Stage events record whether the densities, leftover pile sizes, frozen
block counts, boundary harvests and block odometers landed in their
target windows; the first failed event ends a bootstrap run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .carpet import CarpetRun, validate_config
from .core import DensitySpec, LatticeState
from .errors import CapExceeded, ConfigError, InvariantViolation
from .layout import BlockLayout
from .stacks import StackSet

GAMMA_DEFAULT = 0.02
DELTA_DEFAULT = 4e-4
BETA_DEFAULT = 4e-4
EPSILON_DEFAULT = 1.0 / 200.0


@dataclass(frozen=True)
class StageConfig:
    a: int
    m0: int  # initial block-count scale (number of blocks is 2*m0 + 1)
    mu: DensitySpec
    seed: int
    K: int | None = None  # defaults to a**4
    gamma: float = GAMMA_DEFAULT
    delta: float = DELTA_DEFAULT
    beta: float = BETA_DEFAULT
    epsilon: float = EPSILON_DEFAULT
    lstar: int | None = None  # defaults to max of the support
    cap: int = 10**9
    # carpet-phase structural checks run at sub-step boundaries by
    # default; per-toppling legality is always asserted in the kernels
    check: str = "end"

    def __post_init__(self):
        if self.a <= 0 or self.a % 2 != 0:
            raise ConfigError("block width a must be positive and even (the center block "
                              "left endpoint sits at -a/2)")
        if self.period < self.a + 2:
            raise ConfigError("block period must exceed a + 1")
        if self.m0 < 1:
            raise ConfigError("need a positive initial block scale")
        if self.mu.kind == "poisson":
            raise ConfigError("the staged procedure needs a finitely supported law")
        if self.mu.kind == "finite" and not any(v >= 2 and p > 0 for v, p in self.mu.support):
            raise ConfigError("the initial law must put positive mass on counts >= 2")
        if self.mu.kind == "constant" and self.mu.value < 2:
            raise ConfigError("a constant initial law needs at least two particles per site")
        if not (0 < self.mu.mean):
            raise ConfigError("the initial law must have positive mean")
        if self.l_star < 2:
            raise ConfigError("the top of the support must be at least 2")

    @property
    def period(self) -> int:
        return self.a**4 if self.K is None else self.K

    @property
    def l_star(self) -> int:
        return self.mu.max_value() if self.lstar is None else self.lstar

    def mtilde(self, i: int) -> int:
        m = self.m0
        for _ in range(i):
            m = int(m * (1.0 + self.gamma))
        return m

    def m_edge(self, i: int) -> int:
        return (self.mtilde(i) + 1) * self.period - self.a // 2

    def layout(self, i: int) -> BlockLayout:
        mt = self.mtilde(i)
        return BlockLayout(self.a, self.period, 2 * mt + 1, -mt * self.period - self.a // 2)

    def x_at(self, site: int) -> int:
        """The iid initial-law draw attached to a site (memoryless)."""
        return self.mu.sample_at(self.seed, site)


@dataclass
class StageReport:
    stage: int
    mtilde: int
    m_edge: int
    density_left: float
    density_right: float
    s_plus: int | None
    s_minus: int | None
    event1: bool
    event4_plus: bool | None
    event4_minus: bool | None
    source_left_remaining: int
    source_right_remaining: int
    event2: bool
    valid_at_step3: bool
    event3: bool
    frozen_blocks: int
    boundary_left: int
    boundary_right: int
    min_block_odometer: int
    odometer_origin_block: int
    d_center: int
    d_center_step3: int
    carpet_steps: int
    idla_steps: int
    invariant_violations: int

    @property
    def succeeded(self) -> bool:
        return self.event1 and self.event2 and self.event3

    def first_failure(self) -> str | None:
        if not self.event1:
            return "event1"
        if not self.event2:
            return "event2"
        if not self.event3:
            return "event3"
        return None


@dataclass
class BootstrapResult:
    config_summary: dict
    survival: int
    stages: list[StageReport]
    failed_event: str | None
    odometer_trace: list[int]  # carpet-phase odometer at -a/2, per stage


class _IdlaStreams:
    """Per-site instruction streams for the IDLA phases, kept apart from
    the carpet/hole streams so both procedures replay independently."""

    def __init__(self, seed: int, lo: int, hi: int):
        self.seed = seed
        self.lo = lo
        self.hi = hi
        self.keys = self._keys(lo, hi)
        self.consumed = np.zeros(hi - lo + 1, dtype=np.int64)

    def _keys(self, lo, hi):
        keys = np.empty(hi - lo + 1, dtype=np.uint64)
        for i, site in enumerate(range(lo, hi + 1)):
            keys[i] = rng.stream_key(self.seed, rng.DOMAIN_IDLA, site, 0)
        return keys

    def extend(self, lo: int, hi: int) -> None:
        lo = min(lo, self.lo)
        hi = max(hi, self.hi)
        if (lo, hi) == (self.lo, self.hi):
            return
        keys = self._keys(lo, hi)
        consumed = np.zeros(hi - lo + 1, dtype=np.int64)
        off = self.lo - lo
        consumed[off : off + len(self.consumed)] = self.consumed
        self.lo, self.hi, self.keys, self.consumed = lo, hi, keys, consumed


def center_of_mass(lattice: LatticeState, clamp: tuple[int, int] | None = None) -> int:
    """Sum of particle positions, optionally with positions clamped to
    [lo_site, hi_site] (the piecewise-linear diagnostic)."""
    sites = np.arange(lattice.lo, lattice.hi + 1, dtype=np.int64)
    if clamp is not None:
        sites = np.clip(sites, clamp[0], clamp[1])
    return int((sites * lattice.eta).sum())


def clamp_sites(config: StageConfig, i: int, m0p: int, m1p: int) -> tuple[int, int]:
    """Clamp bounds for the restricted center of mass, from block indices."""
    K, a = config.period, config.a
    return ((m0p - 1) * K + a // 2, (m1p + 1) * K - a // 2)


class BootstrapRun:
    """Stateful pipeline: seeds stage -1 and runs stages forward."""

    def __init__(self, config: StageConfig):
        self.config = config
        self.stage_index = 0
        lay0 = config.layout(0)
        lat = LatticeState.empty(lay0.lo, lay0.hi)
        for x in range(lat.lo, lat.hi + 1):
            lat.eta[x - lat.lo] = config.l_star  # stage -1 seeding
        self.lattice = lat
        self.carpet_stacks = StackSet(lay0.lo, lay0.hi + 1, config.seed, lay0)
        self.idla = _IdlaStreams(config.seed, lay0.lo, lay0.hi)
        self.reports: list[StageReport] = []

    # -- helpers -----------------------------------------------------------
    def _extend_interval(self, lay: BlockLayout) -> None:
        lat = self.lattice
        if lay.lo == lat.lo and lay.hi == lat.hi:
            return
        n = lay.hi - lay.lo + 1
        eta = np.zeros(n, dtype=np.int64)
        omega = np.zeros(n, dtype=np.int8)
        off = lat.lo - lay.lo
        eta[off : off + len(lat.eta)] = lat.eta
        omega[off : off + len(lat.omega)] = lat.omega
        for x in range(lay.lo, lat.lo):
            eta[x - lay.lo] = self.config.x_at(x)
        for x in range(lat.hi + 1, lay.hi + 1):
            eta[x - lay.lo] = self.config.x_at(x)
        self.lattice = LatticeState(lay.lo, lay.hi, eta, omega)
        self.carpet_stacks.extend(lay.lo, lay.hi + 1, lay)
        self.idla.extend(lay.lo, lay.hi)

    def _freeze_mask(self, points) -> np.ndarray:
        mask = np.zeros(self.lattice.hi - self.lattice.lo + 1, dtype=np.uint8)
        for p in points:
            mask[p - self.lattice.lo] = 1
        return mask

    def _density(self, lo: int, hi: int) -> float:
        seg = self.lattice.eta[lo - self.lattice.lo : hi - self.lattice.lo + 1]
        return float((seg >= 1).mean()) if len(seg) else 1.0

    # -- one stage ---------------------------------------------------------
    def run_stage(self) -> StageReport:
        cfg = self.config
        i = self.stage_index
        lay = cfg.layout(i)
        m_edge = cfg.m_edge(i)
        mt = cfg.mtilde(i)
        inner = cfg.m_edge(i - 1) if i >= 1 else -(cfg.a // 2)
        src_left, src_right = (-inner, inner) if i >= 1 else (-(cfg.a // 2), -(cfg.a // 2))
        self._extend_interval(lay)
        lat = self.lattice
        entry_com = center_of_mass(lat)
        odo_stage = np.zeros(lat.hi - lat.lo + 1, dtype=np.int64)

        # step 1: sweep the annuli down to single occupancy
        freeze1 = self._freeze_mask({-m_edge, m_edge, src_left, src_right})
        idla_steps = 0
        for lo_s, hi_s in ((-m_edge + 1, src_left - 1), (src_right + 1, m_edge - 1)):
            st, steps = kernels.idla_sweep_kernel(
                lat.eta, lat.omega, self.idla.consumed, self.idla.keys,
                odo_stage, freeze1, lo_s - lat.lo, hi_s - lat.lo, cfg.cap,
            )
            idla_steps += steps
            if st == kernels.ILLEGAL:
                raise InvariantViolation("illegal IDLA move in the sweep")
            if st == kernels.CAP_HIT:
                raise CapExceeded("IDLA sweep exceeded the toppling cap")

        density_left = self._density(-m_edge + 1, src_left - 1)
        density_right = self._density(src_right + 1, m_edge - 1)
        band_lo = 1.0 - 1.0 / (3.0 * cfg.period)
        event1 = band_lo <= density_left <= 1.0 and band_lo <= density_right <= 1.0
        s_plus = s_minus = None
        event4p = event4m = None
        if i >= 1:
            s_plus = sum(j * cfg.x_at(j) for j in range(inner + 1, m_edge + 1))
            s_minus = sum(j * cfg.x_at(j) for j in range(-m_edge, -inner))
            mean = cfg.mu.mean
            center = mean * (m_edge - inner) * (m_edge + inner + 1) / 2.0
            tol = 0.01 * cfg.gamma * mt * m_edge
            event4p = abs(s_plus - center) <= tol
            event4m = abs(s_minus - (-center)) <= tol
            event1 = event1 and event4p and event4m

        # step 2: refill the annuli from the inner piles
        targets = np.zeros_like(freeze1)
        for lo_s, hi_s in ((-m_edge + 1, src_left - 1), (src_right + 1, m_edge - 1)):
            targets[lo_s - lat.lo : hi_s - lat.lo + 1] = 1
        freeze2 = self._freeze_mask({-m_edge, m_edge})
        st, rel_a, rel_b, steps = kernels.idla_fill_kernel(
            lat.eta, lat.omega, self.idla.consumed, self.idla.keys,
            odo_stage, freeze2,
            src_left - lat.lo, src_right - lat.lo if i >= 1 else -1,
            targets, cfg.cap,
        )
        idla_steps += steps
        if st == kernels.ILLEGAL:
            raise InvariantViolation("illegal IDLA move in the fill")
        if st == kernels.CAP_HIT:
            raise CapExceeded("IDLA fill exceeded the toppling cap")
        left_remaining = lat.eta_at(src_left)
        right_remaining = lat.eta_at(src_right)
        need = 0.2 * mt
        event2 = left_remaining >= need and right_remaining >= need

        # step 3: carpet/hole partial stabilization on a valid interval
        step3_com = center_of_mass(lat)
        valid = validate_config(lat, lay)
        if event1 and event2 and not valid:
            raise InvariantViolation(
                "configuration should be valid at step-3 entry when the "
                "sweep and fill events hold"
            )
        frozen_blocks = 0
        carpet_steps = 0
        event3 = False
        min_odo = 0
        odo_origin = 0
        if valid:
            run = CarpetRun(lay, lat, self.carpet_stacks, cap=cfg.cap, check=cfg.check)
            rep = run.run()
            carpet_steps = rep.steps
            frozen_blocks = rep.frozen_count()
            block_odos = np.array(
                [rep.odometer[lay.block_left(b) - lat.lo] for b in range(lay.n)]
            )
            min_odo = int(block_odos.min())
            odo_origin = int(rep.odometer[-(cfg.a // 2) - lat.lo])
            thresh = cfg.beta * (2 * mt + 1)
            event3 = (
                frozen_blocks < cfg.delta * (2 * mt + 1)
                and lat.eta[0] >= mt / 4.0
                and lat.eta[-1] >= mt / 4.0
                and bool((block_odos >= thresh).all())
            )
        report = StageReport(
            stage=i,
            mtilde=mt,
            m_edge=m_edge,
            density_left=density_left,
            density_right=density_right,
            s_plus=s_plus,
            s_minus=s_minus,
            event1=event1,
            event4_plus=event4p,
            event4_minus=event4m,
            source_left_remaining=left_remaining,
            source_right_remaining=right_remaining,
            event2=event2,
            valid_at_step3=valid,
            event3=event3,
            frozen_blocks=frozen_blocks,
            boundary_left=int(lat.eta[0]),
            boundary_right=int(lat.eta[-1]),
            min_block_odometer=min_odo,
            odometer_origin_block=odo_origin,
            d_center=entry_com - center_of_mass(lat),
            d_center_step3=step3_com - center_of_mass(lat),
            carpet_steps=carpet_steps,
            idla_steps=idla_steps,
            invariant_violations=0,
        )
        self.reports.append(report)
        self.stage_index += 1
        return report


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def idla_sweep(lattice: LatticeState, ranges, freeze_points, seed: int, cap: int = 10**9):
    """Standalone sweep: reduce every site of the given (inclusive) ranges
    to at most one particle; surplus walks until an empty site or a
    freeze point.  Returns the per-site odometer."""
    streams = _IdlaStreams(seed, lattice.lo, lattice.hi)
    odo = np.zeros(lattice.hi - lattice.lo + 1, dtype=np.int64)
    mask = np.zeros_like(odo, dtype=np.uint8)
    for p in freeze_points:
        mask[p - lattice.lo] = 1
    for lo_s, hi_s in ranges:
        st, _ = kernels.idla_sweep_kernel(
            lattice.eta, lattice.omega, streams.consumed, streams.keys,
            odo, mask, lo_s - lattice.lo, hi_s - lattice.lo, cap,
        )
        if st == kernels.ILLEGAL:
            raise InvariantViolation("illegal IDLA move")
        if st == kernels.CAP_HIT:
            raise CapExceeded("IDLA sweep exceeded the toppling cap")
    return odo


def idla_fill(lattice: LatticeState, sources, target_ranges, freeze_points, seed: int, cap: int = 10**9):
    """Standalone fill: release source particles (alternating) until the
    targets are fully occupied or the sources cannot legally release.
    Returns (released_counts, odometer)."""
    streams = _IdlaStreams(seed, lattice.lo, lattice.hi)
    odo = np.zeros(lattice.hi - lattice.lo + 1, dtype=np.int64)
    mask = np.zeros_like(odo, dtype=np.uint8)
    for p in freeze_points:
        mask[p - lattice.lo] = 1
    targets = np.zeros_like(mask)
    for lo_s, hi_s in target_ranges:
        targets[lo_s - lattice.lo : hi_s - lattice.lo + 1] = 1
    src = list(sources)
    src_a = src[0] - lattice.lo
    src_b = src[1] - lattice.lo if len(src) > 1 else -1
    st, rel_a, rel_b, _ = kernels.idla_fill_kernel(
        lattice.eta, lattice.omega, streams.consumed, streams.keys,
        odo, mask, src_a, src_b, targets, cap,
    )
    if st == kernels.ILLEGAL:
        raise InvariantViolation("illegal IDLA move")
    if st == kernels.CAP_HIT:
        raise CapExceeded("IDLA fill exceeded the toppling cap")
    return (rel_a, rel_b), odo


def run_stage(config: StageConfig, i: int) -> tuple[BootstrapRun, StageReport]:
    """Run stages 0..i of a fresh bootstrap and return the last report."""
    run = BootstrapRun(config)
    report = None
    for _ in range(i + 1):
        report = run.run_stage()
    return run, report


def run_bootstrap(config: StageConfig, max_stages: int = 4) -> BootstrapResult:
    """Run stages until an event fails or ``max_stages`` complete."""
    run = BootstrapRun(config)
    failed = None
    trace = []
    for _ in range(max_stages):
        rep = run.run_stage()
        trace.append(rep.odometer_origin_block)
        if not rep.succeeded:
            failed = rep.first_failure()
            break
    return BootstrapResult(
        config_summary={
            "a": config.a,
            "K": config.period,
            "k_override": config.period != config.a**4,
            "m0": config.m0,
            "gamma": config.gamma,
            "delta": config.delta,
            "beta": config.beta,
            "l_star": config.l_star,
            "seed": config.seed,
        },
        survival=sum(1 for r in run.reports if r.succeeded),
        stages=run.reports,
        failed_event=failed,
        odometer_trace=trace,
    )
