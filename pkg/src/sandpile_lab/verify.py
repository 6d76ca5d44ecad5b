"""Verification suite: exact combinatorial checks and statistical laws.

Each criterion function is pure given its seed and sizes, returns a
:class:`CriterionResult`, and never weakens its tolerance: statistical
checks use three-sigma binomial bands at the stated sample counts, and
structural checks demand exact equality or zero violations.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, oracles, single_block
from .bootstrap import StageConfig, run_bootstrap
from .carpet import CarpetRun, coarse_counters, layout_stacks, random_valid_config
from .core import DensitySpec, LatticeState, activity_proxy, stabilize_full, stabilize_half
from .errors import SandpileError
from .layout import BlockLayout
from .oracles import (
    below_ceiling,
    binomial_sigma,
    even_visit_probability,
    excursion_reach_probability,
    geometric_odd_probability,
    geometric_pmf,
    refresh_loss_ceiling,
    right_emission_ceiling,
    total_variation,
    within_z,
)
from .stacks import StackSet

DEFAULT_SMOKE_MU = DensitySpec("finite", support=((0, 0.01), (1, 0.9835), (2, 0.0065)))


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _timed(fn):
    def wrapper(*args, **kwargs) -> CriterionResult:
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _random_instance(gen: np.random.Generator, max_len: int, max_particles: int):
    n_sites = int(gen.integers(3, max_len + 1))
    lo = -int(gen.integers(0, n_sites))
    hi = lo + n_sites - 1
    n_part = int(gen.integers(1, max_particles + 1))
    eta = np.zeros(n_sites, dtype=np.int64)
    spots = gen.integers(1, n_sites - 1, size=n_part)
    for s in spots:
        eta[s] += 1
    omega = gen.integers(0, 2, size=n_sites).astype(np.int8)
    return lo, hi, eta, omega


@_timed
def check_abelian_universality(instances: int = 1000, seed: int = 2026) -> CriterionResult:
    """Identical odometers and final states under five site-selection
    policies, on random instances with fixed stacks."""
    gen = np.random.default_rng(seed)
    policies = ["leftmost", "rightmost", "random", "queue", "stack"]
    agree = 0
    for k in range(instances):
        lo, hi, eta, omega = _random_instance(gen, 64, 20)
        results = []
        for p, policy in enumerate(policies):
            st = LatticeState.from_counts(lo, eta, omega)
            stacks = StackSet(lo, hi + 1, seed + 31 * k)
            _, odo = stabilize_full(st, stacks, policy=policy, policy_seed=seed + 7 * p)
            results.append((st.eta.tobytes(), odo.counts.tobytes()))
        if all(r == results[0] for r in results):
            agree += 1
    return CriterionResult(
        "abelian-universality",
        agree == instances,
        f"{agree}/{instances} instances identical across {len(policies)} policies",
        {"instances": instances, "agree": agree},
    )


@_timed
def check_half_toppling_bound(instances: int = 1000, seed: int = 2027) -> CriterionResult:
    """Half-toppling odometer at most twice the full odometer, pointwise,
    on coupled instances (same stacks, zero initial parity)."""
    gen = np.random.default_rng(seed)
    good = 0
    for k in range(instances):
        lo, hi, eta, _ = _random_instance(gen, 64, 20)
        st_f = LatticeState.from_counts(lo, eta)
        _, odo_f = stabilize_full(st_f, StackSet(lo, hi + 1, seed + 13 * k))
        st_h = LatticeState.from_counts(lo, eta)
        _, odo_h = stabilize_half(st_h, StackSet(lo, hi + 1, seed + 13 * k))
        ok = bool(np.all(odo_h.counts <= 2 * odo_f.counts))
        # parity bookkeeping: each half toppling flips its site
        ok = ok and bool(
            np.all((odo_h.counts[1:-1] % 2).astype(np.int8) == st_h.omega[1:-1])
        )
        good += ok
    return CriterionResult(
        "half-toppling-bound",
        good == instances,
        f"{good}/{instances} coupled instances satisfy m_half <= 2 m_full pointwise",
        {"instances": instances, "good": good},
    )


@_timed
def check_micro_oracle(instances: int = 50, seed: int = 2028) -> CriterionResult:
    """Kernel stabilization equals exhaustive enumeration over every
    legal toppling order on micro instances."""
    gen = np.random.default_rng(seed)
    good = 0
    for k in range(instances):
        lo, hi, eta, _ = _random_instance(gen, 7, 4)
        stacks = StackSet(lo, hi + 1, seed + 17 * k)
        ref = oracles.exhaustive_stabilize_full(eta, stacks, lo)
        st = LatticeState.from_counts(lo, eta)
        _, odo = stabilize_full(st, StackSet(lo, hi + 1, seed + 17 * k))
        if tuple(st.eta) == ref.eta and tuple(odo.counts) == ref.odometer:
            good += 1
    return CriterionResult(
        "micro-oracle",
        good == instances,
        f"{good}/{instances} instances equal the exhaustive-order result exactly",
        {"instances": instances, "good": good},
    )


@_timed
def check_reach_law(samples: int = 10**6, seed: int = 2029) -> CriterionResult:
    """Excursion maximum-displacement law 1/l at l in {2, 4, 8, 16}."""
    ells = (2, 4, 8, 16)
    bad = []
    values = {}
    for i, ell in enumerate(ells):
        counts = kernels.reach_law_kernel(samples, 16, seed + i)
        p_hat = counts[ell] / samples
        p = excursion_reach_probability(ell)
        values[f"reach_{ell}"] = p_hat
        if not within_z(p_hat, p, samples):
            bad.append(ell)
    return CriterionResult(
        "excursion-reach-law",
        not bad,
        f"all reach frequencies within 3 sigma of 1/l at n={samples}"
        if not bad
        else f"off band at l={bad}",
        values,
    )


@_timed
def check_even_visit_law(samples: int = 10**6, seed: int = 2030) -> CriterionResult:
    """Probability an excursion goes left and visits the first site on
    its left an even number of times: exactly one sixth."""
    p_hat = single_block.even_visit_fraction(samples, seed)
    p = even_visit_probability()
    ok = within_z(p_hat, p, samples)
    return CriterionResult(
        "even-visit-law",
        ok,
        f"frequency {p_hat:.5f} vs 1/6 (3 sigma = {3 * binomial_sigma(p, samples):.5f})",
        {"fraction": p_hat, "target": p},
    )


@_timed
def check_bounce_law(samples: int = 10**5, seed: int = 2031) -> CriterionResult:
    """Bounce counts between i and i+1 are geometric(3/4); their odd
    probability is 4/5."""
    hist, p_odd, n = single_block.oracle_bounce_law(samples, seed)
    tv = total_variation(hist, lambda k: geometric_pmf(0.75, k), n)
    p_odd_target = geometric_odd_probability(0.75)
    ok = tv <= 0.01 and within_z(p_odd, p_odd_target, n)
    return CriterionResult(
        "bounce-law",
        ok,
        f"TV {tv:.4f} <= 0.01 vs geometric(3/4); odd fraction {p_odd:.4f} vs 0.8",
        {"tv": tv, "p_odd": p_odd, "n": n},
    )


@_timed
def check_right_emission_ceiling(
    emissions: int = 10**5, a: int = 16, seed: int = 2032, chains: int = 8
) -> CriterionResult:
    """Per-emission right frequency at the canonical fourth-power period
    stays under the gambler's-ruin ceiling."""
    K = a**4
    t = kernels.chain_tally_parallel(a, K, emissions, seed, chains, 10**13)
    em = int(t[1] + t[2])
    p_hat = t[2] / em
    ceiling = right_emission_ceiling(a, K)
    ok = em >= emissions and below_ceiling(p_hat, ceiling, em)
    return CriterionResult(
        "right-emission-ceiling",
        ok,
        f"right frequency {p_hat:.5f} <= {ceiling:.5f} + 3 sigma over {em} emissions",
        {"right_freq": p_hat, "ceiling": ceiling, "emissions": em,
         "freezes": int(t[3]), "failed_rearrivals": int(t[5])},
    )


_CARPET_GRID = [
    (4, 2, 30), (4, 4, 30), (4, 8, 30),
    (8, 2, 25), (8, 4, 25), (8, 8, 25),
    (16, 2, 12), (16, 4, 12), (16, 8, 11),
]


@_timed
def check_carpet_structural(seed: int = 2033, grid=None) -> CriterionResult:
    """Seeded partial stabilizations with every structural assertion
    enabled; per-block frozen counts binary; free particles conserved."""
    grid = _CARPET_GRID if grid is None else grid
    runs = 0
    violations = 0
    first = ""
    for a, n, reps in grid:
        K = a * a  # stamped override of the fourth-power default
        lay = BlockLayout(a, K, n)
        for r in range(reps):
            s = seed + 1000 * runs + r
            lat = random_valid_config(lay, s, extra_particles=2 + (r % 3))
            try:
                rep = CarpetRun(lay, lat, layout_stacks(lay, s), check="event").run()
                assert set(np.unique(rep.frozen_per_block)) <= {0, 1}
                out = rep.boundary_left + rep.boundary_right + rep.parked_right
                assert rep.free_initial == rep.frozen_count() + out
            except (SandpileError, AssertionError) as e:
                violations += 1
                if not first:
                    first = f"(a={a}, n={n}, rep={r}): {e}"
            runs += 1
    return CriterionResult(
        "carpet-structural",
        violations == 0,
        f"{runs} runs, {violations} invariant violations" + (f"; first {first}" if first else ""),
        {"runs": runs, "violations": violations},
    )


@_timed
def check_coarse_replay(runs: int = 100, seed: int = 2034) -> CriterionResult:
    """Coarse-counter replay equality and the mass balance equations,
    exactly, on coupled runs."""
    geoms = [(4, 16, 2), (4, 16, 3), (4, 16, 4), (6, 36, 3)]
    checks = 0
    bad = 0
    done = 0
    g = 0
    while done < runs:
        a, K, n = geoms[g % len(geoms)]
        g += 1
        lay = BlockLayout(a, K, n)
        s = seed + 37 * done
        lat = random_valid_config(lay, s, extra_particles=done % 5)
        eta0, om0 = lat.eta.copy(), lat.omega.copy()
        rep = CarpetRun(lay, lat, layout_stacks(lay, s)).run()
        lv = rep.l_vector
        for i in range(lay.n):
            L, F = coarse_counters(lay, eta0, om0, i, int(lv[i + 1]), seed=s)
            checks += 1
            if not (
                L[i] == rep.left_emissions[i]
                and F[i] == rep.frozen_per_block[i]
                and L[i] == lv[i]
            ):
                bad += 1
        done += 1
    return CriterionResult(
        "coarse-replay",
        bad == 0,
        f"{runs} coupled runs, {checks} block equalities, {bad} mismatches",
        {"runs": runs, "checks": checks, "bad": bad},
    )


@_timed
def check_aux_consistency(steps: int = 10**5, seed: int = 2035, a: int = 16, K: int = 320) -> CriterionResult:
    """Paired chain/auxiliary run: revealed symbols always match the true
    parity, leftmost ones agree, and hidden runs never isolate a site."""
    try:
        stats = single_block.run_block_chain(a, K, init="base", horizon=steps, seed=seed)
        ok = stats.aux_violations == 0
        detail = (
            f"{stats.steps} paired steps, {stats.aux_violations} violations, "
            f"{stats.kind_counts['FailedRearrival']} aux restarts from failed re-arrivals"
        )
    except SandpileError as e:
        ok, detail = False, f"violation raised: {e}"
        stats = None
    return CriterionResult(
        "aux-consistency",
        ok,
        detail,
        {} if stats is None else {"steps": stats.steps, "kinds": stats.kind_counts},
    )


@_timed
def check_refresh_loss(steps: int = 10**5, seed: int = 2036, a: int = 16, K: int = 320) -> CriterionResult:
    """Tail of the per-step reveal loss stays under (5/6)^((k-1)/2)."""
    horizon = int(steps * 1.15) + 100
    stats = single_block.run_block_chain(a, K, init="base", horizon=horizon, seed=seed)
    losses = stats.losses[:steps]
    n = len(losses)
    bad = []
    values = {"n": n}
    for k in range(1, 11):
        p_hat = float((losses >= k).mean())
        ceil = refresh_loss_ceiling(k)
        values[f"loss_ge_{k}"] = p_hat
        if not (n >= steps and p_hat <= ceil + 3 * binomial_sigma(ceil, n)):
            bad.append(k)
    return CriterionResult(
        "refresh-loss-ceiling",
        not bad and n >= steps,
        f"tail under the ceiling for k=1..10 at n={n}" if not bad else f"tail above ceiling at k={bad}",
        values,
    )


@_timed
def check_activity_proxy(
    replicas: int = 200,
    exact_runs: int = 100,
    windows=(16, 32, 64, 128, 256),
    seed: int = 2037,
) -> CriterionResult:
    """Coupled window monotonicity (exact) and the fixating/active trend
    separation between a thin and a dense product law."""
    windows = list(windows)
    mono_bad = 0
    growth = {0.1: [], 1.5: []}
    half = replicas // 2
    for r in range(half):
        for mu, off in ((0.1, 0), (1.5, 10**6)):
            curve = activity_proxy(DensitySpec("poisson", mu=mu), windows, seed + r + off)
            vals = curve.odometer_at_origin
            growth[mu].append(vals[-1] - vals[-2])
            if r < exact_runs // 2 and any(
                vals[i + 1] < vals[i] for i in range(len(vals) - 1)
            ):
                mono_bad += 1
    lo_m, lo_h, _ = oracles.mean_ci(growth[0.1])
    hi_m, hi_h, _ = oracles.mean_ci(growth[1.5])
    separated = (hi_m - hi_h) > (lo_m + lo_h)
    ok = mono_bad == 0 and separated
    return CriterionResult(
        "activity-proxy",
        ok,
        f"monotone on {exact_runs} coupled runs ({mono_bad} violations); "
        f"growth {hi_m:.0f}+-{hi_h:.0f} (mu=1.5) vs {lo_m:.2f}+-{lo_h:.2f} (mu=0.1)",
        {"mono_bad": mono_bad, "growth_hi": hi_m, "growth_lo": lo_m},
    )


def _bootstrap_one(args) -> dict:
    a, K, m0, seed = args
    cfg = StageConfig(a=a, m0=m0, mu=DEFAULT_SMOKE_MU, seed=seed, K=K)
    try:
        res = run_bootstrap(cfg, max_stages=1)
        r = res.stages[0]
        return {
            "seed": seed,
            "completed": True,
            "valid_when_events": (not (r.event1 and r.event2)) or r.valid_at_step3,
            "event1": r.event1,
            "event2": r.event2,
            "event3": r.event3,
            "frozen": r.frozen_blocks,
        }
    except SandpileError as e:
        return {"seed": seed, "completed": False, "error": str(e), "valid_when_events": False}


@_timed
def check_bootstrap_smoke(seeds: int = 100, seed0: int = 2038, threads: int = 1) -> CriterionResult:
    """Stage 0 of the staged procedure at the smoke preset completes
    cleanly, and validity at step-3 entry follows from the sweep and
    fill events."""
    jobs = [(8, 64, 8, seed0 + k) for k in range(seeds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_bootstrap_one, jobs, chunksize=4))
    else:
        rows = [_bootstrap_one(j) for j in jobs]
    rows.sort(key=lambda r: r["seed"])
    completed = sum(r["completed"] for r in rows)
    valid_ok = all(r["valid_when_events"] for r in rows if r["completed"])
    ok = completed >= 1 and valid_ok and all(r["completed"] for r in rows)
    return CriterionResult(
        "bootstrap-smoke",
        ok,
        f"{completed}/{seeds} seeds completed stage 0 cleanly; "
        f"step-3 validity implied by events: {valid_ok}",
        {"completed": completed, "seeds": seeds},
    )


@_timed
def check_reproducibility(seed: int = 2039) -> CriterionResult:
    """Identical seeds and configs give byte-identical data rows."""
    from .experiments import runners  # local import to avoid a cycle

    pairs = []
    for cmd, params in [
        ("stabilize", {"instances": 6}),
        ("activity", {"replicas": 2, "windows": [8, 16], "mu": 0.5}),
        ("carpet", {"replicas": 2, "a": 4, "k": 16, "n": 2}),
        ("block", {"check": "even-visit", "samples": 20000}),
        ("bootstrap", {"replicas": 1, "a": 4, "k": 16, "m0": 2, "stages": 1}),
    ]:
        r1 = runners.run_command(cmd, dict(params, seed=seed, threads=1))
        r2 = runners.run_command(cmd, dict(params, seed=seed, threads=1))
        pairs.append((cmd, r1.to_csv() == r2.to_csv() and r1.to_jsonl() == r2.to_jsonl()))
    bad = [c for c, same in pairs if not same]
    return CriterionResult(
        "reproducibility",
        not bad,
        "byte-identical reruns for " + ", ".join(c for c, _ in pairs)
        if not bad
        else f"rerun mismatch in {bad}",
        {"commands": [c for c, _ in pairs]},
    )


ALL_CRITERIA = [
    ("abelian", check_abelian_universality),
    ("halftop", check_half_toppling_bound),
    ("micro", check_micro_oracle),
    ("reach", check_reach_law),
    ("even-visit", check_even_visit_law),
    ("bounce", check_bounce_law),
    ("emission", check_right_emission_ceiling),
    ("carpet", check_carpet_structural),
    ("coarse", check_coarse_replay),
    ("aux", check_aux_consistency),
    ("refresh-loss", check_refresh_loss),
    ("activity", check_activity_proxy),
    ("bootstrap", check_bootstrap_smoke),
    ("repro", check_reproducibility),
]


def run_suite(names=None, threads: int = 1, scale: float = 1.0) -> list[CriterionResult]:
    """Run the selected criteria (all by default).  ``scale`` shrinks the
    Monte Carlo sample counts for smoke runs; the acceptance gate uses
    scale 1."""
    selected = dict(ALL_CRITERIA)
    if names:
        unknown = [n for n in names if n not in selected]
        if unknown:
            raise KeyError(f"unknown suite names {unknown}; choose from {list(selected)}")
    results = []
    for name, fn in ALL_CRITERIA:
        if names and name not in names:
            continue
        kwargs = {}
        if scale != 1.0:
            if name in ("abelian", "halftop"):
                kwargs["instances"] = max(10, int(1000 * scale))
            elif name == "micro":
                kwargs["instances"] = max(5, int(50 * scale))
            elif name in ("reach", "even-visit"):
                kwargs["samples"] = max(10**4, int(10**6 * scale))
            elif name == "bounce":
                kwargs["samples"] = max(10**4, int(10**5 * scale))
            elif name == "emission":
                kwargs["emissions"] = max(2000, int(10**5 * scale))
            elif name in ("aux", "refresh-loss"):
                kwargs["steps"] = max(2000, int(10**5 * scale))
            elif name == "carpet":
                kwargs["grid"] = [(a, n, max(1, int(r * scale))) for a, n, r in _CARPET_GRID]
            elif name == "coarse":
                kwargs["runs"] = max(4, int(100 * scale))
            elif name == "activity":
                kwargs["replicas"] = max(10, int(200 * scale))
                kwargs["exact_runs"] = max(4, int(100 * scale))
            elif name == "bootstrap":
                kwargs["seeds"] = max(2, int(100 * scale))
        if name == "bootstrap":
            kwargs["threads"] = threads
        results.append(fn(**kwargs))
    return results
