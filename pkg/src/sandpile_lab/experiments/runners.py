"""Command implementations behind the CLI.

Each command expands its replicas (one worker state per replica, seeds
derived from the master seed), folds the replica rows in replica order,
and returns a :class:`RunReport` whose data rows are deterministic.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import kernels, oracles, single_block, verify
from ..bootstrap import StageConfig, run_bootstrap
from ..carpet import CarpetRun, check_H_events, layout_stacks, random_valid_config
from ..core import DensitySpec, LatticeState, activity_proxy, stabilize_full, stabilize_half
from ..errors import SandpileError
from ..layout import BlockLayout
from ..rng import replica_seed
from ..stacks import StackSet
from .config import ExperimentConfig
from .report import RunReport


def _mean_se_ci(values) -> dict:
    m, half, se = oracles.mean_ci(values)
    return {"mean": m, "se": se, "ci95_lo": m - half, "ci95_hi": m + half}


# --- stabilize --------------------------------------------------------------


def _stabilize_instance(args) -> dict:
    seed, idx, interval_len, particles = args
    gen = np.random.default_rng(seed)
    n_sites = int(gen.integers(3, interval_len + 1))
    lo = -(n_sites // 2)
    hi = lo + n_sites - 1
    eta = np.zeros(n_sites, dtype=np.int64)
    for s in gen.integers(1, n_sites - 1, size=int(gen.integers(1, particles + 1))):
        eta[s] += 1
    finals = []
    for p, policy in enumerate(["leftmost", "rightmost", "random", "queue", "stack"]):
        st = LatticeState.from_counts(lo, eta)
        _, odo = stabilize_full(st, StackSet(lo, hi + 1, seed), policy=policy, policy_seed=seed + p)
        finals.append((st.eta.tobytes(), odo.counts.tobytes()))
    st_h = LatticeState.from_counts(lo, eta)
    _, odo_h = stabilize_half(st_h, StackSet(lo, hi + 1, seed))
    st_f = LatticeState.from_counts(lo, eta)
    _, odo_f = stabilize_full(st_f, StackSet(lo, hi + 1, seed))
    return {
        "instance": idx,
        "seed": seed,
        "sites": n_sites,
        "particles": int(eta.sum()),
        "policies_agree": all(f == finals[0] for f in finals),
        "half_le_2full": bool(np.all(odo_h.counts <= 2 * odo_f.counts)),
        "full_odometer_total": int(odo_f.counts.sum()),
        "half_odometer_total": int(odo_h.counts.sum()),
        "boundary_left": int(st_f.eta[0]),
        "boundary_right": int(st_f.eta[-1]),
    }


def _cmd_stabilize(cfg: ExperimentConfig) -> RunReport:
    p = cfg.params
    jobs = [
        (replica_seed(p["seed"], i), i, p["interval_len"], p["particles"])
        for i in range(p["instances"])
    ]
    rows = _map_jobs(_stabilize_instance, jobs, p["threads"])
    agree = sum(r["policies_agree"] for r in rows)
    halfok = sum(r["half_le_2full"] for r in rows)
    checks = []
    if agree != len(rows):
        checks.append(f"abelian agreement {agree}/{len(rows)}")
    if halfok != len(rows):
        checks.append(f"half bound {halfok}/{len(rows)}")
    return RunReport(
        "stabilize",
        list(rows[0].keys()) if rows else [],
        _echo(cfg),
        rows,
        {
            "instances": len(rows),
            "policies_agree": agree,
            "half_le_2full": halfok,
            **{f"odo_{k}": v for k, v in _mean_se_ci([r["full_odometer_total"] for r in rows]).items()},
        },
        checks_failed=checks,
    )


# --- activity ---------------------------------------------------------------


def _activity_replica(args) -> dict:
    seed, idx, mu_kind, mu, support, windows = args
    spec = DensitySpec(mu_kind, mu=mu, support=support) if mu_kind != "constant" else DensitySpec(
        "constant", value=int(mu)
    )
    curve = activity_proxy(spec, list(windows), seed)
    row = {"replica": idx, "seed": seed}
    for L, v in zip(curve.windows, curve.odometer_at_origin):
        row[f"window_{L}"] = v
    vals = curve.odometer_at_origin
    row["monotone"] = all(vals[i + 1] >= vals[i] for i in range(len(vals) - 1))
    return row


def _cmd_activity(cfg: ExperimentConfig) -> RunReport:
    p = cfg.params
    spec = cfg.density_spec()
    jobs = [
        (replica_seed(p["seed"], i), i, spec.kind, p["mu"], spec.support, tuple(p["windows"]))
        for i in range(p["replicas"])
    ]
    rows = _map_jobs(_activity_replica, jobs, p["threads"])
    mono = sum(r["monotone"] for r in rows)
    checks = [] if mono == len(rows) else [f"window monotonicity {mono}/{len(rows)}"]
    agg = {"replicas": len(rows), "monotone": mono}
    for L in p["windows"]:
        agg.update({f"w{L}_{k}": v for k, v in _mean_se_ci([r[f"window_{L}"] for r in rows]).items()})
    return RunReport("activity", list(rows[0].keys()), _echo(cfg), rows, agg, checks_failed=checks)


# --- carpet -----------------------------------------------------------------


def _carpet_replica(args) -> dict:
    seed, idx, a, k, n, extras, beta, check = args
    lay = BlockLayout(a, k, n)
    lat = random_valid_config(lay, seed, extra_particles=extras)
    violations = 0
    try:
        rep = CarpetRun(lay, lat, layout_stacks(lay, seed), check=check).run()
    except SandpileError:
        violations = 1
        rep = None
    row = {"replica": idx, "seed": seed, "a": a, "K": k, "n": n, "violations": violations}
    if rep is not None:
        H, window = check_H_events(rep.odometer, lay, beta)
        row.update(
            frozen=rep.frozen_count(),
            fi_binary=bool(set(np.unique(rep.frozen_per_block)) <= {0, 1}),
            left_emissions=int(rep.left_emissions.sum()),
            right_emissions=int(rep.right_emissions.sum()),
            attempted=int(rep.attempted_emissions.sum()),
            freezes=int(rep.freeze_events.sum()),
            unfreezes=rep.unfreeze_events,
            failed_rearrivals=rep.failed_rearrivals,
            boundary_left=rep.boundary_left,
            boundary_right=rep.boundary_right,
            free_initial=rep.free_initial,
            conserved=rep.free_initial
            == rep.frozen_count() + rep.boundary_left + rep.boundary_right + rep.parked_right,
            steps=rep.steps,
            events=rep.events,
            h_all=window(0, n - 1),
        )
    return row


def _cmd_carpet(cfg: ExperimentConfig) -> RunReport:
    p = cfg.params
    k = p["k"] if p["k"] else p["a"] ** 4
    jobs = [
        (replica_seed(p["seed"], i), i, p["a"], k, p["n"], p["extras"], p["beta"], p["check"])
        for i in range(p["replicas"])
    ]
    rows = _map_jobs(_carpet_replica, jobs, p["threads"])
    violations = sum(r["violations"] for r in rows)
    checks = [] if violations == 0 else [f"{violations} replicas hit invariant violations"]
    freeze_rate = [
        r["freezes"] / r["attempted"] for r in rows if r.get("attempted")
    ]
    agg = {
        "replicas": len(rows),
        "violations": violations,
        "frozen_total": sum(r.get("frozen", 0) for r in rows),
        **{f"freeze_rate_{k2}": v for k2, v in _mean_se_ci(freeze_rate or [0.0]).items()},
    }
    return RunReport(
        "carpet", list(rows[0].keys()), _echo(cfg), rows, agg,
        invariant_violations=violations, checks_failed=checks,
    )


# --- block ------------------------------------------------------------------


def _cmd_block(cfg: ExperimentConfig) -> RunReport:
    p = cfg.params
    a = p["a"]
    k = p["k"] if p["k"] else a**4
    seed = p["seed"]
    check = p["check"]
    checks_failed: list[str] = []
    rows: list[dict] = []
    if check == "even-visit":
        n = p["samples"]
        frac = single_block.even_visit_fraction(n, seed)
        target = oracles.even_visit_probability()
        ok = oracles.within_z(frac, target, n)
        rows.append({"check": check, "samples": n, "value": frac, "target": target, "passed": ok})
    elif check == "reach":
        n = p["samples"]
        counts = kernels.reach_law_kernel(n, 16, seed)
        for ell in (2, 4, 8, 16):
            frac = counts[ell] / n
            ok = oracles.within_z(frac, 1.0 / ell, n)
            rows.append({"check": f"reach_{ell}", "samples": n, "value": frac, "target": 1.0 / ell, "passed": ok})
    elif check == "bounce":
        hist, p_odd, n = single_block.oracle_bounce_law(p["samples"], seed)
        tv = oracles.total_variation(hist, lambda j: oracles.geometric_pmf(0.75, j), n)
        rows.append({"check": "bounce_tv", "samples": n, "value": tv, "target": 0.01, "passed": tv <= 0.01})
        odd_t = oracles.geometric_odd_probability(0.75)
        rows.append({"check": "bounce_odd", "samples": n, "value": p_odd, "target": odd_t,
                     "passed": oracles.within_z(p_odd, odd_t, n)})
    elif check == "emission":
        t = kernels.chain_tally_parallel(a, k, p["emissions"], seed, p["chains"], 10**13)
        em = int(t[1] + t[2])
        frac = t[2] / em
        ceiling = oracles.right_emission_ceiling(a, k)
        rows.append({"check": "right_emission", "samples": em, "value": frac, "target": ceiling,
                     "passed": oracles.below_ceiling(frac, ceiling, em)})
        stag = t[8] / max(t[9], 1)
        rows.append({"check": "left_advance_2", "samples": int(t[9]), "value": 1 - stag, "target": 1 / 3,
                     "passed": 1 - stag >= 1 / 3 - 3 * oracles.binomial_sigma(1 / 3, max(int(t[9]), 1))})
    elif check == "refresh-loss":
        stats = single_block.run_block_chain(a, k, init="base", horizon=p["samples"], seed=seed)
        losses = stats.losses
        n = len(losses)
        for kk in range(1, 11):
            val = float((losses >= kk).mean()) if n else 0.0
            ceil = oracles.refresh_loss_ceiling(kk)
            rows.append({"check": f"loss_ge_{kk}", "samples": n, "value": val, "target": ceil,
                         "passed": val <= ceil + 3 * oracles.binomial_sigma(ceil, max(n, 1))})
    elif check == "aux":
        stats = single_block.run_block_chain(a, k, init="base", horizon=p["horizon"], seed=seed)
        rows.append({"check": "aux_violations", "samples": stats.steps, "value": stats.aux_violations,
                     "target": 0, "passed": stats.aux_violations == 0})
    elif check == "chain":
        stats = single_block.run_block_chain(a, k, init="base", horizon=p["horizon"], seed=seed)
        rows.append({
            "check": "chain", "samples": stats.steps,
            "value": stats.emissions_left + stats.emissions_right, "target": -1, "passed": True,
            "base_hits": stats.base_hits, "exit_hits": stats.exit_hits,
            "freezes": stats.freezes, "failed_rearrivals": stats.failed_rearrivals,
        })
    else:
        raise SandpileError(f"unknown block check {check!r}")
    checks_failed = [r["check"] for r in rows if not r["passed"]]
    cols = sorted({c for r in rows for c in r}, key=lambda c: (c != "check", c))
    agg = {"checks": len(rows), "failed": len(checks_failed)}
    return RunReport("block", cols, _echo(cfg), rows, agg, checks_failed=checks_failed)


# --- bootstrap ----------------------------------------------------------------


def _bootstrap_replica(args) -> dict:
    seed, idx, a, k, m0, law_kind, mu, support, stages = args
    if law_kind == "constant":
        spec = DensitySpec("constant", value=int(mu))
    elif law_kind == "poisson":
        spec = DensitySpec("poisson", mu=mu)
    else:
        spec = DensitySpec("finite", support=support)
    scfg = StageConfig(a=a, m0=m0, mu=spec, seed=seed, K=k)
    row = {"replica": idx, "seed": seed, "violations": 0}
    try:
        res = run_bootstrap(scfg, max_stages=stages)
        r0 = res.stages[0]
        row.update(
            survival=res.survival,
            stages_run=len(res.stages),
            failed_event=res.failed_event or "none",
            event1=r0.event1,
            event2=r0.event2,
            event3=r0.event3,
            valid_at_step3=r0.valid_at_step3,
            frozen_blocks=r0.frozen_blocks,
            boundary_left=r0.boundary_left,
            boundary_right=r0.boundary_right,
            min_block_odometer=r0.min_block_odometer,
            d_center=r0.d_center,
            odometer_origin=r0.odometer_origin_block,
        )
    except SandpileError as e:
        row["violations"] = 1
        row["failed_event"] = f"error:{type(e).__name__}"
    return row


def _cmd_bootstrap(cfg: ExperimentConfig) -> RunReport:
    p = cfg.params
    k = p["k"] if p["k"] else p["a"] ** 4
    spec = cfg.density_spec()
    jobs = [
        (replica_seed(p["seed"], i), i, p["a"], k, p["m0"], spec.kind, p["mu"], spec.support, p["stages"])
        for i in range(p["replicas"])
    ]
    rows = _map_jobs(_bootstrap_replica, jobs, p["threads"])
    violations = sum(r["violations"] for r in rows)
    completed = sum(1 for r in rows if r["violations"] == 0)
    checks = [] if violations == 0 else [f"{violations} replicas aborted"]
    cols = sorted({c for r in rows for c in r}, key=lambda c: (c not in ("replica", "seed"), c))
    return RunReport(
        "bootstrap", cols, _echo(cfg), rows,
        {"replicas": len(rows), "completed": completed, "violations": violations},
        invariant_violations=violations, checks_failed=checks,
    )


# --- verify -------------------------------------------------------------------


def _cmd_verify(cfg: ExperimentConfig) -> RunReport:
    p = cfg.params
    results = verify.run_suite(p["suite"] or None, threads=p["threads"], scale=p["scale"])
    rows = [
        {"criterion": r.name, "passed": r.passed, "seconds": round(r.seconds, 3), "detail": r.detail.replace(",", ";")}
        for r in results
    ]
    failed = [r.name for r in results if not r.passed]
    return RunReport(
        "verify",
        ["criterion", "passed", "seconds", "detail"],
        _echo(cfg),
        rows,
        {"criteria": len(rows), "failed": len(failed)},
        checks_failed=failed,
    )


# --- shared -------------------------------------------------------------------


def _echo(cfg: ExperimentConfig) -> dict:
    return {"command": cfg.command, **{k: v for k, v in sorted(cfg.params.items())}}


def _map_jobs(fn, jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            rows = list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        rows = [fn(j) for j in jobs]
    return rows


_RUNNERS = {
    "stabilize": _cmd_stabilize,
    "activity": _cmd_activity,
    "carpet": _cmd_carpet,
    "block": _cmd_block,
    "bootstrap": _cmd_bootstrap,
    "verify": _cmd_verify,
}


def run_command(command: str, overrides: dict | None = None, config_file: str | None = None) -> RunReport:
    cfg = ExperimentConfig.build(command, config_file, overrides)
    t0 = time.perf_counter()
    report = _RUNNERS[command](cfg)
    report.wall_time = time.perf_counter() - t0
    return report
