"""Monte-Carlo batches over :func:`disac.sim.run_scenario` and their aggregation."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import per_target_rmse, write_gospa_csv, write_rmse_csv
from .sim import RunResult, ScenarioConfig, run_scenario


def _run_one(args) -> RunResult:
    cfg, mc, mode, check = args
    return run_scenario(cfg, mc, mode, check_invariants=check)


def run_monte_carlo(cfg: ScenarioConfig, mode: str, mc_runs: int | None = None, workers: int | None = None,
                    check_invariants: bool = False) -> list[RunResult]:
    """All runs of one mode, ordered by MC index regardless of worker count."""
    n = cfg.mc_runs if mc_runs is None else mc_runs
    jobs = [(cfg, mc, mode, check_invariants) for mc in range(n)]
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or n == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers))))


@dataclass
class McSummary:
    """Monte-Carlo averages of one mode."""

    steps: np.ndarray
    # bs id -> (steps, 5): RMS trajectory error, then mean per-step-normalised
    # localisation, missed, false and switch components
    gospa: dict[int, np.ndarray]
    # (bs id, target index) -> (rmse per step, defined-run count)
    rmse: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]
    first_handover: dict[tuple[int, int, int], list[int | None]]  # (src, dst, target) -> per run
    matched_birth: dict[tuple[int, int], list[int | None]]
    max_weight_error: float
    mbm_violations: int
    oversize_steps: int


def summarize(runs: list[RunResult]) -> McSummary:
    K = runs[0].steps
    steps = np.arange(1, K + 1)
    ids = sorted(runs[0].gospa)
    gospa = {}
    for i in ids:
        arr = np.stack([r.gospa[i] for r in runs])  # (runs, K, 5)
        norm = arr / steps[None, :, None]
        mean = np.nanmean(norm, axis=0)
        out = np.empty((K, 5))
        out[:, 0] = np.sqrt(mean[:, 0])
        out[:, 1:] = mean[:, 1:]
        gospa[i] = out
    n_targets = runs[0].target_errors[ids[0]].shape[0]
    rmse = {}
    for i in ids:
        for n in range(n_targets):
            errs = np.stack([r.target_errors[i][n] for r in runs])
            rmse[i, n] = per_target_rmse(errs)
    first: dict[tuple[int, int, int], list[int | None]] = {}
    keys = {(s, d, n) for s in ids for d in ids if s != d for n in range(n_targets)}
    for key in sorted(keys):
        vals = []
        for r in runs:
            steps_ = [e.step for e in r.handovers if (e.source, e.dest, e.target) == key]
            vals.append(min(steps_) if steps_ else None)
        first[key] = vals
    births = {(i, n): [r.matched_birth[i][n] for r in runs] for i in ids for n in range(n_targets)}
    return McSummary(steps, gospa, rmse, first, births,
                     max(r.max_weight_error for r in runs),
                     sum(r.mbm_violations for r in runs),
                     sum(r.oversize_steps for r in runs))


def write_outputs(out_dir: Path, runs: list[RunResult], summary: McSummary) -> list[str]:
    """Write metric CSVs, the handover log and first-run estimates; returns relative paths."""
    out_dir = Path(out_dir)
    files = []
    for i, g in summary.gospa.items():
        name = f"gospa_bs{i}.csv"
        write_gospa_csv(out_dir / name, summary.steps, g[:, 0], g[:, 1], g[:, 2], g[:, 3], g[:, 4])
        files.append(name)
    for (i, n), (rmse, count) in summary.rmse.items():
        name = f"rmse_bs{i}_target{n + 1}.csv"
        write_rmse_csv(out_dir / name, summary.steps, rmse, count, f"target{n + 1}")
        files.append(name)
    name = "handovers.csv"
    with open(out_dir / name, "w") as fh:
        fh.write("mc_run,step,source,dest,track_uid,weight,target\n")
        for r in runs:
            for e in r.handovers:
                tgt = "" if e.target is None else str(e.target + 1)
                fh.write(f"{r.mc_index},{e.step},{e.source},{e.dest},{e.track_uid},{e.weight!r},{tgt}\n")
    files.append(name)
    first = runs[0]
    est = {
        str(i): [{"track_uid": uid, "birth_step": tr.birth_step, "end_step": tr.end_step,
                  "positions": tr.states[:, :3].tolist()} for uid, tr in first.final_estimates[i]]
        for i in sorted(first.final_estimates)
    }
    name = "estimates_run0.json"
    (out_dir / name).write_text(json.dumps(est, indent=1, sort_keys=True) + "\n")
    files.append(name)
    stats = {
        "first_handover": {f"{s}->{d}:target{n + 1}": v for (s, d, n), v in summary.first_handover.items()},
        "matched_birth": {f"bs{i}:target{n + 1}": v for (i, n), v in summary.matched_birth.items()},
        "oversize_steps": summary.oversize_steps,
    }
    name = "summary.json"
    (out_dir / name).write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    files.append(name)
    return files
