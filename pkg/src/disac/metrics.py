"""Trajectory GOSPA (exact DP over assignment sequences) and per-target RMSE."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import permutations, combinations
from typing import NamedTuple, Sequence

import numpy as np

from .trajectory import TrajectoryState

MAX_CARDINALITY = 6


class UnsupportedSizeError(ValueError):
    pass


@dataclass(frozen=True)
class TrajMetricConfig:
    cutoff: float = 10.0
    order: float = 2.0
    switch_cost: float = 2.0

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if not self.order >= 1:
            raise ValueError("order must be at least 1")
        if self.switch_cost < 0:
            raise ValueError("switch cost must be non-negative")


class GospaCost(NamedTuple):
    total: float
    localization: float
    missed: float
    false: float
    switch: float


def assignment_maps(n_x: int, n_y: int) -> list[tuple[int, ...]]:
    """All maps pi: {0..n_x-1} -> {-1, 0..n_y-1}, injective on non-negative values."""
    maps = []
    for m in range(min(n_x, n_y) + 1):
        for rows in combinations(range(n_x), m):
            for cols in permutations(range(n_y), m):
                pi = [-1] * n_x
                for r, c in zip(rows, cols):
                    pi[r] = c
                maps.append(tuple(pi))
    return maps


def _position_tensor(trajs: Sequence[TrajectoryState], k: int) -> np.ndarray:
    """(n, k, 3) positions at steps 1..k, NaN where the trajectory is absent."""
    out = np.full((len(trajs), k, 3), np.nan)
    for n, tr in enumerate(trajs):
        lo = max(tr.birth_step, 1)
        hi = min(tr.end_step, k)
        if hi >= lo:
            out[n, lo - 1:hi] = tr.states[lo - tr.birth_step:hi - tr.birth_step + 1, :3]
    return out


def _step_costs(truth_pos, est_pos, maps, cfg: TrajMetricConfig):
    """Per-map, per-step cost components: arrays of shape (n_maps, k)."""
    c, p = cfg.cutoff, cfg.order
    half = c**p / 2.0
    n_x, k = truth_pos.shape[:2]
    n_y = est_pos.shape[0]
    x_on = ~np.isnan(truth_pos[..., 0])
    y_on = ~np.isnan(est_pos[..., 0])
    if n_x and n_y:
        dist = np.linalg.norm(truth_pos[:, None] - est_pos[None, :], axis=-1)  # (n_x, n_y, k)
        loc_pair = np.minimum(np.nan_to_num(dist, nan=0.0), c) ** p
    n_m = len(maps)
    loc = np.zeros((n_m, k))
    missed = np.zeros((n_m, k))
    false = np.zeros((n_m, k))
    for mi, pi in enumerate(maps):
        used = np.zeros(n_y, dtype=bool)
        for i, j in enumerate(pi):
            if j < 0:
                missed[mi] += half * x_on[i]
                continue
            used[j] = True
            both = x_on[i] & y_on[j]
            loc[mi] += np.where(both, loc_pair[i, j], 0.0)
            missed[mi] += half * (x_on[i] & ~y_on[j])
            false[mi] += half * (~x_on[i] & y_on[j])
        for j in np.flatnonzero(~used):
            false[mi] += half * y_on[j]
    return loc, missed, false


def _switch_matrix(maps, cfg: TrajMetricConfig) -> np.ndarray:
    arr = np.array(maps, dtype=int).reshape(len(maps), -1)
    a = arr[:, None, :]
    b = arr[None, :, :]
    diff = a != b
    full = diff & (a >= 0) & (b >= 0)
    half = diff & ~((a >= 0) & (b >= 0))
    return (full.sum(-1) + 0.5 * half.sum(-1)) * cfg.switch_cost**cfg.order


def _check_size(est, truth):
    if max(len(est), len(truth)) > MAX_CARDINALITY:
        raise UnsupportedSizeError(
            f"exact trajectory metric limited to {MAX_CARDINALITY} trajectories per set "
            f"(got {len(est)} estimated, {len(truth)} true)")


def trajectory_gospa_dp(est: Sequence[TrajectoryState], truth: Sequence[TrajectoryState], k: int,
                        cfg: TrajMetricConfig = TrajMetricConfig()):
    """Exact trajectory metric by dynamic programming.

    Returns the cost decomposition (p-th powers, summed over steps 1..k) and
    the optimal per-step assignment maps (truth index -> estimate index or -1).
    """
    _check_size(est, truth)
    maps = assignment_maps(len(truth), len(est))
    tx = _position_tensor(truth, k)
    ty = _position_tensor(est, k)
    loc, missed, false = _step_costs(tx, ty, maps, cfg)
    step_cost = loc + missed + false
    sw = _switch_matrix(maps, cfg)
    n_m = len(maps)
    value = step_cost[:, 0].copy()
    back = np.zeros((k, n_m), dtype=int)
    for t in range(1, k):
        cand = value[:, None] + sw  # from (rows) -> to (cols)
        back[t] = np.argmin(cand, axis=0)
        value = cand[back[t], np.arange(n_m)] + step_cost[:, t]
    path = np.empty(k, dtype=int)
    path[-1] = int(np.argmin(value))
    for t in range(k - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    steps = np.arange(k)
    sw_total = float(sum(sw[path[t - 1], path[t]] for t in range(1, k)))
    cost = GospaCost(
        total=float(value[path[-1]]),
        localization=float(loc[path, steps].sum()),
        missed=float(missed[path, steps].sum()),
        false=float(false[path, steps].sum()),
        switch=sw_total,
    )
    return cost, [maps[i] for i in path]


def trajectory_gospa(est, truth, k: int, cfg: TrajMetricConfig = TrajMetricConfig()) -> GospaCost:
    return trajectory_gospa_dp(est, truth, k, cfg)[0]


def trajectory_gospa_bruteforce(est, truth, k: int, cfg: TrajMetricConfig = TrajMetricConfig()) -> float:
    """Exhaustive minimum over all assignment sequences; exponential in ``k``."""
    from itertools import product

    maps = assignment_maps(len(truth), len(est))
    loc, missed, false = _step_costs(_position_tensor(truth, k), _position_tensor(est, k), maps, cfg)
    step_cost = loc + missed + false
    sw = _switch_matrix(maps, cfg)
    best = np.inf
    for seq in product(range(len(maps)), repeat=k):
        total = sum(step_cost[m, t] for t, m in enumerate(seq))
        total += sum(sw[seq[t - 1], seq[t]] for t in range(1, k))
        best = min(best, total)
    return float(best)


def rms_trajectory_error(est, truth, k: int, cfg: TrajMetricConfig = TrajMetricConfig()) -> float:
    return float((trajectory_gospa(est, truth, k, cfg).total / k) ** (1.0 / cfg.order))


def matched_estimate(est, truth, k: int, target: int, cfg: TrajMetricConfig = TrajMetricConfig()):
    """Estimate assigned to ``truth[target]`` at the final step of the optimal DP path."""
    if not est:
        return None
    _, path = trajectory_gospa_dp(est, truth, k, cfg)
    j = path[-1][target]
    return None if j < 0 else est[j]


def position_errors(est: TrajectoryState | None, truth: TrajectoryState, steps: Sequence[int]) -> np.ndarray:
    """Euclidean position error per step; NaN where either trajectory is absent."""
    out = np.full(len(steps), np.nan)
    if est is None:
        return out
    for n, t in enumerate(steps):
        a = est.state_at(t)
        b = truth.state_at(t)
        if a is not None and b is not None:
            out[n] = np.linalg.norm(a[:3] - b[:3])
    return out


def per_target_rmse(errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """RMS over Monte-Carlo runs of per-step errors, shape (runs, steps).

    NaN entries (no estimate) are skipped; steps with no estimate in any run
    come back as NaN. Also returns the per-step count of defined runs.
    """
    errors = np.asarray(errors, dtype=float)
    defined = ~np.isnan(errors)
    count = defined.sum(axis=0)
    sq = np.where(defined, errors, 0.0) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        rmse = np.sqrt(sq.sum(axis=0) / count)
    rmse[count == 0] = np.nan
    return rmse, count


GOSPA_COLUMNS = ["step", "rms_total", "loc", "missed", "false", "switch"]
RMSE_COLUMNS = ["step", "rmse", "count_defined"]


def write_gospa_csv(path, steps, rms, loc, missed, false, switch) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GOSPA_COLUMNS)
        for row in zip(steps, rms, loc, missed, false, switch):
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])


def write_rmse_csv(path, steps, rmse, count, target_label: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", f"rmse_{target_label}", "count_defined"])
        for s, v, n in zip(steps, rmse, count):
            w.writerow([int(s), _fmt(v), int(n)])


def _fmt(v) -> str:
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(x) if x != "" else np.nan for x in r] for r in body], dtype=float)
    return header, data.reshape(len(body), len(header))
