"""Per-base-station trajectory PMBM filter (Gaussian, L-scan, extended linearisation)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .assignment import kbest_assignments
from .geometry import (MEAS_SCALE, BsConfig, ConfigError, _inverse_scaled, detection_probability,
                       range_angles, range_angles_jacobian, wrap_angle)
from .motion import MotionConfig, process_noise_cov, transition_matrix
from .trajectory import (GlobalHypothesis, PppComponent, TpmbmDensity, TrajectoryBernoulli,
                         TrajectoryGaussian, TrajectoryState, map_trajectory_estimate, prune)

LOG_2PI = math.log(2 * math.pi)
# Floor for log-probabilities that would otherwise be -inf (p_D = 1 misdetections,
# zero clutter). Keeps assignment costs finite; such hypotheses are pruned.
LOG_FLOOR = -700.0


@dataclass(frozen=True)
class BirthComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class FilterConfig:
    birth: list[BirthComponent] = field(default_factory=list)
    gate_threshold: float = float(chi2.ppf(0.999, 3))
    max_hyps: int = 200
    ppp_thresh: float = 1e-5
    bern_thresh: float = 1e-5
    hyp_thresh: float = 1e-5
    window_len: int = 5
    existence_extract_thresh: float = 0.5
    # birth weight used at the very first step (targets already present)
    initial_birth_weight: float | None = None

    def __post_init__(self):
        if not self.gate_threshold > 0:
            raise ConfigError("gate_threshold must be positive")
        if self.max_hyps < 1:
            raise ConfigError("max_hyps must be at least 1")
        if self.window_len < 1:
            raise ConfigError("window_len must be at least 1")
        if min(self.ppp_thresh, self.bern_thresh, self.hyp_thresh) < 0:
            raise ConfigError("pruning thresholds must be non-negative")


def default_birth(bs: BsConfig, weight: float = 0.05, vel_std_xy: float = 15.0,
                  vel_std_z: float = 0.1) -> list[BirthComponent]:
    """One broad component covering the FoV ball of ``bs``."""
    pos_std = bs.fov_radius / math.sqrt(3.0)
    mean = np.concatenate([bs.position, np.zeros(3)])
    cov = np.diag([pos_std**2] * 3 + [vel_std_xy**2, vel_std_xy**2, vel_std_z**2])
    return [BirthComponent(weight, mean, cov)]


def condition_cov(cov: np.ndarray) -> np.ndarray:
    """Symmetrise. The joint window covariance may be singular (noise-free
    axes make consecutive states exact functions of each other), so no
    jitter is added here."""
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------- prediction

def predict(d: TpmbmDensity, motion: MotionConfig, cfg: FilterConfig) -> TpmbmDensity:
    F = transition_matrix(motion)
    Q = process_noise_cov(motion)
    ps = motion.survival_prob
    k = d.time_step + 1
    out = TpmbmDensity(k, [], list(d.hypotheses), {}, d.next_id, d.next_uid)
    for i, b in d.pool.items():
        out.pool[i] = replace(b, density=b.density.predict(F, Q, ps))
    for c in d.ppp:
        g = c.density.predict(F, Q, ps)
        # undetected trajectories that have ended can never be detected: drop them
        alive = g.alive_prob
        probs = np.zeros_like(g.end_probs)
        probs[-1] = 1.0
        out.ppp.append(replace(c, weight=c.weight * alive, density=replace(g, end_probs=probs)))
    first = k == 1 and cfg.initial_birth_weight is not None
    for comp in cfg.birth:
        w = cfg.initial_birth_weight if first else comp.weight
        out.ppp.append(PppComponent(w, TrajectoryGaussian.single(k, comp.mean, comp.cov, cfg.window_len)))
    return out


# ---------------------------------------------------------------- update

class _Linearized:
    """Innovation statistics of a window density about a linearisation point."""

    __slots__ = ("zhat", "H", "S_inv", "logdet", "PHt", "use_wrap")

    def __init__(self, g: TrajectoryGaussian, H: np.ndarray, zhat: np.ndarray, R: np.ndarray, use_wrap=True):
        P_new = g.cov[:, -6:]
        self.PHt = P_new @ H.T
        S = H @ self.PHt[-6:] + R
        S = 0.5 * (S + S.T)
        chol = np.linalg.cholesky(S)
        inv_chol = np.linalg.inv(chol)
        self.S_inv = inv_chol.T @ inv_chol
        self.logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        self.H = H
        self.zhat = zhat
        self.use_wrap = use_wrap

    def innovation(self, zs: np.ndarray) -> np.ndarray:
        v = zs - self.zhat
        if self.use_wrap:
            v[..., 1] = wrap_angle(v[..., 1])
        return v

    def mahalanobis(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("...i,ij,...j->...", v, self.S_inv, v)

    def loglik(self, d2) -> np.ndarray:
        return -0.5 * (d2 + self.logdet + 3 * LOG_2PI)

    def updated(self, g: TrajectoryGaussian, v: np.ndarray) -> TrajectoryGaussian:
        K = self.PHt @ self.S_inv
        mean = g.mean + K @ v
        cov = condition_cov(g.cov - K @ self.PHt.T)
        probs = np.zeros_like(g.end_probs)
        probs[-1] = 1.0
        return g.with_newest(mean, cov, probs)


def linearize_at_mean(g: TrajectoryGaussian, bs: BsConfig) -> _Linearized:
    x = g.newest_mean
    return _Linearized(g, range_angles_jacobian(bs, x), range_angles(bs, x), bs.scaled_noise_cov)


def linearize_at_measurement(g: TrajectoryGaussian, bs: BsConfig, zs: np.ndarray) -> _Linearized:
    """Linearise about the back-projected measurement position.

    Used for first detections from the PPP, whose prior can be too broad
    (or centred on the sensor) for a prior-mean linearisation.
    """
    point = _inverse_scaled(bs, zs)
    H = range_angles_jacobian(bs, point)
    zhat = zs + H[:, :3] @ (g.newest_mean[:3] - point)
    return _Linearized(g, H, zhat, bs.scaled_noise_cov, use_wrap=False)


def _misdetected(b: TrajectoryBernoulli, q: float) -> TrajectoryBernoulli:
    if q <= 0.0:
        return b
    denom = 1.0 - b.existence * q
    r = 0.0 if denom <= 0.0 else b.existence * (1.0 - q) / denom
    g = b.density
    probs = g.end_probs.copy()
    alive = probs[-1]
    pd = q / alive if alive > 0 else 0.0
    probs[-1] = alive * (1.0 - pd)
    total = probs.sum()
    probs = probs / total if total > 0 else g.end_probs
    return replace(b, existence=min(max(r, 0.0), 1.0), density=replace(g, end_probs=probs))


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else LOG_FLOOR


def gate(b: TrajectoryBernoulli, z, bs: BsConfig, cfg: FilterConfig) -> bool:
    lin = linearize_at_mean(b.density, bs)
    v = lin.innovation(np.asarray(z, dtype=float) * MEAS_SCALE)
    return bool(lin.mahalanobis(v) <= cfg.gate_threshold)


def update(d: TpmbmDensity, mset, bs: BsConfig, cfg: FilterConfig) -> TpmbmDensity:
    zs_all = np.asarray(mset.z, dtype=float).reshape(-1, 3) * MEAS_SCALE
    n_z = len(zs_all)
    clutter = bs.scaled_clutter_intensity()
    log_clutter = math.log(clutter) if clutter > 0 else -math.inf
    out = TpmbmDensity(d.time_step, [], [], {}, d.next_id, d.next_uid)

    # undetected trajectories: thinning and first-detection evidence
    log_e = np.full(n_z, -math.inf)
    best: list[tuple[float, int, _Linearized] | None] = [None] * n_z
    for ci, c in enumerate(d.ppp):
        g = c.density
        q = g.alive_prob * detection_probability(bs, g.newest_mean[:3])
        if q <= 0.0 or c.weight <= 0.0:
            out.ppp.append(c)
            continue
        alive = g.alive_prob
        probs = g.end_probs.copy()
        probs[-1] = alive * (1.0 - q / alive)
        probs = probs / probs.sum() if probs.sum() > 0 else g.end_probs
        out.ppp.append(replace(c, weight=c.weight * (1.0 - q), density=replace(g, end_probs=probs)))
        base = math.log(c.weight) + math.log(q)
        for j in range(n_z):
            lin = linearize_at_measurement(g, bs, zs_all[j])
            d2 = float(lin.mahalanobis(lin.innovation(zs_all[j].copy())))
            if d2 > cfg.gate_threshold:
                continue
            contrib = base + float(lin.loglik(d2))
            log_e[j] = np.logaddexp(log_e[j], contrib)
            if best[j] is None or contrib > best[j][0]:
                best[j] = (contrib, ci, lin)

    new_col = np.empty(n_z)
    newborn: list[TrajectoryBernoulli | None] = [None] * n_z
    for j in range(n_z):
        if best[j] is None:
            new_col[j] = max(log_clutter, LOG_FLOOR)
            continue
        total = np.logaddexp(log_e[j], log_clutter)
        new_col[j] = max(total, LOG_FLOOR)
        r = math.exp(log_e[j] - total)
        _, ci, lin = best[j]
        g = d.ppp[ci].density
        dens = lin.updated(g, lin.innovation(zs_all[j].copy()))
        newborn[j] = TrajectoryBernoulli(min(r, 1.0), dens, out.next_uid, d.ppp[ci].provenance)
        out.next_uid += 1

    # detected trajectories: per-Bernoulli misdetection and detection likelihoods
    hyps = d.hypotheses or [GlobalHypothesis(1.0, ())]
    used = sorted({i for h in hyps for i in h.bernoulli_refs})
    log_miss: dict[int, float] = {}
    log_det: dict[int, np.ndarray] = {}
    innov: dict[int, np.ndarray] = {}
    lins: dict[int, _Linearized] = {}
    qs: dict[int, float] = {}
    for i in used:
        b = d.pool[i]
        g = b.density
        q = g.alive_prob * detection_probability(bs, g.newest_mean[:3])
        qs[i] = q
        log_miss[i] = _safe_log(1.0 - b.existence * q)
        row = np.full(n_z, -math.inf)
        if q > 0.0 and b.existence > 0.0 and n_z:
            lin = linearize_at_mean(g, bs)
            v = lin.innovation(zs_all.copy())
            d2 = lin.mahalanobis(v)
            ok = d2 <= cfg.gate_threshold
            row[ok] = math.log(b.existence) + math.log(q) + lin.loglik(d2[ok])
            lins[i] = lin
            innov[i] = v
        log_det[i] = row

    child_ids: dict[tuple, int] = {}

    def child(key, make) -> int:
        if key not in child_ids:
            child_ids[key] = out.next_id
            out.pool[out.next_id] = make()
            out.next_id += 1
        return child_ids[key]

    def miss_child(i):
        return child(("miss", i), lambda: _misdetected(d.pool[i], qs[i]))

    def det_child(i, j):
        b = d.pool[i]
        return child(("det", i, j), lambda: replace(
            b, existence=1.0, density=lins[i].updated(b.density, innov[i][j])))

    def new_child(j):
        return child(("new", j), lambda: newborn[j])

    log_ws: list[float] = []
    refs_out: list[tuple[int, ...]] = []
    for h in hyps:
        if h.weight <= 0:
            continue
        refs = h.bernoulli_refs
        nb = len(refs)
        base = math.log(h.weight) + sum(log_miss[i] for i in refs)
        if n_z == 0:
            log_ws.append(base)
            refs_out.append(tuple(miss_child(i) for i in refs))
            continue
        cost = np.full((n_z, nb + n_z), math.inf)
        for col, i in enumerate(refs):
            cost[:, col] = -(log_det[i] - log_miss[i])
        cost[np.arange(n_z), nb + np.arange(n_z)] = -new_col
        k_h = max(1, math.ceil(cfg.max_hyps * h.weight))
        for assign, total in kbest_assignments(cost, k_h):
            det_of = {int(assign[j]): j for j in range(n_z) if assign[j] < nb}
            new_refs = [det_child(i, det_of[col]) if col in det_of else miss_child(i)
                        for col, i in enumerate(refs)]
            new_refs += [new_child(j) for j in range(n_z) if assign[j] >= nb and newborn[j] is not None]
            log_ws.append(base - total)
            refs_out.append(tuple(new_refs))

    lw = np.array(log_ws)
    lw = np.exp(lw - lw.max())
    lw /= lw.sum()
    out.hypotheses = [GlobalHypothesis(float(w), r) for w, r in zip(lw, refs_out)]
    return prune(out, cfg.ppp_thresh, cfg.bern_thresh, cfg.max_hyps, cfg.hyp_thresh,
                 report_thresh=cfg.existence_extract_thresh)


# ---------------------------------------------------------------- estimation

def extract_tracks(d: TpmbmDensity, cfg: FilterConfig) -> list[tuple[int, TrajectoryState]]:
    """(track uid, trajectory) pairs from the most likely global hypothesis."""
    j = d.best_hypothesis()
    if j is None:
        return []
    out = []
    for i in d.hypotheses[j].bernoulli_refs:
        b = d.pool[i]
        if b.existence >= cfg.existence_extract_thresh:
            out.append((b.track_uid, map_trajectory_estimate(b)))
    return out


def extract_estimates(d: TpmbmDensity, cfg: FilterConfig) -> list[TrajectoryState]:
    return [traj for _, traj in extract_tracks(d, cfg)]


class TpmbmFilter:
    """Filter state of one base station."""

    def __init__(self, bs: BsConfig, motion: MotionConfig, cfg: FilterConfig):
        self.bs = bs
        self.motion = motion
        self.cfg = cfg
        self.density = TpmbmDensity()

    def predict(self) -> TpmbmDensity:
        self.density = predict(self.density, self.motion, self.cfg)
        return self.density

    def update(self, mset) -> TpmbmDensity:
        self.density = update(self.density, mset, self.bs, self.cfg)
        return self.density

    def estimates(self) -> list[TrajectoryState]:
        return extract_estimates(self.density, self.cfg)
