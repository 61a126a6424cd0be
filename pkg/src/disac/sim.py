"""Scenario definition, ground truth and the multi-BS simulation loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .filter import FilterConfig, TpmbmFilter, default_birth, extract_tracks
from .geometry import (SPEED_OF_LIGHT, BsConfig, ConfigError, rotation_from_euler,
                       sample_detections_and_clutter)
from .handover import HandoverRegistry, run_handover_round
from .metrics import (TrajMetricConfig, UnsupportedSizeError, matched_estimate, position_errors,
                      trajectory_gospa)
from .motion import MotionConfig, cv_predict_mean, sample_transition
from .trajectory import TpmbmDensity, TrajectoryState

log = logging.getLogger(__name__)

MODES = ("handover", "independent")

# purpose tags for child RNG streams
TAG_TRUTH = 1
TAG_MEAS = 2


@dataclass(frozen=True)
class TargetSpec:
    initial_state: np.ndarray
    birth_step: int = 1
    death_step: int | None = None


@dataclass(frozen=True)
class BirthSpec:
    weight: float = 0.05
    initial_weight: float | None = 1.0
    vel_std_xy: float = 15.0
    vel_std_z: float = 0.1


@dataclass
class ScenarioConfig:
    bs_list: list[BsConfig]
    targets: list[TargetSpec]
    motion: MotionConfig = field(default_factory=MotionConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    birth: BirthSpec = field(default_factory=BirthSpec)
    metric: TrajMetricConfig = field(default_factory=TrajMetricConfig)
    steps: int = 100
    gamma: float = 0.5
    cooldown: int = 10
    mc_runs: int = 100
    seed: int = 0
    mode: str = "handover"
    noise_free_truth: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.mc_runs < 1:
            raise ConfigError("mc_runs must be at least 1")
        ids = [b.id for b in self.bs_list]
        if not ids:
            raise ConfigError("at least one base station is required")
        if len(set(ids)) != len(ids):
            raise ConfigError("base station ids must be unique")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.cooldown < 0:
            raise ConfigError("cooldown must be non-negative")
        for t in self.targets:
            death = self.steps if t.death_step is None else t.death_step
            if not 1 <= t.birth_step <= death:
                raise ConfigError("target birth/death steps inconsistent")

    def bs_by_id(self) -> dict[int, BsConfig]:
        return {b.id: b for b in self.bs_list}

    def filter_for(self, bs: BsConfig) -> FilterConfig:
        birth = default_birth(bs, self.birth.weight, self.birth.vel_std_xy, self.birth.vel_std_z)
        return replace(self.filter, birth=birth, initial_birth_weight=self.birth.initial_weight)


# ------------------------------------------------------------------ config I/O

def _noise_cov(obj: dict) -> np.ndarray:
    cov = np.asarray(obj["measurement_noise_cov"], dtype=float)
    unit = obj.get("toa_variance_unit", "s2")
    if unit == "range_m2":
        # TOA noise quoted as a one-way range variance: tau = 2 r / c
        cov = cov.copy()
        scale = 2.0 / SPEED_OF_LIGHT
        cov[0, :] *= scale
        cov[:, 0] *= scale
    elif unit != "s2":
        raise ConfigError(f"unknown toa_variance_unit {unit!r}")
    return cov


def config_from_dict(obj: dict) -> ScenarioConfig:
    try:
        bs_list = []
        for b in obj["base_stations"]:
            orient = b.get("orientation")
            if orient is None:
                orient = rotation_from_euler(*b.get("orientation_euler", [0.0, 0.0, 0.0]))
            bs_list.append(BsConfig(
                id=int(b["id"]), position=b["position"], orientation=orient,
                fov_radius=float(b["fov_radius"]), detection_prob_inside=float(b["detection_prob_inside"]),
                clutter_rate=float(b["clutter_rate"]), measurement_noise_cov=_noise_cov(b)))
        targets = [TargetSpec(np.asarray(t["initial_state"], dtype=float), int(t.get("birth_step", 1)),
                              t.get("death_step")) for t in obj["targets"]]
        m = obj.get("motion", {})
        motion = MotionConfig(float(m.get("dt", 0.1)), tuple(m.get("accel_std", (0.05, 0.05, 0.0))),
                              float(m.get("survival_prob", 0.99)))
        f = dict(obj.get("filter", {}))
        gate_prob = f.pop("gate_prob", None)
        if gate_prob is not None:
            f["gate_threshold"] = float(chi2.ppf(gate_prob, 3))
        birth = BirthSpec(**f.pop("birth", {}))
        filt = FilterConfig(**f)
        metric = TrajMetricConfig(**obj.get("metric", {}))
        h = obj.get("handover", {})
        return ScenarioConfig(
            bs_list=bs_list, targets=targets, motion=motion, filter=filt, birth=birth, metric=metric,
            steps=int(obj.get("steps", 100)), gamma=float(h.get("gamma", 0.5)),
            cooldown=int(h.get("cooldown", 10)), mc_runs=int(obj.get("mc_runs", 100)),
            seed=int(obj.get("seed", 0)), mode=obj.get("mode", "handover"),
            noise_free_truth=bool(obj.get("noise_free_truth", False)))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario: {exc!r}") from exc


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(obj)


# ------------------------------------------------------------------ RNG and truth

def child_rng(seed: int, tag: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tag, *keys))
    return np.random.default_rng(ss)


@dataclass
class GroundTruth:
    trajectories: list[TrajectoryState]
    visible: dict[int, np.ndarray]  # bs id -> (n_targets, steps) bool

    def positions_at(self, step: int) -> list[np.ndarray]:
        out = []
        for tr in self.trajectories:
            s = tr.state_at(step)
            if s is not None:
                out.append(s[:3])
        return out


def generate_ground_truth(cfg: ScenarioConfig, mc_index: int = 0) -> GroundTruth:
    trajs = []
    for n, t in enumerate(cfg.targets):
        rng = child_rng(cfg.seed, TAG_TRUTH, n, mc_index)
        death = cfg.steps if t.death_step is None else min(t.death_step, cfg.steps)
        x = np.asarray(t.initial_state, dtype=float)
        states = [x]
        for _ in range(t.birth_step, death):
            x = cv_predict_mean(x, cfg.motion) if cfg.noise_free_truth else sample_transition(x, cfg.motion, rng)
            states.append(x)
        trajs.append(TrajectoryState(t.birth_step, death, np.array(states)))
    visible = {}
    for bs in cfg.bs_list:
        vis = np.zeros((len(trajs), cfg.steps), dtype=bool)
        for n, tr in enumerate(trajs):
            for k in range(tr.birth_step, tr.end_step + 1):
                vis[n, k - 1] = np.linalg.norm(tr.state_at(k)[:3] - bs.position) <= bs.fov_radius
        visible[bs.id] = vis
    return GroundTruth(trajs, visible)


def first_visible_step(truth: GroundTruth, bs_id: int, target: int) -> int | None:
    idx = np.flatnonzero(truth.visible[bs_id][target])
    return int(idx[0]) + 1 if len(idx) else None


# ------------------------------------------------------------------ simulation

@dataclass
class HandoverEvent:
    step: int
    source: int
    dest: int
    track_uid: int
    weight: float
    target: int | None  # truth target nearest to the handed-over mean, if within the cutoff


@dataclass
class RunResult:
    mode: str
    mc_index: int
    steps: int
    gospa: dict[int, np.ndarray]  # bs id -> (steps, 5): total, loc, missed, false, switch
    final_estimates: dict[int, list[tuple[int, TrajectoryState]]]
    target_errors: dict[int, np.ndarray]  # bs id -> (n_targets, steps) final-trajectory position error
    matched_birth: dict[int, list[int | None]]  # bs id -> birth step of estimate matched to each target
    handovers: list[HandoverEvent]
    measurements: dict[int, list[np.ndarray]] | None = None
    max_weight_error: float = 0.0
    mbm_violations: int = 0
    oversize_steps: int = 0
    # bs id -> (steps,) number of extracted trajectories alive at each step
    cardinality: dict[int, np.ndarray] | None = None


def mbm_fingerprint(d: TpmbmDensity) -> bytes:
    """Byte serialisation of the MBM part (hypotheses and their Bernoullis)."""
    parts = []
    for h in d.hypotheses:
        parts.append(np.float64(h.weight).tobytes())
        for i in h.bernoulli_refs:
            b = d.pool[i]
            g = b.density
            parts += [np.int64([i, b.track_uid, g.birth_step, g.end_step]).tobytes(),
                      np.float64(b.existence).tobytes(), g.mean.tobytes(), g.cov.tobytes(),
                      g.frozen.tobytes(), g.end_probs.tobytes()]
        parts.append(b"|")
    return b"".join(parts)


def _nearest_target(truth: GroundTruth, pos: np.ndarray, step: int, cutoff: float) -> int | None:
    best, best_d = None, cutoff
    for n, tr in enumerate(truth.trajectories):
        s = tr.state_at(step)
        if s is None:
            continue
        dist = np.linalg.norm(s[:3] - pos)
        if dist <= best_d:
            best, best_d = n, dist
    return best


def run_scenario(cfg: ScenarioConfig, mc_index: int = 0, mode: str | None = None, *,
                 check_invariants: bool = False, keep_measurements: bool = False,
                 delivery: str = "coordinator") -> RunResult:
    mode = cfg.mode if mode is None else mode
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    truth = generate_ground_truth(cfg, mc_index)
    bs_map = cfg.bs_by_id()
    ids = sorted(bs_map)
    filters = {i: TpmbmFilter(bs_map[i], cfg.motion, cfg.filter_for(bs_map[i])) for i in ids}
    meas_rng = {i: child_rng(cfg.seed, TAG_MEAS, i, mc_index) for i in ids}
    registries = {i: HandoverRegistry(cfg.cooldown) for i in ids}
    K = cfg.steps
    gospa = {i: np.full((K, 5), np.nan) for i in ids}
    card = {i: np.zeros(K, dtype=int) for i in ids}
    handovers: list[HandoverEvent] = []
    measurements = {i: [] for i in ids} if keep_measurements else None
    max_weight_error = 0.0
    mbm_violations = 0
    oversize = 0

    def weight_error(d: TpmbmDensity) -> float:
        return abs(sum(h.weight for h in d.hypotheses) - 1.0) if d.hypotheses else 0.0

    for k in range(1, K + 1):
        for i in ids:
            filters[i].predict()
        if check_invariants:
            max_weight_error = max([max_weight_error] + [weight_error(filters[i].density) for i in ids])
        if mode == "handover":
            before = {i: mbm_fingerprint(filters[i].density) for i in ids} if check_invariants else None
            dens, msgs = run_handover_round({i: filters[i].density for i in ids}, bs_map, registries,
                                            cfg.gamma, delivery=delivery)
            for i in ids:
                filters[i].density = dens[i]
            if check_invariants:
                mbm_violations += sum(before[i] != mbm_fingerprint(dens[i]) for i in ids)
            for msg in msgs:
                pos = msg.window_mean[-6:-3]
                handovers.append(HandoverEvent(k, msg.source_bs, msg.dest_bs, msg.track_uid, msg.weight,
                                               _nearest_target(truth, pos, k, cfg.metric.cutoff)))
        truth_pos = truth.positions_at(k)
        for i in ids:
            mset = sample_detections_and_clutter(bs_map[i], truth_pos, meas_rng[i], time_step=k)
            if keep_measurements:
                measurements[i].append(mset.z.copy())
            filters[i].update(mset)
            if check_invariants:
                max_weight_error = max(max_weight_error, weight_error(filters[i].density))
            est = [tr for _, tr in extract_tracks(filters[i].density, filters[i].cfg)]
            card[i][k - 1] = sum(tr.end_step == k for tr in est)
            truth_k = [t for t in (tr.truncated(k) for tr in truth.trajectories) if t is not None]
            try:
                c = trajectory_gospa(est, truth_k, k, cfg.metric)
                gospa[i][k - 1] = c
            except UnsupportedSizeError:
                oversize += 1

    final = {i: extract_tracks(filters[i].density, filters[i].cfg) for i in ids}
    steps = np.arange(1, K + 1)
    target_errors = {}
    matched_birth = {}
    for i in ids:
        est = [tr for _, tr in final[i]]
        errs = np.full((len(truth.trajectories), K), np.nan)
        births: list[int | None] = []
        for n, tr in enumerate(truth.trajectories):
            try:
                m = matched_estimate(est, truth.trajectories, K, n, cfg.metric)
            except UnsupportedSizeError:
                m = None
            errs[n] = position_errors(m, tr, steps)
            births.append(None if m is None else m.birth_step)
        target_errors[i] = errs
        matched_birth[i] = births
    return RunResult(mode, mc_index, K, gospa, final, target_errors, matched_birth, handovers,
                     measurements, max_weight_error, mbm_violations, oversize, card)
