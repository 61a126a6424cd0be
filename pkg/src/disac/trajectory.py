"""Trajectory PMBM data model.

A trajectory density keeps the most recent ``window_len`` states jointly
Gaussian; older states are frozen as point estimates (L-scan approximation).
The end-time distribution is kept explicitly so ended trajectories are never
deleted, only their ``end_probs`` shift mass away from the current step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

STATE_DIM = 6


class DegenerateDensityError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryState:
    birth_step: int
    end_step: int
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float).reshape(-1, STATE_DIM)
        object.__setattr__(self, "states", states)
        if self.end_step < self.birth_step:
            raise ValueError("trajectory ends before it begins")
        if len(states) != self.end_step - self.birth_step + 1:
            raise ValueError("state sequence length does not match (birth, end) steps")

    def state_at(self, step: int):
        if self.birth_step <= step <= self.end_step:
            return self.states[step - self.birth_step]
        return None

    def truncated(self, step: int) -> "TrajectoryState | None":
        if step < self.birth_step:
            return None
        end = min(step, self.end_step)
        return TrajectoryState(self.birth_step, end, self.states[: end - self.birth_step + 1])


@dataclass(frozen=True, eq=False)
class TrajectoryGaussian:
    birth_step: int
    end_step: int
    window_len: int
    mean: np.ndarray
    cov: np.ndarray
    frozen: np.ndarray = field(default_factory=lambda: np.zeros((0, STATE_DIM)))
    end_probs: np.ndarray | None = None

    def __post_init__(self):
        if self.end_probs is None:
            probs = np.zeros(self.end_step - self.birth_step + 1)
            probs[-1] = 1.0
            object.__setattr__(self, "end_probs", probs)

    @classmethod
    def single(cls, step: int, mean, cov, window_len: int) -> "TrajectoryGaussian":
        return cls(step, step, window_len, np.asarray(mean, dtype=float).copy(),
                   np.asarray(cov, dtype=float).copy())

    @property
    def window_size(self) -> int:
        return len(self.mean) // STATE_DIM

    @property
    def alive_prob(self) -> float:
        return float(self.end_probs[-1])

    @property
    def newest_mean(self) -> np.ndarray:
        return self.mean[-STATE_DIM:]

    @property
    def newest_cov(self) -> np.ndarray:
        return self.cov[-STATE_DIM:, -STATE_DIM:]

    @property
    def length(self) -> int:
        return self.end_step - self.birth_step + 1

    def predict(self, F: np.ndarray, Q: np.ndarray, survival_prob: float) -> "TrajectoryGaussian":
        g = self
        if g.window_size >= g.window_len:
            g = lscan_slide(g)
        n = len(g.mean)
        P_last = g.cov[:, n - STATE_DIM:]
        mean = np.empty(n + STATE_DIM)
        mean[:n] = g.mean
        mean[n:] = F @ g.mean[n - STATE_DIM:]
        cov = np.empty((n + STATE_DIM, n + STATE_DIM))
        cov[:n, :n] = g.cov
        cross = P_last @ F.T
        cov[:n, n:] = cross
        cov[n:, :n] = cross.T
        cov[n:, n:] = F @ P_last[n - STATE_DIM:] @ F.T + Q
        alive = g.end_probs[-1]
        end_probs = np.concatenate([g.end_probs[:-1], [alive * (1.0 - survival_prob), alive * survival_prob]])
        return replace(g, end_step=g.end_step + 1, mean=mean, cov=cov, end_probs=end_probs)

    def with_newest(self, mean: np.ndarray, cov: np.ndarray, end_probs=None) -> "TrajectoryGaussian":
        return replace(self, mean=mean, cov=cov,
                       end_probs=self.end_probs if end_probs is None else end_probs)


def lscan_slide(g: TrajectoryGaussian) -> TrajectoryGaussian:
    """Marginalise the oldest windowed state out and freeze its mean.

    A no-op while the window still has room for another state.
    """
    if g.window_size < g.window_len:
        return g
    oldest = g.mean[:STATE_DIM]
    frozen = np.vstack([g.frozen, oldest[None, :]])
    return replace(g, mean=g.mean[STATE_DIM:].copy(), cov=g.cov[STATE_DIM:, STATE_DIM:].copy(), frozen=frozen)


@dataclass(frozen=True, eq=False)
class TrajectoryBernoulli:
    existence: float
    density: TrajectoryGaussian
    track_uid: int = -1
    # base stations this trajectory has passed through via handover
    provenance: tuple[int, ...] = ()

    def __post_init__(self):
        if not -1e-12 <= self.existence <= 1 + 1e-12:
            raise ValueError(f"existence probability {self.existence} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class PppComponent:
    weight: float
    density: TrajectoryGaussian
    origin: str = "birth"
    provenance: tuple[int, ...] = ()


@dataclass(frozen=True)
class GlobalHypothesis:
    weight: float
    bernoulli_refs: tuple[int, ...]


@dataclass(eq=False)
class TpmbmDensity:
    time_step: int = 0
    ppp: list[PppComponent] = field(default_factory=list)
    hypotheses: list[GlobalHypothesis] = field(default_factory=list)
    pool: dict[int, TrajectoryBernoulli] = field(default_factory=dict)
    next_id: int = 0
    next_uid: int = 0

    def copy(self) -> "TpmbmDensity":
        return TpmbmDensity(self.time_step, list(self.ppp), list(self.hypotheses), dict(self.pool),
                            self.next_id, self.next_uid)

    def hypothesis_bernoullis(self, j: int) -> list[TrajectoryBernoulli]:
        return [self.pool[i] for i in self.hypotheses[j].bernoulli_refs]

    def best_hypothesis(self) -> int | None:
        if not self.hypotheses:
            return None
        return int(np.argmax([h.weight for h in self.hypotheses]))

    def ppp_total_weight(self) -> float:
        return float(sum(c.weight for c in self.ppp))


def normalize_hypotheses(d: TpmbmDensity) -> TpmbmDensity:
    if not d.hypotheses:
        return d
    total = sum(h.weight for h in d.hypotheses)
    if not total > 0:
        raise DegenerateDensityError("all global hypothesis weights are zero")
    out = d.copy()
    out.hypotheses = [GlobalHypothesis(h.weight / total, h.bernoulli_refs) for h in d.hypotheses]
    return out


def prune(d: TpmbmDensity, ppp_thresh: float, bern_thresh: float, max_hyps: int,
          hyp_thresh: float = 0.0, report_thresh: float | None = None) -> TpmbmDensity:
    """Threshold PPP weights, Bernoulli existences and hypothesis weights.

    With ``report_thresh`` set, Bernoullis that are both below it in existence
    and below ``bern_thresh`` in alive existence are dropped too: they can no
    longer be detected or reported. Hypotheses that become identical after
    dropping Bernoullis are merged. Unreferenced pool entries are discarded.
    """
    out = d.copy()
    out.ppp = [c for c in d.ppp if c.weight >= ppp_thresh]

    def keep(b: TrajectoryBernoulli) -> bool:
        if b.existence < bern_thresh:
            return False
        if report_thresh is not None and b.existence < report_thresh:
            return b.existence * b.density.alive_prob >= bern_thresh
        return True

    kept = {i: keep(b) for i, b in d.pool.items()}
    merged: dict[tuple[int, ...], float] = {}
    for h in d.hypotheses:
        refs = tuple(i for i in h.bernoulli_refs if kept[i])
        merged[refs] = merged.get(refs, 0.0) + h.weight
    hyps = [GlobalHypothesis(w, refs) for refs, w in merged.items()]
    if hyps:
        # stable ordering: weight descending, ties by first appearance
        order = sorted(range(len(hyps)), key=lambda i: -hyps[i].weight)
        hyps = [hyps[i] for i in order[:max_hyps]]
        total = sum(h.weight for h in hyps)
        if total > 0 and hyp_thresh > 0:
            keep = [h for h in hyps if h.weight / total >= hyp_thresh]
            hyps = keep or hyps[:1]
    out.hypotheses = hyps
    used = {i for h in hyps for i in h.bernoulli_refs}
    out.pool = {i: b for i, b in d.pool.items() if i in used}
    return normalize_hypotheses(out) if hyps else out


def map_trajectory_estimate(b: TrajectoryBernoulli) -> TrajectoryState:
    """Point estimate of the trajectory, ending at its most probable end step."""
    g = b.density
    states = np.vstack([g.frozen, g.mean.reshape(-1, STATE_DIM)])
    # last maximum: ties resolve to the longer trajectory
    probs = g.end_probs
    end_idx = len(probs) - 1 - int(np.argmax(probs[::-1]))
    return TrajectoryState(g.birth_step, g.birth_step + end_idx, states[: end_idx + 1])


def check_density(d: TpmbmDensity, tol: float = 1e-12) -> None:
    """Assert the structural invariants of a TPMBM density."""
    if d.hypotheses:
        total = sum(h.weight for h in d.hypotheses)
        assert abs(total - 1.0) <= tol, f"hypothesis weights sum to {total}"
    for h in d.hypotheses:
        for i in h.bernoulli_refs:
            assert i in d.pool, f"dangling Bernoulli reference {i}"
    for c in d.ppp:
        assert c.weight >= 0
    for b in d.pool.values():
        assert -tol <= b.existence <= 1 + tol
        cov = b.density.cov
        sym = 0.5 * (cov + cov.T)
        # the joint window may be singular along noise-free axes; the newest
        # state marginal must be strictly positive definite
        assert np.linalg.eigvalsh(sym).min() >= -1e-9 * max(1.0, np.abs(sym).max()), "covariance not PSD"
        newest = 0.5 * (b.density.newest_cov + b.density.newest_cov.T)
        assert np.linalg.eigvalsh(newest).min() > 0, "newest-state covariance not positive definite"


def trajectories_from_states(states: Sequence[np.ndarray], birth_step: int = 1) -> TrajectoryState:
    arr = np.asarray(states, dtype=float).reshape(-1, STATE_DIM)
    return TrajectoryState(birth_step, birth_step + len(arr) - 1, arr)
