"""Trajectory handover between neighbouring base stations.

After the local prediction step every BS checks each tracked trajectory
against the FoV of every other BS. Trajectories likely to be detected there
are shipped as trajectory-PPP components (weight = hypothesis weight times
existence) and appended to the destination's undetected-trajectory intensity.
The destination MBM part is never touched.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import BsConfig
from .trajectory import PppComponent, TpmbmDensity, TrajectoryBernoulli, TrajectoryGaussian

log = logging.getLogger(__name__)

WIRE_VERSION = 1


class ConditioningError(ValueError):
    pass


class StaleMessageError(ValueError):
    pass


def sigma_points(mean: np.ndarray, cov: np.ndarray, kappa: float | None = None):
    """Unscented sigma points and weights (2d + 1 points)."""
    d = len(mean)
    kappa = 3.0 - d if kappa is None else kappa
    try:
        chol = np.linalg.cholesky((d + kappa) * cov)
    except np.linalg.LinAlgError:
        raise ConditioningError("position covariance is not positive definite") from None
    pts = np.vstack([mean, mean + chol.T, mean - chol.T])
    weights = np.full(2 * d + 1, 1.0 / (2 * (d + kappa)))
    weights[0] = kappa / (d + kappa)
    return pts, weights


def entry_probability(b: TrajectoryBernoulli, dest: BsConfig) -> float:
    g = b.density
    m = g.newest_mean[:3]
    P = g.newest_cov[:3, :3]
    pts, weights = sigma_points(m, 0.5 * (P + P.T))
    inside = np.linalg.norm(pts - dest.position, axis=1) <= dest.fov_radius
    mass = float(weights @ inside)
    return b.existence * dest.detection_prob_inside * mass


@dataclass
class HandoverRegistry:
    """Recently-sent log: (source, dest, track uid) -> step of the last send."""

    cooldown: int = 10
    sent: dict[tuple[int, int, int], int] = field(default_factory=dict)

    def recently_sent(self, source: int, dest: int, uid: int, step: int) -> bool:
        last = self.sent.get((source, dest, uid))
        return last is not None and step - last < self.cooldown

    def record(self, source: int, dest: int, uid: int, step: int) -> None:
        key = (source, dest, uid)
        if key in self.sent and step < self.sent[key]:
            raise ValueError("handover registry entries must be monotone in time")
        self.sent[key] = step


def should_handover(b: TrajectoryBernoulli, w: float, source: BsConfig, dest: BsConfig,
                    reg: HandoverRegistry, gamma: float, step: int, entry: float | None = None) -> bool:
    """Entry test plus recently-sent suppression; records the send when true.

    Trajectories are never offered back to a BS they were received from.
    """
    if dest.id == source.id or dest.id in b.provenance:
        return False
    if reg.recently_sent(source.id, dest.id, b.track_uid, step):
        return False
    if entry is None:
        entry = entry_probability(b, dest)
    if entry < gamma:
        return False
    reg.record(source.id, dest.id, b.track_uid, step)
    return True


@dataclass(eq=False)
class HandoverMessage:
    source_bs: int
    dest_bs: int
    time_step: int
    weight: float
    birth_step: int
    end_step: int
    window_len: int
    window_mean: np.ndarray
    window_cov: np.ndarray
    frozen_history: np.ndarray
    end_probs: np.ndarray
    track_uid: int
    provenance: tuple[int, ...] = ()

    def __post_init__(self):
        if self.source_bs == self.dest_bs:
            raise ValueError("handover source and destination must differ")
        if self.weight < 0:
            raise ValueError("negative handover weight")

    def density(self) -> TrajectoryGaussian:
        return TrajectoryGaussian(self.birth_step, self.end_step, self.window_len, self.window_mean.copy(),
                                  self.window_cov.copy(), self.frozen_history.copy(), self.end_probs.copy())

    # -- wire format: JSON with IEEE-754 binary64 values as hex strings
    def to_dict(self) -> dict:
        return {
            "version": WIRE_VERSION,
            "source_bs": self.source_bs,
            "dest_bs": self.dest_bs,
            "time_step": self.time_step,
            "weight": self.weight.hex(),
            "birth_step": self.birth_step,
            "end_step": self.end_step,
            "window_len": self.window_len,
            "window_mean": _encode_array(self.window_mean),
            "window_cov": _encode_array(self.window_cov),
            "frozen_history": _encode_array(self.frozen_history),
            "end_probs": _encode_array(self.end_probs),
            "track_uid": self.track_uid,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "HandoverMessage":
        if obj.get("version") != WIRE_VERSION:
            raise ValueError(f"unsupported handover message version {obj.get('version')!r}")
        return cls(
            source_bs=int(obj["source_bs"]),
            dest_bs=int(obj["dest_bs"]),
            time_step=int(obj["time_step"]),
            weight=float.fromhex(obj["weight"]),
            birth_step=int(obj["birth_step"]),
            end_step=int(obj["end_step"]),
            window_len=int(obj["window_len"]),
            window_mean=_decode_array(obj["window_mean"]),
            window_cov=_decode_array(obj["window_cov"]),
            frozen_history=_decode_array(obj["frozen_history"]),
            end_probs=_decode_array(obj["end_probs"]),
            track_uid=int(obj["track_uid"]),
            provenance=tuple(int(i) for i in obj.get("provenance", [])),
        )

    def encode(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def decode(cls, text: str) -> "HandoverMessage":
        return cls.from_dict(json.loads(text))


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel(order="C")]}


def _decode_array(obj: Mapping) -> np.ndarray:
    data = np.array([float.fromhex(v) for v in obj["data"]], dtype=np.float64)
    return data.reshape(obj["shape"])


def to_handover_message(w: float, b: TrajectoryBernoulli, source: int, dest: int, step: int) -> HandoverMessage:
    g = b.density
    return HandoverMessage(source, dest, step, w * b.existence, g.birth_step, g.end_step, g.window_len,
                           g.mean.copy(), g.cov.copy(), g.frozen.copy(), g.end_probs.copy(), b.track_uid,
                           tuple(sorted({*b.provenance, source})))


def merge_handover(d: TpmbmDensity, msg: HandoverMessage) -> TpmbmDensity:
    if msg.time_step != d.time_step:
        raise StaleMessageError(f"message for step {msg.time_step} delivered at step {d.time_step}")
    out = d.copy()
    out.ppp.append(PppComponent(msg.weight, msg.density(), origin=f"handover:{msg.source_bs}",
                                provenance=msg.provenance))
    return out


def collect_messages(densities: Mapping[int, TpmbmDensity], bs_configs: Mapping[int, BsConfig],
                     registries: Mapping[int, HandoverRegistry], gamma: float) -> list[HandoverMessage]:
    """Outgoing messages of one round in (source, hypothesis, Bernoulli, dest) order."""
    messages = []
    for src_id in sorted(densities):
        d = densities[src_id]
        src = bs_configs[src_id]
        reg = registries[src_id]
        step = d.time_step
        entry_cache: dict[tuple[int, int], float] = {}
        for h in d.hypotheses:
            for i in h.bernoulli_refs:
                b = d.pool[i]
                for dst_id in sorted(bs_configs):
                    dst = bs_configs[dst_id]
                    if dst_id == src_id or dst_id in b.provenance or reg.recently_sent(src_id, dst_id, b.track_uid, step):
                        continue
                    if (i, dst_id) not in entry_cache:
                        entry_cache[i, dst_id] = entry_probability(b, dst)
                    if should_handover(b, h.weight, src, dst, reg, gamma, step, entry_cache[i, dst_id]):
                        messages.append(to_handover_message(h.weight, b, src_id, dst_id, step))
    return messages


def run_handover_round(densities: Mapping[int, TpmbmDensity], bs_configs: Mapping[int, BsConfig],
                       registries: Mapping[int, HandoverRegistry], gamma: float,
                       delivery: str = "coordinator") -> tuple[dict[int, TpmbmDensity], list[HandoverMessage]]:
    """One handover barrier across all base stations.

    ``delivery="coordinator"`` applies every merge in global message order;
    ``delivery="mailbox"`` sorts messages into per-destination mailboxes,
    each destination applying its own. Both give identical densities.
    """
    messages = collect_messages(densities, bs_configs, registries, gamma)
    out = dict(densities)
    if delivery == "coordinator":
        for msg in messages:
            out[msg.dest_bs] = _deliver(out[msg.dest_bs], msg)
    elif delivery == "mailbox":
        boxes: dict[int, list[HandoverMessage]] = {i: [] for i in out}
        for msg in messages:
            boxes[msg.dest_bs].append(HandoverMessage.decode(msg.encode()))
        for dst_id, box in boxes.items():
            for msg in box:
                out[dst_id] = _deliver(out[dst_id], msg)
    else:
        raise ValueError(f"unknown delivery mode {delivery!r}")
    return out, messages


def _deliver(d: TpmbmDensity, msg: HandoverMessage) -> TpmbmDensity:
    try:
        return merge_handover(d, msg)
    except StaleMessageError as exc:
        log.warning("dropping handover message: %s", exc)
        return d
