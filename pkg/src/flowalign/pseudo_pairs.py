"""Cross-domain pseudo-pair mining from normalized hand/object transitions.

A transition packs the normalized fingertip and object poses of two
consecutive timesteps. Transitions are compared with a pose + velocity
similarity score; each source-domain transition queries its N nearest
target-domain transitions, matches above the validity threshold or with
disagreeing binary contact labels are dropped, and the survivors carry the
step-i latents as a noisy correspondence set.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .data_model import TactileFrame, Trajectory, contact_norm

from .errors import ParseError, UsageError, ValidationError
from .normalize import TaskStats, normalize_trajectory

log = logging.getLogger(__name__)

PAIRSET_VERSION = 1


@dataclass
class PairConfig:
    balance: float = 1.0  # weight of the velocity terms in the similarity score
    neighbors: int = 3
    delta: float = 2.0  # validity threshold on the similarity score
    contact_threshold_human: float = 1200.0
    contact_threshold_robot: float = 30.0

    def validate(self) -> None:
        if self.balance <= 0.0:
            raise ValidationError(f"balance must be positive, got {self.balance}")
        if self.neighbors < 1:
            raise ValidationError(f"neighbors must be >= 1, got {self.neighbors}")
        if self.delta <= 0.0:
            raise ValidationError(f"delta must be positive, got {self.delta}")
        if min(self.contact_threshold_human, self.contact_threshold_robot) <= 0.0:
            raise ValidationError("contact thresholds must be positive")

    def threshold(self, domain: str) -> float:
        return self.contact_threshold_human if domain == "human" else self.contact_threshold_robot

    def to_dict(self) -> dict:
        return {
            "balance": self.balance,
            "neighbors": self.neighbors,
            "delta": self.delta,
            "contact_threshold_human": self.contact_threshold_human,
            "contact_threshold_robot": self.contact_threshold_robot,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PairConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class TransitionObservation:
    """Normalized poses at steps i and i+1 of one trajectory, with deltas."""

    domain: str
    task_id: str
    traj_index: int
    step: int
    finger: int
    p0: np.ndarray  # normalized fingertip position at step i
    o0: np.ndarray  # normalized object pose (position ++ orientation), 6 values
    p1: np.ndarray
    o1: np.ndarray
    dp: np.ndarray  # p1 - p0
    do: np.ndarray  # o1 - o0
    contact: bool
    latent: np.ndarray
    stats_fingerprint: str

    @property
    def key(self) -> tuple:
        return (self.traj_index, self.step, self.finger)


@dataclass
class PseudoPair:
    human_latent: np.ndarray
    robot_latent: np.ndarray
    score: float
    contact: bool
    task_id: str
    human_key: tuple  # (traj_index, step, finger)
    robot_key: tuple


def is_contact(frame: TactileFrame, threshold: float) -> bool:
    """Contact iff the raw signal norm reaches the threshold (boundary counts)."""
    if threshold <= 0.0:
        raise ValidationError(f"contact threshold must be positive, got {threshold}")
    return contact_norm(frame) >= threshold


def _dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # shared by the scalar and the batched scoring paths so both produce
    # bit-identical values
    diff = a - b
    return np.sqrt((diff * diff).sum(axis=-1))


def similarity(a: TransitionObservation, b: TransitionObservation, balance: float) -> float:
    """Pose + weighted velocity distance between two normalized transitions."""
    if a.stats_fingerprint != b.stats_fingerprint:
        raise UsageError(
            "transitions were normalized under different task statistics "
            f"({a.stats_fingerprint} vs {b.stats_fingerprint})"
        )
    if balance <= 0.0:
        raise ValidationError(f"balance must be positive, got {balance}")
    return float(
        _dist(a.p0, b.p0)
        + _dist(a.o0, b.o0)
        + balance * _dist(a.dp, b.dp)
        + balance * _dist(a.do, b.do)
    )


def build_transitions(
    traj: Trajectory,
    traj_index: int,
    latents: np.ndarray,
    stats: TaskStats,
    contact_threshold: float,
) -> list[TransitionObservation]:
    """Consecutive-step transitions for every fingertip of one trajectory.

    ``latents`` must be the (length, fingers, d) encoding of the same
    trajectory; the step-i latent and step-i contact label ride along.
    """
    if not traj.has_object_pose:
        raise ValidationError("transitions need object poses (trajectory is outside the aligned subset)")
    if latents.shape[:2] != (traj.length, traj.fingers):
        raise UsageError(
            f"latents shape {latents.shape} does not match trajectory ({traj.length}, {traj.fingers})"
        )
    p_norm, s_norm, q_norm = normalize_trajectory(traj, stats)
    o_norm = np.concatenate([s_norm, q_norm], axis=1)
    fp = stats.fingerprint
    out = []
    for t in range(traj.length - 1):
        for k in range(traj.fingers):
            p0, p1 = p_norm[t, k], p_norm[t + 1, k]
            o0, o1 = o_norm[t], o_norm[t + 1]
            out.append(
                TransitionObservation(
                    domain=traj.domain,
                    task_id=traj.task_id,
                    traj_index=traj_index,
                    step=t,
                    finger=k,
                    p0=p0,
                    o0=o0,
                    p1=p1,
                    o1=o1,
                    dp=p1 - p0,
                    do=o1 - o0,
                    contact=is_contact(traj.frames[t][k], contact_threshold),
                    latent=latents[t, k],
                    stats_fingerprint=fp,
                )
            )
    return out


def _stack(transitions: list[TransitionObservation]):
    return {
        "p0": np.stack([t.p0 for t in transitions]),
        "o0": np.stack([t.o0 for t in transitions]),
        "dp": np.stack([t.dp for t in transitions]),
        "do": np.stack([t.do for t in transitions]),
    }


def mine_pairs(
    human_transitions: list[TransitionObservation],
    robot_transitions: list[TransitionObservation],
    config: PairConfig,
) -> list[PseudoPair]:
    """Nearest-neighbor pseudo-pairs from human to robot transitions.

    For each human transition the N lowest-score robot transitions of the
    same fingertip index are candidates (ties broken toward the lowest robot
    trajectory/step); candidates scoring at or above delta or disagreeing on
    the contact label are discarded. Output order is canonical in the
    provenance keys. Zero survivors is a diagnostic, not an error.
    """
    config.validate()
    if not robot_transitions:
        raise UsageError("cannot mine pairs against an empty robot transition set")
    if not human_transitions:
        raise UsageError("cannot mine pairs from an empty human transition set")
    fingerprints = {t.stats_fingerprint for t in human_transitions + robot_transitions}
    if len(fingerprints) > 1:
        raise UsageError("all transitions must share one task-stats fingerprint")

    pairs: list[PseudoPair] = []
    robot_by_finger: dict[int, list[TransitionObservation]] = {}
    for t in robot_transitions:
        robot_by_finger.setdefault(t.finger, []).append(t)

    for finger, robots in sorted(robot_by_finger.items()):
        arrays = _stack(robots)
        keys = np.array([r.key for r in robots])
        order_traj, order_step = keys[:, 0], keys[:, 1]
        humans = [h for h in human_transitions if h.finger == finger]
        for h in humans:
            scores = (
                _dist(arrays["p0"], h.p0)
                + _dist(arrays["o0"], h.o0)
                + config.balance * _dist(arrays["dp"], h.dp)
                + config.balance * _dist(arrays["do"], h.do)
            )
            ranking = np.lexsort((order_step, order_traj, scores))
            for j in ranking[: config.neighbors]:
                score = float(scores[j])
                if score >= config.delta:
                    continue
                r = robots[int(j)]
                if r.contact != h.contact:
                    continue
                pairs.append(
                    PseudoPair(
                        human_latent=h.latent,
                        robot_latent=r.latent,
                        score=score,
                        contact=h.contact,
                        task_id=h.task_id,
                        human_key=h.key,
                        robot_key=r.key,
                    )
                )
    if not pairs:
        log.warning(
            "pseudo-pair mining produced no survivors (delta=%.3g, neighbors=%d)",
            config.delta,
            config.neighbors,
        )
    pairs.sort(key=lambda p: (p.human_key, p.robot_key))
    return pairs


# ---------------------------------------------------------------------------
# Pair-set files


def save_pairs(pairs: list[PseudoPair], config: PairConfig, path, latent_fingerprint: str = "") -> None:
    if pairs:
        dims = {p.human_latent.shape for p in pairs} | {p.robot_latent.shape for p in pairs}
        if len(dims) != 1:
            raise ValidationError("pairs carry latents of inconsistent dimension")
    header = {
        "kind": "pseudo_pairs",
        "format_version": PAIRSET_VERSION,
        "n_pairs": len(pairs),
        "latent_dim": int(pairs[0].human_latent.shape[0]) if pairs else 0,
        "latent_fingerprint": latent_fingerprint,
        "config": config.to_dict(),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in pairs:
            record = {
                "human_latent": [float(v) for v in p.human_latent],
                "robot_latent": [float(v) for v in p.robot_latent],
                "score": p.score,
                "contact": p.contact,
                "task_id": p.task_id,
                "human_key": list(p.human_key),
                "robot_key": list(p.robot_key),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_pairs(path) -> tuple[list[PseudoPair], PairConfig, str]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty pair-set file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:1: malformed header: {exc}") from exc
    if header.get("kind") != "pseudo_pairs":
        raise ParseError(f"{path}: not a pseudo-pair file")
    if header.get("format_version") != PAIRSET_VERSION:
        raise ParseError(f"{path}: unsupported format version {header.get('format_version')!r}")
    if len(lines) - 1 != int(header["n_pairs"]):
        raise ParseError(
            f"{path}: truncated pair set, header declares {header['n_pairs']} pairs, "
            f"found {len(lines) - 1}"
        )
    pairs = []
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{i + 2}: malformed record: {exc}") from exc
        pairs.append(
            PseudoPair(
                human_latent=np.asarray(rec["human_latent"], dtype=np.float64),
                robot_latent=np.asarray(rec["robot_latent"], dtype=np.float64),
                score=float(rec["score"]),
                contact=bool(rec["contact"]),
                task_id=rec["task_id"],
                human_key=tuple(rec["human_key"]),
                robot_key=tuple(rec["robot_key"]),
            )
        )
    return pairs, PairConfig.from_dict(header["config"]), header.get("latent_fingerprint", "")
