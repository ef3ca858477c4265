"""Task-level pose normalization.

Statistics come from robot-domain trajectories only and the identical
transform is then applied to both embodiments: subtract the mean, divide by
the maximum per-axis standard deviation. Positions, object positions, and
object orientations (rotation vectors, treated as plain Euclidean vectors)
each get their own statistics.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data_model import Trajectory
from .errors import DegenerateTaskError, UsageError, ValidationError

KINDS = ("fingertip", "object_position", "object_orientation")

_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class TaskStats:
    task_id: str
    mu_p: np.ndarray
    sigma_p: float
    mu_s: np.ndarray
    sigma_s: float
    mu_q: np.ndarray
    sigma_q: float

    @property
    def fingerprint(self) -> str:
        payload = {
            "task_id": self.task_id,
            "mu_p": [float(v) for v in self.mu_p],
            "sigma_p": self.sigma_p,
            "mu_s": [float(v) for v in self.mu_s],
            "sigma_s": self.sigma_s,
            "mu_q": [float(v) for v in self.mu_q],
            "sigma_q": self.sigma_q,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "mu_p": [float(v) for v in self.mu_p],
            "sigma_p": self.sigma_p,
            "mu_s": [float(v) for v in self.mu_s],
            "sigma_s": self.sigma_s,
            "mu_q": [float(v) for v in self.mu_q],
            "sigma_q": self.sigma_q,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskStats":
        return cls(
            task_id=data["task_id"],
            mu_p=np.asarray(data["mu_p"], dtype=np.float64),
            sigma_p=float(data["sigma_p"]),
            mu_s=np.asarray(data["mu_s"], dtype=np.float64),
            sigma_s=float(data["sigma_s"]),
            mu_q=np.asarray(data["mu_q"], dtype=np.float64),
            sigma_q=float(data["sigma_q"]),
        )


def _mean_and_sigma_max(points: np.ndarray, label: str) -> tuple[np.ndarray, float]:
    # population (1/N) standard deviation, maximum over the three axes
    mu = points.mean(axis=0)
    sigma = float(points.std(axis=0).max())
    if sigma <= _DEGENERATE_TOL:
        raise DegenerateTaskError(f"{label} poses are identical on every axis")
    return mu, sigma


def compute_stats(robot_trajectories: list[Trajectory], task_id: str) -> TaskStats:
    """Normalization statistics for one task, from robot object-pose trajectories."""
    trajs = [
        t
        for t in robot_trajectories
        if t.domain == "robot" and t.task_id == task_id and t.has_object_pose
    ]
    if not trajs:
        raise ValidationError(f"no robot trajectories with object poses for task {task_id!r}")
    fingertips = np.concatenate(
        [
            np.array([frame.position for step in t.frames for frame in step])
            for t in trajs
        ]
    )
    obj_pos = np.concatenate([t.object_positions for t in trajs])
    obj_rot = np.concatenate([t.object_orientations for t in trajs])
    if obj_pos.shape[0] < 2:
        raise ValidationError(f"task {task_id!r} needs at least 2 timesteps with object pose")
    mu_p, sigma_p = _mean_and_sigma_max(fingertips, "fingertip")
    mu_s, sigma_s = _mean_and_sigma_max(obj_pos, "object position")
    mu_q, sigma_q = _mean_and_sigma_max(obj_rot, "object orientation")
    return TaskStats(task_id, mu_p, sigma_p, mu_s, sigma_s, mu_q, sigma_q)


def normalize_pose(values, stats: TaskStats, kind: str) -> np.ndarray:
    """Apply (v - mu) / sigma_max for the selected pose category.

    The same statistics are used for both embodiments; works on a single
    3-vector or any (..., 3) array.
    """
    if kind not in KINDS:
        raise UsageError(f"unknown pose kind {kind!r}, expected one of {KINDS}")
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1] != 3:
        raise UsageError(f"pose arrays must have trailing dimension 3, got {v.shape}")
    if kind == "fingertip":
        return (v - stats.mu_p) / stats.sigma_p
    if kind == "object_position":
        return (v - stats.mu_s) / stats.sigma_s
    return (v - stats.mu_q) / stats.sigma_q


def normalize_trajectory(traj: Trajectory, stats: TaskStats):
    """Normalized fingertip positions (l, K, 3) and object pose (l, 3) pair."""
    if not traj.has_object_pose:
        raise ValidationError("trajectory has no object poses to normalize")
    fingertips = np.array([[frame.position for frame in step] for step in traj.frames])
    return (
        normalize_pose(fingertips, stats, "fingertip"),
        normalize_pose(traj.object_positions, stats, "object_position"),
        normalize_pose(traj.object_orientations, stats, "object_orientation"),
    )
