"""Trajectory data model, dataset file I/O, and the synthetic two-domain generator.

The generator produces human-like and robot-like trajectory sets that both
observe one shared latent contact process g(u) in R^3 per fingertip. Each
domain sees that process through its own observation map (orthonormal linear
map composed with a squashing nonlinearity, at a domain-specific gain), so
the two raw signal spaces are deliberately heterogeneous while a ground-truth
correspondence is known and stored for downstream evaluation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ShapeError, ValidationError

DATASET_VERSION = 1

DOMAINS = ("human", "robot")

# Rotation vectors are kept well inside the canonical ball.
_MAX_ROTVEC = math.pi + 1e-6


@dataclass(frozen=True)
class SensorSpec:
    """Raw tactile array layout: time window x spatial taxels x channels."""

    window: int
    taxels: int
    channels: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.window, self.taxels, self.channels)

    @property
    def flat_per_step(self) -> int:
        return self.taxels * self.channels

    @property
    def flat_dim(self) -> int:
        return self.window * self.taxels * self.channels

    def validate(self) -> None:
        if min(self.window, self.taxels, self.channels) < 1:
            raise ValidationError(f"sensor spec must be positive, got {self}")

    def to_dict(self) -> dict:
        return {"window": self.window, "taxels": self.taxels, "channels": self.channels}

    @classmethod
    def from_dict(cls, data: dict) -> "SensorSpec":
        spec = cls(int(data["window"]), int(data["taxels"]), int(data["channels"]))
        spec.validate()
        return spec


@dataclass
class TactileFrame:
    """One fingertip's windowed tactile observation plus its pose."""

    raw: np.ndarray  # (window, taxels, channels)
    position: np.ndarray  # (3,) meters
    orientation: np.ndarray  # (3,) rotation vector, radians
    finger: int

    def validate(self, spec: SensorSpec) -> None:
        if self.raw.shape != spec.shape:
            raise ShapeError(f"frame raw shape {self.raw.shape} != sensor spec {spec.shape}")
        if float(np.linalg.norm(self.orientation)) >= _MAX_ROTVEC:
            raise ValidationError("orientation rotation vector is outside the canonical ball")


def contact_norm(frame: TactileFrame) -> float:
    """Euclidean norm of the flattened raw array."""
    return float(np.linalg.norm(frame.raw))


@dataclass
class Trajectory:
    """Time-ordered per-fingertip frames with wrist and optional object pose."""

    domain: str
    task_id: str
    frames: list[list[TactileFrame]]  # [t][k]
    wrist: np.ndarray  # (l, 6) position + rotation vector
    object_positions: np.ndarray | None  # (l, 3)
    object_orientations: np.ndarray | None  # (l, 3)
    truth: np.ndarray | None = None  # (l, K, 3) latent contact state, synthetic only

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def fingers(self) -> int:
        return len(self.frames[0]) if self.frames else 0

    @property
    def has_object_pose(self) -> bool:
        return self.object_positions is not None

    def validate(self, spec: SensorSpec) -> None:
        if self.domain not in DOMAINS:
            raise ValidationError(f"unknown domain {self.domain!r}")
        if self.length == 0:
            raise ValidationError("empty trajectory")
        k = self.fingers
        for t, step in enumerate(self.frames):
            if len(step) != k:
                raise ValidationError(f"timestep {t} has {len(step)} fingers, expected {k}")
            for frame in step:
                frame.validate(spec)
        if self.wrist.shape != (self.length, 6):
            raise ShapeError(f"wrist shape {self.wrist.shape} != ({self.length}, 6)")
        if (self.object_positions is None) != (self.object_orientations is None):
            raise ValidationError("object positions and orientations must be present together")
        if self.object_positions is not None:
            if self.object_positions.shape != (self.length, 3):
                raise ShapeError("object position array does not cover every timestep")
            if self.object_orientations.shape != (self.length, 3):
                raise ShapeError("object orientation array does not cover every timestep")
        if self.truth is not None and self.truth.shape != (self.length, k, 3):
            raise ShapeError(f"truth shape {self.truth.shape} != ({self.length}, {k}, 3)")


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    specs: dict[str, SensorSpec]
    seed: int | None = None

    def by_domain(self, domain: str) -> list[Trajectory]:
        return [t for t in self.trajectories if t.domain == domain]

    @property
    def has_truth(self) -> bool:
        return bool(self.trajectories) and all(t.truth is not None for t in self.trajectories)

    def validate(self) -> None:
        for domain in DOMAINS:
            if domain not in self.specs:
                raise ValidationError(f"missing sensor spec for domain {domain!r}")
            self.specs[domain].validate()
        for traj in self.trajectories:
            traj.validate(self.specs[traj.domain])
        truth_flags = {traj.truth is not None for traj in self.trajectories}
        if len(truth_flags) > 1:
            raise ValidationError("ground truth must cover either all trajectories or none")

    def split_holdout(self, fraction: float) -> tuple["Dataset", "Dataset"]:
        """Deterministic trailing-index split, applied per domain.

        Trailing indices keep cross-domain script pairing intact, so the
        held-out trajectories of the two domains still correspond.
        """
        if not 0.0 < fraction < 1.0:
            raise ValidationError(f"holdout fraction must be in (0, 1), got {fraction}")
        train: list[Trajectory] = []
        hold: list[Trajectory] = []
        for domain in DOMAINS:
            trajs = self.by_domain(domain)
            n_hold = max(1, round(fraction * len(trajs)))
            if n_hold >= len(trajs):
                raise ValidationError(f"holdout fraction {fraction} leaves no {domain} training data")
            train.extend(trajs[: len(trajs) - n_hold])
            hold.extend(trajs[len(trajs) - n_hold :])
        return (
            Dataset(train, dict(self.specs), seed=self.seed),
            Dataset(hold, dict(self.specs), seed=self.seed),
        )


def collect_frames(dataset: Dataset, domain: str):
    """Stack every frame of one domain: (raws (B, w, n, d), refs [(traj, t, k)])."""
    raws = []
    refs = []
    for i, traj in enumerate(dataset.trajectories):
        if traj.domain != domain:
            continue
        for t, step in enumerate(traj.frames):
            for k, frame in enumerate(step):
                raws.append(frame.raw)
                refs.append((i, t, k))
    if not raws:
        return np.zeros((0,) + dataset.specs[domain].shape), refs
    return np.stack(raws), refs


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class GenConfig:
    """Knobs for the synthetic two-domain generator."""

    tasks: tuple[str, ...] = ("pivot", "insert")
    n_human: int = 20
    n_robot: int = 20
    length: int = 40
    fingers: int = 2
    human_spec: SensorSpec = field(default_factory=lambda: SensorSpec(3, 1, 3))
    robot_spec: SensorSpec = field(default_factory=lambda: SensorSpec(10, 30, 3))
    contact_rate: float = 0.5
    pose_noise: float = 0.0  # std of additive pose jitter, meters / radians
    signal_noise: float = 0.0  # relative std of raw-signal noise (times gain)
    human_gain: float = 6000.0
    robot_gain: float = 130.0
    human_squash: float = 4.0  # human nonlinearity: tanh(g / human_squash)
    robot_squash: float = 2.5  # robot nonlinearity: asinh(g / robot_squash)
    observation_map: str = "orthonormal"  # or "identity" (requires taxels*channels == 3)

    def validate(self) -> None:
        if not self.tasks:
            raise ValidationError("at least one task is required")
        if min(self.n_human, self.n_robot) < 1:
            raise ValidationError("both domains need at least one trajectory")
        if self.length < 4:
            raise ValidationError(f"trajectory length must be >= 4, got {self.length}")
        if self.fingers < 1:
            raise ValidationError("need at least one fingertip")
        self.human_spec.validate()
        self.robot_spec.validate()
        if not 0.0 < self.contact_rate < 1.0:
            raise ValidationError(f"contact_rate must be in (0, 1), got {self.contact_rate}")
        if self.pose_noise < 0.0 or self.signal_noise < 0.0:
            raise ValidationError("noise scales must be nonnegative")
        if min(self.human_gain, self.robot_gain, self.human_squash, self.robot_squash) <= 0.0:
            raise ValidationError("gains and squash scales must be positive")
        if self.observation_map not in ("orthonormal", "identity"):
            raise ValidationError(f"unknown observation_map {self.observation_map!r}")
        if self.observation_map == "identity":
            for spec in (self.human_spec, self.robot_spec):
                if spec.flat_per_step != 3:
                    raise ValidationError(
                        "identity observation map requires taxels*channels == 3"
                    )

    def to_dict(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "n_human": self.n_human,
            "n_robot": self.n_robot,
            "length": self.length,
            "fingers": self.fingers,
            "human_spec": self.human_spec.to_dict(),
            "robot_spec": self.robot_spec.to_dict(),
            "contact_rate": self.contact_rate,
            "pose_noise": self.pose_noise,
            "signal_noise": self.signal_noise,
            "human_gain": self.human_gain,
            "robot_gain": self.robot_gain,
            "human_squash": self.human_squash,
            "robot_squash": self.robot_squash,
            "observation_map": self.observation_map,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        kwargs = dict(data)
        kwargs["tasks"] = tuple(kwargs.get("tasks", ("pivot", "insert")))
        for key in ("human_spec", "robot_spec"):
            if key in kwargs and isinstance(kwargs[key], dict):
                kwargs[key] = SensorSpec.from_dict(kwargs[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


_TASK_BASE = {
    "pivot": np.array([0.30, 0.00, 0.10]),
    "insert": np.array([0.45, 0.25, 0.20]),
}
_TASK_FORCE_DIR = {
    "pivot": np.array([0.60, 0.25, 0.75]),
    "insert": np.array([0.30, 0.50, 0.80]),
}


def _smoothstep(x: float) -> float:
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class _MotionScript:
    """One sampled task execution: object motion, grips, and force curves.

    All quantities are smooth functions of the phase u in [0, 1]; the
    contact window [u_on, u_off) drives both object motion and force.
    """

    def __init__(self, task: str, config: GenConfig, rng: np.random.Generator):
        self.task = task
        length = config.length
        base = _TASK_BASE.get(task, _TASK_BASE["pivot"])
        self.s0 = base + rng.uniform(-0.08, 0.08, 3)
        clen = int(round(config.contact_rate * length))
        clen = min(max(clen, 1), length - 2)
        c0 = int(rng.integers(1, max(2, length - clen)))
        self.u_on = c0 / (length - 1)
        self.u_off = (c0 + clen) / (length - 1)
        self.theta_max = 0.8 + 0.3 * rng.random()
        self.depth = 0.12 + 0.05 * rng.random()
        self.wiggle_phase = rng.random()
        k = config.fingers
        base_dir = _unit(_TASK_FORCE_DIR.get(task, _TASK_FORCE_DIR["pivot"]))
        self.grips = [
            np.array([0.04, 0.03 * (i - (k - 1) / 2.0), 0.05]) + rng.uniform(-0.01, 0.01, 3)
            for i in range(k)
        ]
        self.approaches = [
            np.array(
                [
                    -0.05 - 0.05 * rng.random(),
                    0.08 * (rng.random() - 0.5),
                    0.12 + 0.04 * rng.random(),
                ]
            )
            for _ in range(k)
        ]
        self.force_dirs = [_unit(base_dir + 0.25 * rng.normal(size=3)) for _ in range(k)]
        self.force_cycles = [1 + int(rng.integers(0, 2)) for _ in range(k)]
        self.force_phases = [rng.random() for _ in range(k)]

    def _progress(self, u: float) -> float:
        return min(max((u - self.u_on) / (self.u_off - self.u_on), 0.0), 1.0)

    def in_contact(self, u: float) -> bool:
        return self.u_on <= u < self.u_off

    def object_pose(self, u: float) -> tuple[np.ndarray, np.ndarray]:
        rho = self._progress(u)
        if self.task == "insert":
            w = 2.0 * math.pi * (1.5 * rho + self.wiggle_phase)
            s = self.s0 + np.array(
                [0.015 * math.sin(w) * rho, 0.015 * math.cos(w) * rho, -self.depth * rho]
            )
            q = np.array([0.10 * rho, 0.22 * rho, 0.30 * rho + 0.05 * math.sin(2.0 * math.pi * rho)])
        else:  # pivot-like
            theta = self.theta_max * rho
            s = self.s0 + np.array(
                [0.12 * math.sin(theta), 0.02 * theta, 0.06 * (1.0 - math.cos(theta))]
            )
            q = np.array([theta, 0.10 * theta, 0.25 * theta])
        return s, q

    def fingertip_position(self, u: float, k: int) -> np.ndarray:
        s, _ = self.object_pose(u)
        anchor = s + self.grips[k]
        if u < self.u_on:
            alpha = u / self.u_on if self.u_on > 0.0 else 1.0
            return anchor + (1.0 - _smoothstep(alpha)) * self.approaches[k]
        if u >= self.u_off:
            if self.u_off >= 1.0:
                return anchor
            beta = (u - self.u_off) / (1.0 - self.u_off)
            return anchor + _smoothstep(beta) * self.approaches[k]
        return anchor

    def fingertip_orientation(self, u: float, k: int) -> np.ndarray:
        return np.array(
            [
                0.15 * math.sin(math.pi * u) + 0.05 * k,
                0.10 * math.cos(math.pi * u),
                0.05 + 0.02 * k,
            ]
        )

    def wrist_pose(self, u: float) -> np.ndarray:
        s, _ = self.object_pose(u)
        pos = s + np.array([-0.02, -0.09, 0.07])
        rot = np.array([0.10 * math.sin(math.pi * u), 0.05, 0.20 * u])
        return np.concatenate([pos, rot])

    def force(self, u: float, k: int) -> np.ndarray:
        """Latent contact state g(u) for fingertip k; zero outside contact."""
        if not self.in_contact(u):
            return np.zeros(3)
        v = self._progress(u)
        cyc = self.force_cycles[k]
        ph = self.force_phases[k]
        mag = 1.0 + 0.5 * (1.0 + math.sin(2.0 * math.pi * (cyc * v + ph)))
        wobble = np.array(
            [
                math.sin(2.0 * math.pi * (v + ph)),
                math.cos(2.0 * math.pi * cyc * v),
                0.4 * math.sin(2.0 * math.pi * (v + 0.3)),
            ]
        )
        return mag * _unit(self.force_dirs[k] + 0.3 * wobble)


def _observation_map(spec: SensorSpec, kind: str, rng: np.random.Generator) -> np.ndarray:
    if kind == "identity":
        return np.eye(3)
    raw = rng.normal(size=(spec.flat_per_step, 3))
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))


def _squash(domain: str, g: np.ndarray, config: GenConfig) -> np.ndarray:
    if config.observation_map == "identity":
        return g
    if domain == "human":
        return np.tanh(g / config.human_squash)
    return np.arcsinh(g / config.robot_squash)


def generate_synthetic(config: GenConfig, seed: int) -> Dataset:
    """Generate a two-domain dataset observing one shared contact process.

    Trajectory j of each domain follows motion script j, so with zero noise
    the two domains are deterministic observations of identical poses and
    identical latent states; that bijective timestep correspondence is the
    oracle used by downstream tests. Ground truth g is stored per frame.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    maps = {
        "human": _observation_map(config.human_spec, config.observation_map, rng),
        "robot": _observation_map(config.robot_spec, config.observation_map, rng),
    }
    gains = {"human": config.human_gain, "robot": config.robot_gain}
    if config.observation_map == "identity":
        gains = {"human": 1.0, "robot": 1.0}
    n_scripts = max(config.n_human, config.n_robot)
    scripts = [
        _MotionScript(config.tasks[j % len(config.tasks)], config, rng)
        for j in range(n_scripts)
    ]

    def build(domain: str, count: int) -> list[Trajectory]:
        spec = config.human_spec if domain == "human" else config.robot_spec
        amap = maps[domain]
        gain = gains[domain]
        length = config.length
        row_dt = 1.0 / ((length - 1) * spec.window)
        out = []
        for j in range(count):
            script = scripts[j]
            frames: list[list[TactileFrame]] = []
            wrist = np.zeros((length, 6))
            obj_s = np.zeros((length, 3))
            obj_q = np.zeros((length, 3))
            truth = np.zeros((length, config.fingers, 3))
            for t in range(length):
                u = t / (length - 1)
                s, q = script.object_pose(u)
                if config.pose_noise > 0.0:
                    s = s + rng.normal(size=3) * config.pose_noise
                    q = q + rng.normal(size=3) * config.pose_noise * 0.5
                obj_s[t] = s
                obj_q[t] = q
                wrist[t] = script.wrist_pose(u)
                step: list[TactileFrame] = []
                for k in range(config.fingers):
                    rows = np.zeros((spec.window, spec.flat_per_step))
                    for r in range(spec.window):
                        u_row = max(u - (spec.window - 1 - r) * row_dt, 0.0)
                        rows[r] = gain * (amap @ _squash(domain, script.force(u_row, k), config))
                    raw = rows.reshape(spec.shape)
                    if config.signal_noise > 0.0:
                        raw = raw + rng.normal(size=spec.shape) * config.signal_noise * gain
                    pos = script.fingertip_position(u, k)
                    rot = script.fingertip_orientation(u, k)
                    if config.pose_noise > 0.0:
                        pos = pos + rng.normal(size=3) * config.pose_noise
                        rot = rot + rng.normal(size=3) * config.pose_noise * 0.5
                    step.append(TactileFrame(raw=raw, position=pos, orientation=rot, finger=k))
                    truth[t, k] = script.force(u, k)
                frames.append(step)
            out.append(
                Trajectory(
                    domain=domain,
                    task_id=script.task,
                    frames=frames,
                    wrist=wrist,
                    object_positions=obj_s,
                    object_orientations=obj_q,
                    truth=truth,
                )
            )
        return out

    trajectories = build("human", config.n_human) + build("robot", config.n_robot)
    dataset = Dataset(
        trajectories,
        {"human": config.human_spec, "robot": config.robot_spec},
        seed=int(seed),
    )
    dataset.validate()
    return dataset


# ---------------------------------------------------------------------------
# File I/O: line-delimited records, one trajectory per line after a header.


def _vec(a: np.ndarray) -> list:
    return [float(v) for v in np.asarray(a).reshape(-1)]


def _traj_to_record(traj: Trajectory) -> dict:
    return {
        "domain": traj.domain,
        "task_id": traj.task_id,
        "length": traj.length,
        "fingers": traj.fingers,
        "frames": [
            [
                {
                    "raw": _vec(frame.raw),
                    "position": _vec(frame.position),
                    "orientation": _vec(frame.orientation),
                }
                for frame in step
            ]
            for step in traj.frames
        ],
        "wrist": [_vec(row) for row in traj.wrist],
        "object_positions": None
        if traj.object_positions is None
        else [_vec(row) for row in traj.object_positions],
        "object_orientations": None
        if traj.object_orientations is None
        else [_vec(row) for row in traj.object_orientations],
        "truth": None
        if traj.truth is None
        else [[_vec(traj.truth[t, k]) for k in range(traj.fingers)] for t in range(traj.length)],
    }


def _traj_from_record(record: dict, specs: dict[str, SensorSpec]) -> Trajectory:
    domain = record["domain"]
    if domain not in specs:
        raise ValidationError(f"record domain {domain!r} has no sensor spec")
    spec = specs[domain]
    length = int(record["length"])
    fingers = int(record["fingers"])
    frames = []
    for step_rec in record["frames"]:
        step = []
        for k, frame_rec in enumerate(step_rec):
            raw = np.asarray(frame_rec["raw"], dtype=np.float64)
            if raw.size != spec.flat_dim:
                raise ValidationError(
                    f"frame raw has {raw.size} values, sensor spec needs {spec.flat_dim}"
                )
            step.append(
                TactileFrame(
                    raw=raw.reshape(spec.shape),
                    position=np.asarray(frame_rec["position"], dtype=np.float64),
                    orientation=np.asarray(frame_rec["orientation"], dtype=np.float64),
                    finger=k,
                )
            )
        frames.append(step)
    truth = record.get("truth")
    traj = Trajectory(
        domain=domain,
        task_id=record["task_id"],
        frames=frames,
        wrist=np.asarray(record["wrist"], dtype=np.float64).reshape(length, 6),
        object_positions=None
        if record["object_positions"] is None
        else np.asarray(record["object_positions"], dtype=np.float64).reshape(length, 3),
        object_orientations=None
        if record["object_orientations"] is None
        else np.asarray(record["object_orientations"], dtype=np.float64).reshape(length, 3),
        truth=None if truth is None else np.asarray(truth, dtype=np.float64).reshape(length, fingers, 3),
    )
    traj.validate(spec)
    return traj


def save_dataset(dataset: Dataset, path) -> None:
    dataset.validate()
    header = {
        "kind": "dataset",
        "format_version": DATASET_VERSION,
        "n_trajectories": len(dataset.trajectories),
        "seed": dataset.seed,
        "specs": {name: spec.to_dict() for name, spec in sorted(dataset.specs.items())},
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for traj in dataset.trajectories:
            fh.write(json.dumps(_traj_to_record(traj), sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:1: malformed header: {exc}") from exc
    if header.get("kind") != "dataset":
        raise ParseError(f"{path}: not a dataset file")
    if header.get("format_version") != DATASET_VERSION:
        raise ParseError(f"{path}: unsupported format version {header.get('format_version')!r}")
    specs = {name: SensorSpec.from_dict(d) for name, d in header["specs"].items()}
    expected = int(header["n_trajectories"])
    records = lines[1:]
    if len(records) != expected:
        raise ParseError(
            f"{path}: truncated dataset, header declares {expected} trajectories, found {len(records)}"
        )
    trajectories = []
    for i, line in enumerate(records):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{i + 2}: malformed record: {exc}") from exc
        trajectories.append(_traj_from_record(record, specs))
    dataset = Dataset(trajectories, specs, seed=header.get("seed"))
    dataset.validate()
    return dataset


def trajectories_equal(a: Trajectory, b: Trajectory) -> bool:
    if (a.domain, a.task_id, a.length, a.fingers) != (b.domain, b.task_id, b.length, b.fingers):
        return False
    for step_a, step_b in zip(a.frames, b.frames):
        for fa, fb in zip(step_a, step_b):
            if not (
                np.array_equal(fa.raw, fb.raw)
                and np.array_equal(fa.position, fb.position)
                and np.array_equal(fa.orientation, fb.orientation)
            ):
                return False
    if not np.array_equal(a.wrist, b.wrist):
        return False
    for pa, pb in ((a.object_positions, b.object_positions), (a.object_orientations, b.object_orientations)):
        if (pa is None) != (pb is None) or (pa is not None and not np.array_equal(pa, pb)):
            return False
    if (a.truth is None) != (b.truth is None):
        return False
    if a.truth is not None and not np.array_equal(a.truth, b.truth):
        return False
    return True


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Field-by-field value identity, including seeds and ground truth."""
    if a.seed != b.seed or sorted(a.specs) != sorted(b.specs):
        return False
    if any(a.specs[k] != b.specs[k] for k in a.specs):
        return False
    if len(a.trajectories) != len(b.trajectories):
        return False
    return all(trajectories_equal(x, y) for x, y in zip(a.trajectories, b.trajectories))
