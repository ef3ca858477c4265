"""Pipeline configuration: nested stage configs, presets, hashing, file I/O."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from .data_model import GenConfig, SensorSpec
from .encoders import EncoderConfig
from .errors import ParseError, ValidationError
from .evaluation import SOLVERS, ForceDecoderConfig
from .pseudo_pairs import PairConfig
from .rectified_flow import FlowConfig

# sensitivity grids exercised by the sweep command
LAMBDA_GRID = (0.8, 0.9, 1.0, 1.1, 1.2)
DELTA_GRID = (1.5, 2.0, 2.5, 3.0, 3.5)

PRESETS = ("desk", "smoke", "full")


@dataclass
class EvalConfig:
    solver: str = "exact_assignment"
    max_points: int = 256
    holdout_fraction: float = 0.25
    force_runs: int = 5
    robot_force_samples: int = 1472
    human_force_samples: int = 1527
    force_train_test_ratio: int = 24  # train:test split of the robot force set
    seed: int = 0

    def validate(self) -> None:
        if self.solver not in SOLVERS:
            raise ValidationError(f"unknown EMD solver {self.solver!r}")
        if self.max_points < 2:
            raise ValidationError("max_points must be >= 2")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must be in (0, 1)")
        if self.force_runs < 1:
            raise ValidationError("force_runs must be >= 1")
        if min(self.robot_force_samples, self.human_force_samples) < 4:
            raise ValidationError("force sample counts must be >= 4")
        if self.force_train_test_ratio < 1:
            raise ValidationError("force_train_test_ratio must be >= 1")

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "max_points": self.max_points,
            "holdout_fraction": self.holdout_fraction,
            "force_runs": self.force_runs,
            "robot_force_samples": self.robot_force_samples,
            "human_force_samples": self.human_force_samples,
            "force_train_test_ratio": self.force_train_test_ratio,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class PipelineConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pairs: PairConfig = field(default_factory=PairConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    force: ForceDecoderConfig = field(default_factory=ForceDecoderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def validate(self) -> None:
        self.gen.validate()
        self.encoder.validate()
        self.pairs.validate()
        self.flow.validate()
        self.force.validate()
        self.eval.validate()
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "gen": self.gen.to_dict(),
            "encoder": self.encoder.to_dict(),
            "pairs": self.pairs.to_dict(),
            "flow": self.flow.to_dict(),
            "force": self.force.to_dict(),
            "eval": self.eval.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {"seed", "gen", "encoder", "pairs", "flow", "force", "eval"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(
            gen=GenConfig.from_dict(data.get("gen", {})),
            encoder=EncoderConfig.from_dict(data.get("encoder", {})),
            pairs=PairConfig.from_dict(data.get("pairs", {})),
            flow=FlowConfig.from_dict(data.get("flow", {})),
            force=ForceDecoderConfig.from_dict(data.get("force", {})),
            eval=EvalConfig.from_dict(data.get("eval", {})),
            seed=int(data.get("seed", 0)),
        )
        cfg.validate()
        return cfg


def with_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    """Propagate one master seed into every stage config."""
    return replace(
        cfg,
        seed=seed,
        encoder=replace(cfg.encoder, seed=seed),
        flow=replace(cfg.flow, seed=seed),
        force=replace(cfg.force, seed=seed),
        eval=replace(cfg.eval, seed=seed),
    )


def config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(seed: int = 0) -> PipelineConfig:
    """CI-scale recipe: small nets, short schedules, minutes on a laptop core."""
    cfg = PipelineConfig(
        gen=GenConfig(
            n_human=20,
            n_robot=20,
            length=40,
            fingers=2,
            human_spec=SensorSpec(3, 1, 3),
            robot_spec=SensorSpec(5, 6, 3),
        ),
        encoder=EncoderConfig(epochs=300, learning_rate=2e-3, batch_size=256),
        pairs=PairConfig(),
        flow=FlowConfig(
            width=128,
            depth=3,
            t_steps=12,
            epochs=80,
            batch_size=1024,
            learning_rate=2e-3,
            k_steps=48,
            pair_cap=800,
        ),
        force=ForceDecoderConfig(epochs=150, learning_rate=1e-3, batch_size=256),
        eval=EvalConfig(),
    )
    return with_seed(cfg, seed)


def smoke_config(seed: int = 0) -> PipelineConfig:
    """Smallest end-to-end run, for determinism checks and quick sanity."""
    cfg = PipelineConfig(
        gen=GenConfig(
            n_human=12,
            n_robot=12,
            length=30,
            fingers=2,
            human_spec=SensorSpec(3, 1, 3),
            robot_spec=SensorSpec(5, 6, 3),
        ),
        encoder=EncoderConfig(epochs=150, learning_rate=2e-3, batch_size=256),
        pairs=PairConfig(),
        flow=FlowConfig(
            width=96,
            depth=2,
            t_steps=10,
            epochs=60,
            batch_size=1024,
            learning_rate=2e-3,
            k_steps=32,
            pair_cap=500,
        ),
        force=ForceDecoderConfig(epochs=100, learning_rate=1e-3, batch_size=256),
        eval=EvalConfig(
            max_points=192,
            robot_force_samples=600,
            human_force_samples=600,
        ),
    )
    return with_seed(cfg, seed)


def full_config(seed: int = 0) -> PipelineConfig:
    """Large-scale recipe mirroring the published hyperparameters; hours of CPU."""
    cfg = PipelineConfig(
        gen=GenConfig(
            n_human=200,
            n_robot=100,
            length=100,
            fingers=4,
            human_spec=SensorSpec(3, 1, 3),
            robot_spec=SensorSpec(10, 30, 3),
        ),
        encoder=EncoderConfig(epochs=2000, learning_rate=1e-3, batch_size=512),
        pairs=PairConfig(),
        flow=FlowConfig(),  # width 1024 x 3, lr 5e-5, 100 time steps
        force=ForceDecoderConfig(epochs=100_000, learning_rate=1e-4, batch_size=512),
        eval=EvalConfig(max_points=512),
    )
    return with_seed(cfg, seed)


def preset_config(name: str, seed: int = 0) -> PipelineConfig:
    if name == "desk":
        return desk_config(seed)
    if name == "smoke":
        return smoke_config(seed)
    if name == "full":
        return full_config(seed)
    raise ValidationError(f"unknown preset {name!r}, expected one of {PRESETS}")


def save_config(cfg: PipelineConfig, path) -> None:
    cfg.validate()
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed config {path}: {exc}") from exc
    return PipelineConfig.from_dict(data)
