"""Velocity-field training on pseudo-pairs and ODE transport between latent spaces.

Convention: paths run from the source (human) latent to the target (robot)
latent, x_t = (1 - t) * h + t * r with constant target velocity r - h, so
forward Euler integration from x_0 = h lands on the target side at t = 1.
The convention tag is stored in every checkpoint.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn_core
from .errors import (
    ParseError,
    ShapeError,
    TrainingError,
    TransportError,
    ValidationError,
)
from .nn_core import DenseNet
from .pseudo_pairs import PseudoPair

FLOW_VERSION = 1

CONVENTION = "source_to_target_forward_euler"


@dataclass
class FlowConfig:
    """Velocity-net recipe; defaults follow the published large-scale recipe.

    The CI-scale presets in the config module override width, epochs, and
    learning rate; see there for the values used by the test suite.
    """

    width: int = 1024
    depth: int = 3  # hidden layers
    t_steps: int = 100  # training-time discretization of t in [0, 1]
    epochs: int = 200_000
    batch_size: int | None = 1024
    learning_rate: float = 5e-5
    k_steps: int = 100  # inference Euler steps
    pair_cap: int = 100_000  # seeded subsample bound on training pairs
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if min(self.width, self.depth, self.epochs, self.k_steps, self.pair_cap) < 1:
            raise ValidationError(f"flow config must be positive: {self}")
        if self.t_steps < 2:
            raise ValidationError("t_steps must be >= 2 to cover both path endpoints")
        if self.learning_rate <= 0.0:
            raise ValidationError("flow learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be positive or None for full batch")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "depth": self.depth,
            "t_steps": self.t_steps,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "k_steps": self.k_steps,
            "pair_cap": self.pair_cap,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FlowConfig":
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class VelocityField:
    """Trained dense network v(x, t) over latents of dimension latent_dim."""

    net: DenseNet
    latent_dim: int
    t_steps: int
    k_steps: int
    convention: str = CONVENTION
    latent_fingerprint: str = ""

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.net.forward(np.concatenate([x, [t]]))


def zero_velocity_field(latent_dim: int, k_steps: int = 16) -> VelocityField:
    """Identity transport, handy as a baseline."""
    net = DenseNet([latent_dim + 1, latent_dim], ["identity"])
    net.weights[0][:] = 0.0
    return VelocityField(net=net, latent_dim=latent_dim, t_steps=2, k_steps=k_steps)


def _interpolation_batch(source: np.ndarray, target: np.ndarray, t_steps: int):
    """All (x_t, t) samples on the straight paths, with constant velocities."""
    n, d = source.shape
    ts = np.linspace(0.0, 1.0, t_steps)
    interp = (1.0 - ts)[None, :, None] * source[:, None, :] + ts[None, :, None] * target[:, None, :]
    xs = np.concatenate(
        [interp.reshape(n * t_steps, d), np.tile(ts, n)[:, None]], axis=1
    )
    ys = np.repeat(target - source, t_steps, axis=0)
    return xs, ys


def fit_velocity_field(
    source: np.ndarray,
    target: np.ndarray,
    config: FlowConfig,
    latent_fingerprint: str = "",
):
    """Least-squares fit of v(x_t, t) to the constant path velocities."""
    config.validate()
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or source.shape != target.shape:
        raise ShapeError(
            f"source {source.shape} and target {target.shape} must be matching (n, d) arrays"
        )
    if source.shape[0] == 0:
        raise ValidationError("need at least one pair to fit a velocity field")
    n, d = source.shape
    if n > config.pair_cap:
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(n, size=config.pair_cap, replace=False))
        source, target = source[keep], target[keep]
    xs, ys = _interpolation_batch(source, target, config.t_steps)
    sizes = [d + 1] + [config.width] * config.depth + [d]
    acts = ["tanh"] * config.depth + ["identity"]
    net = DenseNet(sizes, acts, seed=config.seed)
    curve = nn_core.fit_mse(
        net,
        xs,
        ys,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        method=config.optimizer,
        seed=config.seed,
    )
    vf = VelocityField(
        net=net,
        latent_dim=d,
        t_steps=config.t_steps,
        k_steps=config.k_steps,
        latent_fingerprint=latent_fingerprint,
    )
    return vf, curve


def train_flow(pairs: list[PseudoPair], config: FlowConfig, latent_fingerprint: str = ""):
    """Train the transport field on mined pseudo-pairs; returns (field, loss curve)."""
    if not pairs:
        raise ValidationError("cannot train a flow on an empty pair list")
    dims = {p.human_latent.shape for p in pairs} | {p.robot_latent.shape for p in pairs}
    if len(dims) != 1:
        raise ShapeError(f"pairs carry inconsistent latent shapes: {sorted(dims)}")
    source = np.stack([p.human_latent for p in pairs])
    target = np.stack([p.robot_latent for p in pairs])
    vf, curve = fit_velocity_field(source, target, config, latent_fingerprint)
    if curve[-1] > curve[0]:
        raise TrainingError(
            f"flow training diverged: loss went from {curve[0]:.6g} to {curve[-1]:.6g}"
        )
    return vf, curve


def transport(vf: VelocityField, latent, k_steps: int | None = None) -> np.ndarray:
    """Forward Euler integration of the field from x_0 = latent to t = 1."""
    x = np.asarray(latent, dtype=np.float64)
    if x.shape != (vf.latent_dim,):
        raise ShapeError(f"latent shape {x.shape} does not match field dimension {vf.latent_dim}")
    k = vf.k_steps if k_steps is None else int(k_steps)
    if k < 1:
        raise ValidationError(f"k_steps must be >= 1, got {k}")
    dt = 1.0 / k
    for m in range(k):
        x = x + dt * vf.velocity(x, m / k)
        if not np.all(np.isfinite(x)):
            raise TransportError(f"non-finite state at Euler step {m}")
    return x


def transport_batch(vf: VelocityField, latents, k_steps: int | None = None) -> np.ndarray:
    """Elementwise transport, bit-identical to per-item transport() calls."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.size == 0:
        return np.zeros((0, vf.latent_dim))
    if latents.ndim != 2:
        raise ShapeError(f"expected (n, d) latents, got shape {latents.shape}")
    return np.stack([transport(vf, row, k_steps) for row in latents])


# ---------------------------------------------------------------------------
# Checkpoints


def field_to_dict(vf: VelocityField) -> dict:
    return {
        "kind": "velocity_field",
        "format_version": FLOW_VERSION,
        "latent_dim": vf.latent_dim,
        "t_steps": vf.t_steps,
        "k_steps": vf.k_steps,
        "convention": vf.convention,
        "latent_fingerprint": vf.latent_fingerprint,
        "net": nn_core.net_to_dict(vf.net),
    }


def field_from_dict(data: dict) -> VelocityField:
    if data.get("kind") != "velocity_field":
        raise ParseError(f"not a velocity-field checkpoint: kind={data.get('kind')!r}")
    if data.get("format_version") != FLOW_VERSION:
        raise ParseError(f"unsupported checkpoint version {data.get('format_version')!r}")
    if data.get("convention") != CONVENTION:
        raise ParseError(f"unknown integration convention {data.get('convention')!r}")
    return VelocityField(
        net=nn_core.net_from_dict(data["net"]),
        latent_dim=int(data["latent_dim"]),
        t_steps=int(data["t_steps"]),
        k_steps=int(data["k_steps"]),
        convention=data["convention"],
        latent_fingerprint=data.get("latent_fingerprint", ""),
    )


def save_velocity_field(vf: VelocityField, path) -> None:
    with open(path, "w") as fh:
        json.dump(field_to_dict(vf), fh, sort_keys=True)


def load_velocity_field(path) -> VelocityField:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed velocity-field checkpoint {path}: {exc}") from exc
    return field_from_dict(data)


# ---------------------------------------------------------------------------
# 2-D toy experiment: guided vs random pairings between planted mixtures


@dataclass
class Toy2dConfig:
    """Planted-label mixtures; defaults make the labels orthogonal to geometry.

    Source subsets are separated along x while target subsets split along y,
    so a pairing-blind low-cost transport splits every source subset evenly
    across the two target subsets (reflection symmetry in y), while guided
    pairs carry the label routing.
    """

    n_per_subset: int = 150
    source_centers: tuple = ((-7.0, 0.0), (-1.0, 0.0))
    target_centers: tuple = ((4.0, 2.0), (4.0, -2.0))
    spread: float = 0.8
    pair_noise: float = 0.0  # probability a guided pair crosses to the wrong subset
    flow: FlowConfig = field(
        default_factory=lambda: FlowConfig(
            width=64,
            depth=2,
            t_steps=12,
            epochs=400,
            batch_size=1024,
            learning_rate=2e-3,
            k_steps=32,
        )
    )

    def validate(self) -> None:
        if self.n_per_subset < 2:
            raise ValidationError("need at least 2 points per subset")
        if len(self.source_centers) != len(self.target_centers) or len(self.source_centers) < 2:
            raise ValidationError("source and target need the same number (>= 2) of subsets")
        if self.spread <= 0.0:
            raise ValidationError("spread must be positive")
        if not 0.0 <= self.pair_noise <= 1.0:
            raise ValidationError("pair_noise must be in [0, 1]")
        self.flow.validate()


def _sample_mixture(centers, n_per_subset, spread, rng):
    points, labels = [], []
    for label, center in enumerate(centers):
        points.append(np.asarray(center) + spread * rng.normal(size=(n_per_subset, 2)))
        labels.append(np.full(n_per_subset, label))
    return np.concatenate(points), np.concatenate(labels)


def toy2d_experiment(config: Toy2dConfig, seed: int = 0) -> dict:
    """Compare flows trained on subset-guided pairs against random pairings.

    Returns per-mode transport cost, planted-label agreement of transported
    points (nearest-target-point vote), and exact EMD to the target cloud
    before and after transport.
    """
    from .evaluation import emd  # deferred: evaluation imports this module

    config.validate()
    rng = np.random.default_rng(seed)
    source, source_labels = _sample_mixture(
        config.source_centers, config.n_per_subset, config.spread, rng
    )
    target, target_labels = _sample_mixture(
        config.target_centers, config.n_per_subset, config.spread, rng
    )
    n = source.shape[0]
    n_subsets = len(config.source_centers)

    pairings = {}
    guided = np.zeros(n, dtype=int)
    for i in range(n):
        label = source_labels[i]
        if config.pair_noise > 0.0 and rng.random() < config.pair_noise:
            label = (label + 1 + int(rng.integers(n_subsets - 1))) % n_subsets
        choices = np.where(target_labels == label)[0]
        guided[i] = int(rng.choice(choices))
    pairings["guided"] = guided
    pairings["random"] = rng.permutation(n)

    emd_before = emd(source, target, solver="exact_assignment")
    results = {"seed": int(seed), "emd_before": emd_before}
    for mode, idx in pairings.items():
        flow_cfg = replace(config.flow, seed=config.flow.seed + seed)
        vf, _ = fit_velocity_field(source, target[idx], flow_cfg)
        moved = transport_batch(vf, source)
        dist_to_targets = np.linalg.norm(moved[:, None, :] - target[None, :, :], axis=2)
        nearest_labels = target_labels[np.argmin(dist_to_targets, axis=1)]
        results[mode] = {
            "transport_cost": float(np.mean(np.linalg.norm(moved - source, axis=1))),
            "correspondence_agreement": float(np.mean(nearest_labels == source_labels)),
            "emd_before": emd_before,
            "emd_after": emd(moved, target, solver="exact_assignment"),
        }
    return results


def toy2d_point_clouds(config: Toy2dConfig, seed: int = 0) -> dict:
    """Source/target/transported point arrays for figure export."""
    from .evaluation import emd  # noqa: F401  (keeps import path consistent)

    config.validate()
    rng = np.random.default_rng(seed)
    source, source_labels = _sample_mixture(
        config.source_centers, config.n_per_subset, config.spread, rng
    )
    target, target_labels = _sample_mixture(
        config.target_centers, config.n_per_subset, config.spread, rng
    )
    n = source.shape[0]
    guided = np.zeros(n, dtype=int)
    for i in range(n):
        choices = np.where(target_labels == source_labels[i])[0]
        guided[i] = int(rng.choice(choices))
    vf, _ = fit_velocity_field(source, target[guided], replace(config.flow, seed=config.flow.seed + seed))
    moved = transport_batch(vf, source)
    return {
        "source": source,
        "source_labels": source_labels,
        "target": target,
        "target_labels": target_labels,
        "transported": moved,
    }
