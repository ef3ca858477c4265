"""Per-domain tactile encoders trained with a reconstruction objective.

A raw (window, taxels, channels) observation is cut into one token per time
slice, embedded linearly, refined by a small per-token trunk, and pooled to a
single fixed-dimension latent by cross-attention against one learnable query.
A paired decoder reconstructs the flattened raw signal from the latent; the
whole stack trains end to end on mean squared reconstruction error.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import nn_core
from .data_model import Dataset, SensorSpec, TactileFrame, Trajectory, collect_frames
from .errors import ParseError, ShapeError, TrainingError, ValidationError
from .nn_core import DenseNet, OptimizerState

ENCODER_VERSION = 1

_DOMAIN_INDEX = {"human": 0, "robot": 1}


@dataclass
class EncoderConfig:
    latent_dim: int = 32
    token_dim: int = 32
    attn_dim: int = 16
    trunk_hidden: tuple[int, ...] = (64,)
    decoder_hidden: tuple[int, ...] = (64,)
    epochs: int = 60
    learning_rate: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    # inputs are standardized to RMS 1/input_margin; keeping the margin above 1
    # holds the tanh trunk in its near-linear regime, which downstream probes rely on
    input_margin: float = 3.0

    def validate(self) -> None:
        dims = (self.latent_dim, self.token_dim, self.attn_dim, self.epochs, self.batch_size)
        if min(dims) < 1:
            raise ValidationError(f"encoder dims/epochs must be positive: {self}")
        if self.learning_rate <= 0.0:
            raise ValidationError("encoder learning_rate must be positive")
        if self.input_margin <= 0.0:
            raise ValidationError("encoder input_margin must be positive")

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "token_dim": self.token_dim,
            "attn_dim": self.attn_dim,
            "trunk_hidden": list(self.trunk_hidden),
            "decoder_hidden": list(self.decoder_hidden),
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "input_margin": self.input_margin,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        kwargs = dict(data)
        for key in ("trunk_hidden", "decoder_hidden"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


class TactileEncoder:
    """Domain-specific encoder/decoder pair with attentive pooling.

    Weights are shared across fingertips: encode() never looks at the finger
    index, only at the raw window.
    """

    def __init__(self, domain: str, spec: SensorSpec, config: EncoderConfig | None = None):
        if domain not in _DOMAIN_INDEX:
            raise ValidationError(f"unknown domain {domain!r}")
        config = config or EncoderConfig()
        config.validate()
        spec.validate()
        self.domain = domain
        self.spec = spec
        self.config = config
        rng = np.random.default_rng([config.seed, _DOMAIN_INDEX[domain]])
        sub = rng.integers(0, 2**31 - 1, size=3)

        token_in = spec.flat_per_step
        self.tokenizer = DenseNet([token_in, config.token_dim], ["identity"], seed=int(sub[0]))
        # learnable per-position embedding; without it the pooled latent would be
        # permutation-invariant over the window and lose within-window order
        self.pos_embed = 0.01 * rng.standard_normal((spec.window, config.token_dim))
        trunk_sizes = [config.token_dim, *config.trunk_hidden, config.token_dim]
        trunk_acts = ["tanh"] * len(config.trunk_hidden) + ["identity"]
        self.trunk = DenseNet(trunk_sizes, trunk_acts, seed=int(sub[1]))
        bound_k = math.sqrt(6.0 / (config.token_dim + config.attn_dim))
        bound_v = math.sqrt(6.0 / (config.token_dim + config.latent_dim))
        self.key_map = rng.uniform(-bound_k, bound_k, size=(config.token_dim, config.attn_dim))
        self.value_map = rng.uniform(-bound_v, bound_v, size=(config.token_dim, config.latent_dim))
        self.query = 0.1 * rng.standard_normal(config.attn_dim)
        decoder_sizes = [config.latent_dim, *config.decoder_hidden, spec.flat_dim]
        decoder_acts = ["tanh"] * len(config.decoder_hidden) + ["identity"]
        self.decoder = DenseNet(decoder_sizes, decoder_acts, seed=int(sub[2]))
        # per-domain signal standardization, fit once at training time
        self.input_scale = 1.0

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def parameters(self) -> list[np.ndarray]:
        return (
            self.tokenizer.parameters()
            + [self.pos_embed]
            + self.trunk.parameters()
            + [self.key_map, self.value_map, self.query]
            + self.decoder.parameters()
        )

    def _check_raw_batch(self, raws: np.ndarray) -> None:
        if raws.ndim != 4 or raws.shape[1:] != self.spec.shape:
            raise ShapeError(
                f"{self.domain} encoder expects frames of shape {self.spec.shape}, "
                f"got batch of shape {raws.shape}"
            )

    def _pool(self, raws: np.ndarray):
        """Shared forward: tokens, keys/values, attention weights, latent."""
        b, w = raws.shape[0], self.spec.window
        tokens = (raws / self.input_scale).reshape(b * w, self.spec.flat_per_step)
        embedded = self.tokenizer.forward(tokens)
        embedded = embedded + np.tile(self.pos_embed, (b, 1))
        feats = self.trunk.forward(embedded).reshape(b, w, self.config.token_dim)
        keys = feats @ self.key_map
        values = feats @ self.value_map
        scores = (keys @ self.query) / math.sqrt(self.config.attn_dim)
        scores = scores - scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=1, keepdims=True)
        latent = np.einsum("bw,bwd->bd", weights, values)
        return feats, keys, values, weights, latent

    def encode_batch(self, raws) -> np.ndarray:
        raws = np.asarray(raws, dtype=np.float64)
        self._check_raw_batch(raws)
        latent = self._pool(raws)[4]
        if not np.all(np.isfinite(latent)):
            raise TrainingError(f"{self.domain} encoder produced a non-finite latent")
        return latent

    def encode(self, frame: TactileFrame) -> np.ndarray:
        """Latent for a single frame; independent of the fingertip index."""
        return self.encode_batch(frame.raw[None])[0]

    def encode_with_attention(self, frame: TactileFrame):
        raws = np.asarray(frame.raw, dtype=np.float64)[None]
        self._check_raw_batch(raws)
        _, _, _, weights, latent = self._pool(raws)
        return latent[0], weights[0]

    def reconstruct_batch(self, raws) -> np.ndarray:
        return self.decoder.forward(self.encode_batch(raws))

    def reconstruction_loss(self, raws) -> float:
        """Elementwise MSE between the decoded latent and the standardized input."""
        raws = np.asarray(raws, dtype=np.float64)
        recon = self.reconstruct_batch(raws)
        flat = (raws / self.input_scale).reshape(raws.shape[0], -1)
        return float(np.mean((recon - flat) ** 2))

    def loss_and_grads(self, raws):
        """Reconstruction MSE and its gradients, aligned with parameters()."""
        raws = np.asarray(raws, dtype=np.float64)
        self._check_raw_batch(raws)
        b, w = raws.shape[0], self.spec.window
        scaled = raws / self.input_scale
        flat = scaled.reshape(b, -1)
        tokens = scaled.reshape(b * w, self.spec.flat_per_step)

        embedded = self.tokenizer.forward_cached(tokens)
        positioned = embedded + np.tile(self.pos_embed, (b, 1))
        feats_flat = self.trunk.forward_cached(positioned)
        feats = feats_flat.reshape(b, w, self.config.token_dim)
        keys = feats @ self.key_map
        values = feats @ self.value_map
        scale = math.sqrt(self.config.attn_dim)
        scores = (keys @ self.query) / scale
        shifted = scores - scores.max(axis=1, keepdims=True)
        weights = np.exp(shifted)
        weights /= weights.sum(axis=1, keepdims=True)
        latent = np.einsum("bw,bwd->bd", weights, values)
        recon = self.decoder.forward_cached(latent)

        loss = float(np.mean((recon - flat) ** 2))
        d_recon = (2.0 / flat.size) * (recon - flat)
        dec_grads, d_latent = self.decoder.backward(latent, d_recon)

        d_weights = np.einsum("bwd,bd->bw", values, d_latent)
        d_values = weights[:, :, None] * d_latent[:, None, :]
        d_scores = weights * (d_weights - np.sum(weights * d_weights, axis=1, keepdims=True))
        d_query = np.einsum("bw,bwk->k", d_scores, keys) / scale
        d_keys = d_scores[:, :, None] * (self.query / scale)[None, None, :]
        d_key_map = np.einsum("bwt,bwk->tk", feats, d_keys)
        d_value_map = np.einsum("bwt,bwd->td", feats, d_values)
        d_feats = (d_keys @ self.key_map.T + d_values @ self.value_map.T).reshape(
            b * w, self.config.token_dim
        )
        trunk_grads, d_positioned = self.trunk.backward(positioned, d_feats)
        d_pos = d_positioned.reshape(b, w, self.config.token_dim).sum(axis=0)
        tok_grads, _ = self.tokenizer.backward(tokens, d_positioned)

        grads = (
            tok_grads
            + [d_pos]
            + trunk_grads
            + [d_key_map, d_value_map, d_query]
            + dec_grads
        )
        return loss, grads

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(encoder_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def train_ssl(
    encoder: TactileEncoder,
    raws,
    *,
    epochs: int | None = None,
    learning_rate: float | None = None,
    batch_size: int | None = None,
    seed: int | None = None,
) -> list[float]:
    """Self-supervised reconstruction training; returns the loss curve.

    Entry 0 is the pre-training loss on the full set. Batch order is drawn
    from the seed, so training is reproducible.
    """
    cfg = encoder.config
    epochs = cfg.epochs if epochs is None else int(epochs)
    learning_rate = cfg.learning_rate if learning_rate is None else float(learning_rate)
    batch_size = cfg.batch_size if batch_size is None else int(batch_size)
    seed = cfg.seed if seed is None else int(seed)
    if epochs < 1 or learning_rate <= 0.0 or batch_size < 1:
        raise ValidationError("epochs, learning_rate and batch_size must be positive")
    raws = np.asarray(raws, dtype=np.float64)
    encoder._check_raw_batch(raws)
    n = raws.shape[0]
    if n == 0:
        raise ValidationError("cannot train on an empty frame set")
    rms = float(np.sqrt(np.mean(raws**2)))
    encoder.input_scale = cfg.input_margin * rms if rms > 0.0 else 1.0
    params = encoder.parameters()
    opt = OptimizerState.for_params("adam", learning_rate, params)
    rng = np.random.default_rng(seed)
    bs = min(batch_size, n)
    curve = [encoder.reconstruction_loss(raws)]
    for epoch in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, bs):
            batch = raws[order[start : start + bs]]
            loss, grads = encoder.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite reconstruction loss at epoch {epoch}")
            opt.apply(params, grads)
            batch_losses.append(loss)
        curve.append(float(np.mean(batch_losses)))
    return curve


def train_domain_encoder(dataset: Dataset, domain: str, config: EncoderConfig):
    """Build and train one domain's encoder on every frame of that domain."""
    raws, _ = collect_frames(dataset, domain)
    if raws.shape[0] == 0:
        raise ValidationError(f"dataset has no {domain} frames")
    encoder = TactileEncoder(domain, dataset.specs[domain], config)
    curve = train_ssl(encoder, raws)
    return encoder, curve


def encode_trajectory(encoder: TactileEncoder, traj: Trajectory) -> np.ndarray:
    """Per-timestep, per-finger latents with shape (length, fingers, latent_dim).

    Computed frame by frame so the result is exactly the concatenation of
    encode() outputs.
    """
    if traj.domain != encoder.domain:
        raise ShapeError(f"{encoder.domain} encoder cannot encode a {traj.domain} trajectory")
    out = np.zeros((traj.length, traj.fingers, encoder.latent_dim))
    for t, step in enumerate(traj.frames):
        for k, frame in enumerate(step):
            out[t, k] = encoder.encode(frame)
    return out


# ---------------------------------------------------------------------------
# Checkpoints


def encoder_to_dict(encoder: TactileEncoder) -> dict:
    return {
        "kind": "tactile_encoder",
        "format_version": ENCODER_VERSION,
        "domain": encoder.domain,
        "spec": encoder.spec.to_dict(),
        "config": encoder.config.to_dict(),
        "input_scale": encoder.input_scale,
        "tokenizer": nn_core.net_to_dict(encoder.tokenizer),
        "pos_embed": encoder.pos_embed.tolist(),
        "trunk": nn_core.net_to_dict(encoder.trunk),
        "key_map": encoder.key_map.tolist(),
        "value_map": encoder.value_map.tolist(),
        "query": encoder.query.tolist(),
        "decoder": nn_core.net_to_dict(encoder.decoder),
    }


def encoder_from_dict(data: dict) -> TactileEncoder:
    if data.get("kind") != "tactile_encoder":
        raise ParseError(f"not an encoder checkpoint: kind={data.get('kind')!r}")
    if data.get("format_version") != ENCODER_VERSION:
        raise ParseError(f"unsupported encoder checkpoint version {data.get('format_version')!r}")
    spec = SensorSpec.from_dict(data["spec"])
    config = EncoderConfig.from_dict(data["config"])
    encoder = TactileEncoder(data["domain"], spec, config)
    encoder.input_scale = float(data.get("input_scale", 1.0))
    encoder.tokenizer = nn_core.net_from_dict(data["tokenizer"])
    encoder.pos_embed = np.asarray(data["pos_embed"], dtype=np.float64)
    encoder.trunk = nn_core.net_from_dict(data["trunk"])
    encoder.key_map = np.asarray(data["key_map"], dtype=np.float64)
    encoder.value_map = np.asarray(data["value_map"], dtype=np.float64)
    encoder.query = np.asarray(data["query"], dtype=np.float64)
    encoder.decoder = nn_core.net_from_dict(data["decoder"])
    return encoder


def save_encoder(encoder: TactileEncoder, path) -> None:
    with open(path, "w") as fh:
        json.dump(encoder_to_dict(encoder), fh, sort_keys=True)


def load_encoder(path) -> TactileEncoder:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed encoder checkpoint {path}: {exc}") from exc
    return encoder_from_dict(data)
