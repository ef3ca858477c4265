"""End-to-end orchestration of the alignment stages, shared by the CLI and tests.

Stage order: synthetic data -> per-domain encoders -> normalized transitions ->
pseudo-pair mining -> velocity-field training -> alignment / force / PCA
evaluation. Every stage is a pure function of (config, artifacts, seed).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .data_model import Dataset, generate_synthetic
from .encoders import TactileEncoder, encode_trajectory, train_domain_encoder
from .errors import ValidationError
from .evaluation import (
    EmdReport,
    ForceReport,
    SweepInputs,
    eval_alignment,
    eval_force_transfer,
    pca_export,
)
from .normalize import compute_stats
from .pseudo_pairs import PseudoPair, build_transitions, mine_pairs
from .rectified_flow import VelocityField, train_flow, transport_batch


def latent_space_fingerprint(enc_human: TactileEncoder, enc_robot: TactileEncoder) -> str:
    blob = (enc_human.fingerprint + ":" + enc_robot.fingerprint).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def train_encoders(cfg: PipelineConfig, dataset: Dataset):
    """Train both domain encoders on every frame of the given dataset."""
    out = {}
    for domain in ("human", "robot"):
        encoder, curve = train_domain_encoder(dataset, domain, cfg.encoder)
        out[domain] = {"encoder": encoder, "curve": curve}
    return out


def encode_dataset(enc_human: TactileEncoder, enc_robot: TactileEncoder, dataset: Dataset) -> dict:
    """Per-trajectory latent arrays keyed by trajectory index."""
    encoders = {"human": enc_human, "robot": enc_robot}
    return {
        i: encode_trajectory(encoders[traj.domain], traj)
        for i, traj in enumerate(dataset.trajectories)
    }


def compute_all_stats(dataset: Dataset) -> dict:
    tasks = sorted({t.task_id for t in dataset.trajectories})
    return {task: compute_stats(dataset.by_domain("robot"), task) for task in tasks}


def transitions_by_task(cfg: PipelineConfig, dataset: Dataset, latents: dict, stats: dict) -> dict:
    """task_id -> (human transitions, robot transitions), aligned-subset only."""
    out = {task: ([], []) for task in stats}
    for i, traj in enumerate(dataset.trajectories):
        if not traj.has_object_pose:
            continue
        threshold = cfg.pairs.threshold(traj.domain)
        trans = build_transitions(traj, i, latents[i], stats[traj.task_id], threshold)
        out[traj.task_id][0 if traj.domain == "human" else 1].extend(trans)
    return out


def mine_all_pairs(cfg: PipelineConfig, transitions: dict) -> list[PseudoPair]:
    pairs: list[PseudoPair] = []
    for task in sorted(transitions):
        humans, robots = transitions[task]
        pairs.extend(mine_pairs(humans, robots, cfg.pairs))
    return pairs


def flat_latents(dataset: Dataset, latents: dict, domain: str):
    """Stack per-frame latents of one domain: ((N, d) array, [(traj, t, k)])."""
    rows, refs = [], []
    for i, traj in enumerate(dataset.trajectories):
        if traj.domain != domain:
            continue
        arr = latents[i]
        for t in range(traj.length):
            for k in range(traj.fingers):
                rows.append(arr[t, k])
                refs.append((i, t, k))
    return np.stack(rows), refs


def force_arrays(dataset: Dataset, latents: dict, domain: str):
    """All (latents, forces) rows of one domain, labels from ground truth."""
    if not dataset.has_truth:
        raise ValidationError("force evaluation needs generator ground truth")
    x, refs = flat_latents(dataset, latents, domain)
    y = np.stack([dataset.trajectories[i].truth[t, k] for (i, t, k) in refs])
    return x, y


def seeded_sample(x: np.ndarray, y: np.ndarray, count: int, seed: int):
    n = min(count, len(x))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(x), n, replace=False))
    return x[idx], y[idx]


@dataclass
class PipelineResult:
    config: PipelineConfig
    dataset: Dataset
    train_set: Dataset
    holdout_set: Dataset
    stats: dict
    encoders: dict  # domain -> {"encoder", "curve"}
    pairs: list
    flow_curve: list
    velocity_field: VelocityField
    emd_report: EmdReport
    force_report: ForceReport | None
    holdout_human: np.ndarray
    holdout_robot: np.ndarray
    transitions: dict


def run_pipeline(
    cfg: PipelineConfig,
    dataset: Dataset | None = None,
    *,
    with_force: bool = True,
) -> PipelineResult:
    """Run every stage on one dataset; the alignment report uses held-out latents."""
    cfg.validate()
    if dataset is None:
        dataset = generate_synthetic(cfg.gen, cfg.seed)
    train_set, holdout_set = dataset.split_holdout(cfg.eval.holdout_fraction)

    trained = train_encoders(cfg, train_set)
    enc_h = trained["human"]["encoder"]
    enc_r = trained["robot"]["encoder"]
    fingerprint = latent_space_fingerprint(enc_h, enc_r)

    stats = compute_all_stats(train_set)
    train_latents = encode_dataset(enc_h, enc_r, train_set)
    transitions = transitions_by_task(cfg, train_set, train_latents, stats)
    pairs = mine_all_pairs(cfg, transitions)

    vf, flow_curve = train_flow(pairs, cfg.flow, fingerprint)

    holdout_latents = encode_dataset(enc_h, enc_r, holdout_set)
    hold_h, _ = flat_latents(holdout_set, holdout_latents, "human")
    hold_r, _ = flat_latents(holdout_set, holdout_latents, "robot")
    emd_report = eval_alignment(
        hold_h,
        hold_r,
        vf,
        solver=cfg.eval.solver,
        max_points=cfg.eval.max_points,
        seed=cfg.eval.seed,
    )

    force_report = None
    if with_force and dataset.has_truth:
        # robot force data train the decoder; its test split comes from held-out
        # trajectories so the R->R baseline measures genuine generalization
        n_test = max(1, round(cfg.eval.robot_force_samples / (cfg.eval.force_train_test_ratio + 1)))
        n_train = cfg.eval.robot_force_samples - n_test
        rx_all, ry_all = force_arrays(train_set, train_latents, "robot")
        robot_train = seeded_sample(rx_all, ry_all, n_train, cfg.eval.seed)
        hx_all, hy_all = force_arrays(holdout_set, holdout_latents, "robot")
        robot_test = seeded_sample(hx_all, hy_all, n_test, cfg.eval.seed + 2)
        human_parts = [
            force_arrays(train_set, train_latents, "human"),
            force_arrays(holdout_set, holdout_latents, "human"),
        ]
        human_all = (
            np.concatenate([p[0] for p in human_parts]),
            np.concatenate([p[1] for p in human_parts]),
        )
        human_eval = seeded_sample(*human_all, cfg.eval.human_force_samples, cfg.eval.seed + 1)
        force_report = eval_force_transfer(
            robot_train,
            robot_test,
            human_eval,
            vf,
            cfg.force,
            runs=cfg.eval.force_runs,
            seed=cfg.eval.seed,
        )

    return PipelineResult(
        config=cfg,
        dataset=dataset,
        train_set=train_set,
        holdout_set=holdout_set,
        stats=stats,
        encoders=trained,
        pairs=pairs,
        flow_curve=flow_curve,
        velocity_field=vf,
        emd_report=emd_report,
        force_report=force_report,
        holdout_human=hold_h,
        holdout_robot=hold_r,
        transitions=transitions,
    )


def sweep_inputs_from(result: PipelineResult) -> SweepInputs:
    cfg = result.config
    return SweepInputs(
        transitions=result.transitions,
        holdout_human=result.holdout_human,
        holdout_robot=result.holdout_robot,
        pair_config=cfg.pairs,
        flow_config=cfg.flow,
        solver=cfg.eval.solver,
        max_points=cfg.eval.max_points,
        seed=cfg.eval.seed,
        latent_fingerprint=result.velocity_field.latent_fingerprint,
    )


def pca_projection_from(result: PipelineResult):
    moved = transport_batch(result.velocity_field, result.holdout_human)
    return pca_export(
        {
            "human": result.holdout_human,
            "robot": result.holdout_robot,
            "human_aligned": moved,
        }
    )
