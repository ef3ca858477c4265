"""Command-line pipeline: every stage is a subcommand with hashed artifacts.

Each command is deterministic given identical inputs and seed, writes its
outputs with canonical JSON encoding, and drops a manifest recording input
hashes, the config hash, package versions, and wall time. Manifests are the
only non-reproducible artifacts.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    DELTA_GRID,
    LAMBDA_GRID,
    PRESETS,
    PipelineConfig,
    config_hash,
    load_config,
    preset_config,
    save_config,
    with_seed,
)
from .data_model import generate_synthetic, load_dataset, save_dataset
from .encoders import load_encoder, save_encoder
from .errors import (
    CompatibilityError,
    FlowAlignError,
    ParseError,
    TrainingError,
    TransportError,
    UsageError,
    ValidationError,
)
from .evaluation import (
    SweepInputs,
    eval_alignment,
    eval_force_transfer,
    pca_export,
    write_pca_csv,
)
from .evaluation import sweep as run_sweep
from .pipeline import (
    compute_all_stats,
    encode_dataset,
    flat_latents,
    force_arrays,
    latent_space_fingerprint,
    mine_all_pairs,
    pca_projection_from,
    run_pipeline,
    seeded_sample,
    train_encoders,
    transitions_by_task,
)
from .pseudo_pairs import load_pairs, save_pairs
from .rectified_flow import (
    Toy2dConfig,
    load_velocity_field,
    save_velocity_field,
    toy2d_experiment,
    toy2d_point_clouds,
    train_flow,
    transport_batch,
)

EXIT_CODES = (
    (ValidationError, 2),
    (ParseError, 3),
    (CompatibilityError, 4),
    ((TrainingError, TransportError), 5),
    (UsageError, 6),
    (FlowAlignError, 1),
)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: Path, command: str, cfg: PipelineConfig, inputs, outputs, t0) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
        "versions": {
            "flowalign": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_time_s": round(time.time() - t0, 3),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _resolve_config(args) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset_config(args.preset)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    cfg.validate()
    return cfg


def _load_encoders(enc_dir: Path):
    enc_h = load_encoder(enc_dir / "encoder_human.json")
    enc_r = load_encoder(enc_dir / "encoder_robot.json")
    if enc_h.domain != "human" or enc_r.domain != "robot":
        raise CompatibilityError("encoder checkpoints are swapped or mislabeled")
    return enc_h, enc_r


def cmd_gen_data(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(cfg.gen, cfg.seed)
    save_dataset(dataset, out)
    _write_manifest(out.parent, "gen-data", cfg, [], [out], t0)
    print(f"wrote {out} ({len(dataset.trajectories)} trajectories)")
    return 0


def cmd_train_encoders(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    dataset = load_dataset(args.dataset)
    train_set, _ = dataset.split_holdout(cfg.eval.holdout_fraction)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trained = train_encoders(cfg, train_set)
    outputs = []
    for domain in ("human", "robot"):
        path = out_dir / f"encoder_{domain}.json"
        save_encoder(trained[domain]["encoder"], path)
        outputs.append(path)
        curve = trained[domain]["curve"]
        print(f"{domain}: reconstruction {curve[0]:.4g} -> {curve[-1]:.4g}")
    _write_manifest(out_dir, "train-encoders", cfg, [args.dataset], outputs, t0)
    return 0


def cmd_build_pairs(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    dataset = load_dataset(args.dataset)
    train_set, _ = dataset.split_holdout(cfg.eval.holdout_fraction)
    enc_h, enc_r = _load_encoders(Path(args.encoders))
    stats = compute_all_stats(train_set)
    latents = encode_dataset(enc_h, enc_r, train_set)
    transitions = transitions_by_task(cfg, train_set, latents, stats)
    pairs = mine_all_pairs(cfg, transitions)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pairs(pairs, cfg.pairs, out, latent_fingerprint=latent_space_fingerprint(enc_h, enc_r))
    _write_manifest(out.parent, "build-pairs", cfg, [args.dataset], [out], t0)
    print(f"wrote {out} ({len(pairs)} pairs)")
    return 0


def cmd_train_flow(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    pairs, _, fingerprint = load_pairs(args.pairs)
    vf, curve = train_flow(pairs, cfg.flow, latent_fingerprint=fingerprint)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_velocity_field(vf, out)
    _write_manifest(out.parent, "train-flow", cfg, [args.pairs], [out], t0)
    print(f"wrote {out} (loss {curve[0]:.4g} -> {curve[-1]:.4g})")
    return 0


def _check_fingerprint(vf, enc_h, enc_r) -> None:
    expected = latent_space_fingerprint(enc_h, enc_r)
    if vf.latent_fingerprint and vf.latent_fingerprint != expected:
        raise CompatibilityError(
            f"velocity field was trained on latent space {vf.latent_fingerprint}, "
            f"these encoders produce {expected}"
        )


def cmd_transport(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    dataset = load_dataset(args.dataset)
    enc_h, enc_r = _load_encoders(Path(args.encoders))
    vf = load_velocity_field(args.vf)
    _check_fingerprint(vf, enc_h, enc_r)
    train_set, holdout_set = dataset.split_holdout(cfg.eval.holdout_fraction)
    subset = {"train": train_set, "holdout": holdout_set, "all": dataset}[args.split]
    latents = encode_dataset(enc_h, enc_r, subset)
    source, refs = flat_latents(subset, latents, "human")
    moved = transport_batch(vf, source)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(
        out,
        {
            "kind": "transported_latents",
            "format_version": 1,
            "domain": "human",
            "split": args.split,
            "latent_fingerprint": vf.latent_fingerprint,
            "k_steps": vf.k_steps,
            "refs": [list(r) for r in refs],
            "latents": [[float(v) for v in row] for row in moved],
        },
    )
    _write_manifest(out.parent, "transport", cfg, [args.dataset, args.vf], [out], t0)
    print(f"wrote {out} ({len(moved)} transported latents)")
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    dataset = load_dataset(args.dataset)
    enc_h, enc_r = _load_encoders(Path(args.encoders))
    vf = load_velocity_field(args.vf)
    _check_fingerprint(vf, enc_h, enc_r)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set, holdout_set = dataset.split_holdout(cfg.eval.holdout_fraction)
    hold_latents = encode_dataset(enc_h, enc_r, holdout_set)
    hold_h, _ = flat_latents(holdout_set, hold_latents, "human")
    hold_r, _ = flat_latents(holdout_set, hold_latents, "robot")
    report = eval_alignment(
        hold_h, hold_r, vf,
        solver=cfg.eval.solver, max_points=cfg.eval.max_points, seed=cfg.eval.seed,
    )
    outputs = []
    emd_path = out_dir / "emd_report.json"
    _write_json(emd_path, {"kind": "emd_report", "config_hash": config_hash(cfg), **report.to_dict()})
    outputs.append(emd_path)

    if dataset.has_truth:
        train_latents = encode_dataset(enc_h, enc_r, train_set)
        n_test = max(1, round(cfg.eval.robot_force_samples / (cfg.eval.force_train_test_ratio + 1)))
        n_train = cfg.eval.robot_force_samples - n_test
        rx, ry = force_arrays(train_set, train_latents, "robot")
        robot_train = seeded_sample(rx, ry, n_train, cfg.eval.seed)
        tx, ty = force_arrays(holdout_set, hold_latents, "robot")
        robot_test = seeded_sample(tx, ty, n_test, cfg.eval.seed + 2)
        hx = np.concatenate([force_arrays(train_set, train_latents, "human")[0],
                             force_arrays(holdout_set, hold_latents, "human")[0]])
        hy = np.concatenate([force_arrays(train_set, train_latents, "human")[1],
                             force_arrays(holdout_set, hold_latents, "human")[1]])
        human_eval = seeded_sample(hx, hy, cfg.eval.human_force_samples, cfg.eval.seed + 1)
        force_report = eval_force_transfer(
            robot_train, robot_test, human_eval, vf, cfg.force,
            runs=cfg.eval.force_runs, seed=cfg.eval.seed,
        )
        force_path = out_dir / "force_report.json"
        _write_json(force_path, {"kind": "force_report", "config_hash": config_hash(cfg), **force_report.to_dict()})
        outputs.append(force_path)
        print("force settings (per-axis L1 means):")
        for name, vals in force_report.settings.items():
            print(f"  {name}: {[round(v, 4) for v in vals['mean']]}")

    projection = pca_export(
        {"human": hold_h, "robot": hold_r, "human_aligned": transport_batch(vf, hold_h)}
    )
    pca_path = out_dir / "pca.csv"
    write_pca_csv(projection, pca_path)
    outputs.append(pca_path)

    _write_manifest(out_dir, "eval", cfg, [args.dataset, args.vf], outputs, t0)
    print(
        f"EMD {report.emd_before:.4f} -> {report.emd_after:.4f} "
        f"(reduction {report.reduction_pct:.1f}%)"
    )
    return 0


def cmd_sweep(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    dataset = load_dataset(args.dataset)
    enc_h, enc_r = _load_encoders(Path(args.encoders))
    train_set, holdout_set = dataset.split_holdout(cfg.eval.holdout_fraction)
    stats = compute_all_stats(train_set)
    train_latents = encode_dataset(enc_h, enc_r, train_set)
    transitions = transitions_by_task(cfg, train_set, train_latents, stats)
    hold_latents = encode_dataset(enc_h, enc_r, holdout_set)
    hold_h, _ = flat_latents(holdout_set, hold_latents, "human")
    hold_r, _ = flat_latents(holdout_set, hold_latents, "robot")

    inputs = SweepInputs(
        transitions=transitions,
        holdout_human=hold_h,
        holdout_robot=hold_r,
        pair_config=cfg.pairs,
        flow_config=cfg.flow,
        solver=cfg.eval.solver,
        max_points=cfg.eval.max_points,
        seed=cfg.eval.seed,
        latent_fingerprint=latent_space_fingerprint(enc_h, enc_r),
    )
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    else:
        values = list(LAMBDA_GRID if args.param == "lambda" else DELTA_GRID)
    rows = run_sweep(args.param, values, inputs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {"kind": "sweep", "param": args.param, "config_hash": config_hash(cfg), "rows": rows})
    _write_manifest(out.parent, "sweep", cfg, [args.dataset], [out], t0)
    for row in rows:
        if "error" in row:
            print(f"  {args.param}={row['value']}: ERROR {row['error']}")
        else:
            print(f"  {args.param}={row['value']}: reduction {row['reduction_pct']:.1f}%")
    return 0


def cmd_toy2d(args) -> int:
    t0 = time.time()
    cfg = _resolve_config(args)
    toy_cfg = Toy2dConfig(pair_noise=args.noise)
    if args.points:
        toy_cfg.n_per_subset = args.points
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = toy2d_experiment(toy_cfg, seed=cfg.seed)
    metrics_path = out_dir / "toy2d_metrics.json"
    _write_json(metrics_path, {"kind": "toy2d_metrics", "noise": args.noise, **results})
    clouds = toy2d_point_clouds(toy_cfg, seed=cfg.seed)
    clouds_path = out_dir / "toy2d_points.csv"
    with open(clouds_path, "w") as fh:
        fh.write("cloud,label,x,y\n")
        for name in ("source", "target"):
            labels = clouds[f"{name}_labels"]
            for row, lab in zip(clouds[name], labels):
                fh.write(f"{name},{int(lab)},{row[0]!r},{row[1]!r}\n")
        for row, lab in zip(clouds["transported"], clouds["source_labels"]):
            fh.write(f"transported,{int(lab)},{row[0]!r},{row[1]!r}\n")
    _write_manifest(out_dir, "toy2d", cfg, [], [metrics_path, clouds_path], t0)
    for mode in ("guided", "random"):
        m = results[mode]
        print(
            f"{mode}: agreement {m['correspondence_agreement']:.3f}, "
            f"EMD {m['emd_before']:.3f} -> {m['emd_after']:.3f}"
        )
    return 0


def cmd_run(args) -> int:
    """Whole pipeline in one process, writing the same artifacts as the stages."""
    t0 = time.time()
    cfg = _resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(cfg)
    outputs = []

    data_path = out_dir / "dataset.jsonl"
    save_dataset(result.dataset, data_path)
    outputs.append(data_path)
    for domain in ("human", "robot"):
        path = out_dir / f"encoder_{domain}.json"
        save_encoder(result.encoders[domain]["encoder"], path)
        outputs.append(path)
    pairs_path = out_dir / "pairs.jsonl"
    save_pairs(
        result.pairs, cfg.pairs, pairs_path,
        latent_fingerprint=result.velocity_field.latent_fingerprint,
    )
    outputs.append(pairs_path)
    vf_path = out_dir / "velocity_field.json"
    save_velocity_field(result.velocity_field, vf_path)
    outputs.append(vf_path)
    emd_path = out_dir / "emd_report.json"
    _write_json(emd_path, {"kind": "emd_report", "config_hash": config_hash(cfg), **result.emd_report.to_dict()})
    outputs.append(emd_path)
    if result.force_report is not None:
        force_path = out_dir / "force_report.json"
        _write_json(force_path, {"kind": "force_report", "config_hash": config_hash(cfg), **result.force_report.to_dict()})
        outputs.append(force_path)
    pca_path = out_dir / "pca.csv"
    write_pca_csv(pca_projection_from(result), pca_path)
    outputs.append(pca_path)
    config_path = out_dir / "config.json"
    save_config(cfg, config_path)
    outputs.append(config_path)
    _write_manifest(out_dir, "run", cfg, [], outputs, t0)
    print(
        f"pipeline done: {len(result.pairs)} pairs, EMD reduction "
        f"{result.emd_report.reduction_pct:.1f}%"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowalign",
        description="Pseudo-pair guided rectified-flow alignment between sensor-trajectory domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline config JSON (overrides --preset)")
        p.add_argument("--preset", default="desk", choices=PRESETS)
        p.add_argument("--seed", type=int, default=None, help="override the master seed")

    p = sub.add_parser("gen-data", help="generate a synthetic two-domain dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-encoders", help="train both domain encoders")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_encoders)

    p = sub.add_parser("build-pairs", help="mine cross-domain pseudo-pairs")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--encoders", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("train-flow", help="train the transport velocity field")
    common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("transport", help="transport human latents into the robot space")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--encoders", required=True)
    p.add_argument("--vf", required=True)
    p.add_argument("--split", default="holdout", choices=("train", "holdout", "all"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("eval", help="alignment, force-transfer, and PCA reports")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--encoders", required=True)
    p.add_argument("--vf", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sensitivity sweep over lambda or delta")
    common(p)
    p.add_argument("--param", required=True, choices=("lambda", "delta"))
    p.add_argument("--values", help="comma-separated override of the default grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--encoders", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("toy2d", help="2-D guided-vs-random pairing comparison")
    common(p)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_toy2d)

    p = sub.add_parser("run", help="full pipeline into one output directory")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FlowAlignError as exc:
        for types, code in EXIT_CODES:
            if isinstance(exc, types):
                print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
