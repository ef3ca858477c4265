"""Acceptance suite: ten fixed criteria, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines stream.
Thresholds are pinned here; nothing is calibrated at runtime.
"""
import time
from itertools import permutations

import numpy as np
import pytest

from flowalign.cli import main as cli_main
from flowalign.config import DELTA_GRID, LAMBDA_GRID, desk_config
from flowalign.data_model import SensorSpec
from flowalign.encoders import EncoderConfig, TactileEncoder
from flowalign.evaluation import emd, sweep
from flowalign.nn_core import DenseNet, fd_max_relative_error, mse_loss
from flowalign.normalize import compute_stats, normalize_pose
from flowalign.pipeline import run_pipeline, sweep_inputs_from
from flowalign.pseudo_pairs import PairConfig, mine_pairs
from flowalign.rectified_flow import Toy2dConfig, toy2d_experiment, transport
from tests.test_normalize import make_robot_traj
from tests.test_pseudo_pairs import oracle_mine, random_transition_set
from tests.test_rectified_flow import linear_decay_field


def report(number: int, name: str, ok: bool, detail: str, t0: float) -> None:
    line = (
        f"[criterion {number:02d}] {name}: {'PASS' if ok else 'FAIL'} "
        f"({detail}; {time.perf_counter() - t0:.1f}s)"
    )
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def desk_results():
    """Desk-scale pipelines shared by criteria 6, 7, and 8."""
    out = {}
    for seed in (0, 1, 2):
        out[seed] = run_pipeline(desk_config(seed=seed), with_force=(seed == 0))
    return out


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    worst = {}

    rng = np.random.default_rng(101)
    errs = []
    for trial in range(10):  # velocity-field family: latent+time in, latent out
        net = DenseNet([9, 32, 32, 8], ["tanh", "tanh", "identity"], seed=trial)
        x = rng.normal(size=(6, 9))
        y = rng.normal(size=(6, 8))
        out = net.forward_cached(x)
        grads, _ = net.backward(x, (2.0 / x.shape[0]) * (out - y))
        errs.append(
            fd_max_relative_error(
                lambda: mse_loss(net.forward(x), y), net.parameters(), grads,
                rng=rng, n_coords=12, eps=1e-5,
            )
        )
    worst["velocity_field"] = max(errs)

    errs = []
    spec = SensorSpec(3, 2, 3)
    for trial in range(10):  # encoder family, attention pooling included
        enc = TactileEncoder(
            "robot",
            spec,
            EncoderConfig(latent_dim=6, token_dim=8, attn_dim=4,
                          trunk_hidden=(8,), decoder_hidden=(8,), seed=trial),
        )
        raws = rng.normal(size=(4,) + spec.shape)
        _, grads = enc.loss_and_grads(raws)
        errs.append(
            fd_max_relative_error(
                lambda: enc.reconstruction_loss(raws), enc.parameters(), grads,
                rng=rng, n_coords=12, eps=1e-5,
            )
        )
    worst["encoder"] = max(errs)

    errs = []
    for trial in range(10):  # force-decoder family: relu regression net
        net = DenseNet([16, 64, 64, 3], ["relu", "relu", "identity"], seed=500 + trial)
        x = rng.normal(size=(8, 16))
        y = rng.normal(size=(8, 3))
        out = net.forward_cached(x)
        grads, _ = net.backward(x, (2.0 / x.shape[0]) * (out - y))
        errs.append(
            fd_max_relative_error(
                lambda: mse_loss(net.forward(x), y), net.parameters(), grads,
                rng=rng, n_coords=12, eps=1e-5,
            )
        )
    worst["force_decoder"] = max(errs)

    overall = max(worst.values())
    report(
        1,
        "gradient correctness",
        overall < 1e-4,
        f"max rel err {overall:.2e} over 120 draws x 3 families",
        t0,
    )


def test_criterion_02_emd_permutation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(1, 5))
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        brute = min(
            np.mean([np.linalg.norm(a[i] - b[j]) for i, j in enumerate(perm)])
            for perm in permutations(range(n))
        )
        worst = max(worst, abs(emd(a, b) - brute))
    report(2, "EMD permutation oracle", worst <= 1e-12, f"max |diff| {worst:.2e} over 200 instances", t0)


def test_criterion_03_euler_convergence_order():
    t0 = time.perf_counter()
    vf = linear_decay_field(3)
    h = np.array([1.0, -2.0, 0.5])
    exact = h * np.exp(-1.0)
    ks = [2**i for i in range(9)]
    errors = [np.linalg.norm(transport(vf, h, k_steps=k) - exact) for k in ks]
    slope = float(np.polyfit(np.log(ks), np.log(errors), 1)[0])
    report(3, "Euler convergence order", -1.2 <= slope <= -0.8, f"log-log slope {slope:.3f}", t0)


def test_criterion_04_pseudo_pair_soundness_and_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    violations = 0
    for _ in range(1000):
        humans = random_transition_set(rng, "human", int(rng.integers(4, 26)))
        robots = random_transition_set(rng, "robot", int(rng.integers(4, 26)))
        cfg = PairConfig(
            balance=float(rng.uniform(0.5, 1.5)),
            neighbors=int(rng.integers(1, 5)),
            delta=float(rng.uniform(0.5, 6.0)),
        )
        h_contacts = {h.key: h.contact for h in humans}
        r_contacts = {r.key: r.contact for r in robots}
        for p in mine_pairs(humans, robots, cfg):
            if p.score >= cfg.delta or h_contacts[p.human_key] != r_contacts[p.robot_key]:
                violations += 1

    mismatches = 0
    for trial in range(3):  # brute-force equality at the 200 x 200 bound
        humans = random_transition_set(rng, "human", 200)
        robots = random_transition_set(rng, "robot", 200)
        cfg = PairConfig(delta=4.0)
        mined = [(p.human_key, p.robot_key, p.score) for p in mine_pairs(humans, robots, cfg)]
        oracle = [(h, r, s) for (h, r, s, _) in oracle_mine(humans, robots, cfg)]
        if mined != oracle:
            mismatches += 1
    report(
        4,
        "pseudo-pair soundness",
        violations == 0 and mismatches == 0,
        f"0 filter violations in 1000 sets, {3 - mismatches}/3 brute-force matches",
        t0,
    )


def test_criterion_05_toy2d_guided_vs_random():
    t0 = time.perf_counter()
    clean_min, noisy_margin = np.inf, np.inf
    for seed in range(5):
        clean = toy2d_experiment(Toy2dConfig(pair_noise=0.0), seed=seed)
        clean_min = min(clean_min, clean["guided"]["correspondence_agreement"])
        noisy = toy2d_experiment(Toy2dConfig(pair_noise=0.2), seed=seed)
        noisy_margin = min(
            noisy_margin,
            noisy["guided"]["correspondence_agreement"]
            - noisy["random"]["correspondence_agreement"],
        )
    ok = clean_min >= 0.95 and noisy_margin > 0.0
    report(
        5,
        "toy 2-D guided transport",
        ok,
        f"min clean agreement {clean_min:.3f}, min noisy margin {noisy_margin:+.3f} over 5 seeds",
        t0,
    )


def test_criterion_06_alignment_reduction(desk_results):
    t0 = time.perf_counter()
    reductions = {seed: res.emd_report.reduction_pct for seed, res in desk_results.items()}
    ok = all(r >= 70.0 for r in reductions.values())
    detail = ", ".join(f"seed {s}: {r:.1f}%" for s, r in reductions.items())
    report(6, "EMD alignment reduction >= 70%", ok, detail, t0)


def test_criterion_07_force_transfer_ordering(desk_results):
    t0 = time.perf_counter()
    f = desk_results[0].force_report
    aligned = np.asarray(f.settings["h2r_aligned"]["mean"])
    unaligned = np.asarray(f.settings["h2r_unaligned"]["mean"])
    baseline = np.asarray(f.settings["r2r"]["mean"])
    ok = bool(np.all(aligned < unaligned) and np.all(aligned <= 2.0 * baseline))
    detail = (
        f"aligned {np.round(aligned, 4).tolist()} vs unaligned "
        f"{np.round(unaligned, 4).tolist()}, 2x baseline {np.round(2 * baseline, 4).tolist()}"
    )
    report(7, "force-transfer ordering", ok, detail, t0)


def test_criterion_08_sensitivity_stability(desk_results):
    t0 = time.perf_counter()
    inputs = sweep_inputs_from(desk_results[0])
    spreads = {}
    for param, grid in (("lambda", LAMBDA_GRID), ("delta", DELTA_GRID)):
        rows = sweep(param, grid, inputs)
        reductions = [row["reduction_pct"] for row in rows if "reduction_pct" in row]
        assert len(reductions) == len(grid), f"sweep rows failed: {rows}"
        spreads[param] = max(reductions) - min(reductions)
    ok = all(s <= 10.0 for s in spreads.values())
    detail = ", ".join(f"{p}: {s:.2f} pts" for p, s in spreads.items())
    report(8, "sensitivity-sweep stability", ok, detail, t0)


def test_criterion_09_pipeline_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        code = cli_main(["run", "--preset", "smoke", "--seed", "0", "--out-dir", str(out_dir)])
        assert code == 0
        runs.append(out_dir)
    diffs = []
    files_a = sorted(p.name for p in runs[0].iterdir() if p.name != "manifest.json")
    files_b = sorted(p.name for p in runs[1].iterdir() if p.name != "manifest.json")
    assert files_a == files_b
    for name in files_a:
        if (runs[0] / name).read_bytes() != (runs[1] / name).read_bytes():
            diffs.append(name)
    report(
        9,
        "byte-identical pipeline rerun",
        not diffs,
        f"{len(files_a)} artifacts compared, differing: {diffs or 'none'}",
        t0,
    )


def test_criterion_10_normalization_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    worst_mu, worst_sigma = 0.0, 0.0
    for task in range(50):
        n = int(rng.integers(20, 200))
        positions = rng.normal(size=(n, 3)) * rng.uniform(0.5, 20.0) + rng.normal(size=3) * 10.0
        obj_pos = rng.normal(size=(n, 3)) * rng.uniform(0.1, 5.0)
        obj_rot = rng.normal(size=(n, 3)) * rng.uniform(0.05, 0.8)
        traj = make_robot_traj(positions, obj_pos=obj_pos, obj_rot=obj_rot)
        stats = compute_stats([traj], "pivot")
        for values, kind in ((positions, "fingertip"), (obj_pos, "object_position"), (obj_rot, "object_orientation")):
            normalized = normalize_pose(values, stats, kind)
            worst_mu = max(worst_mu, float(np.linalg.norm(normalized.mean(axis=0))))
            worst_sigma = max(worst_sigma, abs(float(normalized.std(axis=0).max()) - 1.0))
    ok = worst_mu <= 1e-9 and worst_sigma <= 1e-9
    report(
        10,
        "normalization contract",
        ok,
        f"max |mu| {worst_mu:.2e}, max |sigma_max - 1| {worst_sigma:.2e} over 50 tasks x 3 categories",
        t0,
    )
