from itertools import permutations

import numpy as np
import pytest

from flowalign.errors import ShapeError, UsageError, ValidationError
from flowalign.evaluation import (
    ForceDecoderConfig,
    SweepInputs,
    emd,
    eval_alignment,
    eval_force_transfer,
    pca_export,
    r_squared,
    sweep,
    train_force_decoder,
    write_pca_csv,
)
from flowalign.pseudo_pairs import PairConfig
from flowalign.rectified_flow import FlowConfig, zero_velocity_field
from tests.test_pseudo_pairs import random_transition_set


def brute_force_emd(a, b):
    """Permutation-enumeration oracle, feasible for n <= 6."""
    n = len(a)
    best = np.inf
    for perm in permutations(range(n)):
        cost = np.mean([np.linalg.norm(a[i] - b[j]) for i, j in enumerate(perm)])
        best = min(best, cost)
    return best


def test_emd_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(10, 3))
    assert emd(a, a) == 0.0


def test_emd_one_dimensional_pair():
    assert emd([[0.0]], [[3.0]]) == pytest.approx(3.0, abs=1e-15)


def test_emd_matches_permutation_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(1, 5))
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        assert emd(a, b) == pytest.approx(brute_force_emd(a, b), abs=1e-12)


def test_emd_metric_axioms_on_samples():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, d = 8, 3
        a, b, c = (rng.normal(size=(n, d)) for _ in range(3))
        assert emd(a, a) <= 1e-12
        assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-9)
        assert emd(a, c) <= emd(a, b) + emd(b, c) + 1e-9


def test_emd_scale_equivariance():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(12, 4))
    b = rng.normal(size=(12, 4))
    base = emd(a, b)
    for s in (0.1, 2.0, 37.5):
        assert emd(s * a, s * b) == pytest.approx(s * base, rel=1e-12)


def test_emd_size_mismatch_requires_subsampling():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(10, 2))
    b = rng.normal(size=(7, 2))
    with pytest.raises(UsageError):
        emd(a, b)
    value = emd(a, b, max_points=7, seed=1)
    assert value >= 0.0
    assert emd(a, b, max_points=7, seed=1) == value  # seeded subsampling is stable


def test_entropic_solver_approximates_exact():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(40, 3)) + 0.5
    exact = emd(a, b)
    approx = emd(a, b, solver="entropic", epsilon=0.01)
    assert abs(approx - exact) / exact < 0.1
    # unequal sizes are fine for the entropic solver
    assert emd(a, b[:25], solver="entropic", epsilon=0.05) > 0.0


def test_emd_validation():
    with pytest.raises(ValidationError):
        emd(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        emd(np.zeros((3, 2)), np.zeros((3, 4)))
    with pytest.raises(ValidationError):
        emd(np.zeros((3, 2)), np.zeros((3, 2)), solver="magic")


def test_eval_alignment_identity_field_gives_zero_reduction():
    rng = np.random.default_rng(6)
    h = rng.normal(size=(30, 4))
    r = rng.normal(size=(30, 4)) + 2.0
    report = eval_alignment(h, r, zero_velocity_field(4), max_points=30, seed=0)
    assert report.reduction_pct == pytest.approx(0.0, abs=1e-12)
    assert report.emd_before == pytest.approx(report.emd_after, abs=1e-12)


def test_eval_alignment_perfect_transport_reaches_full_reduction():
    # constant displacement c maps every human latent exactly onto a robot latent
    from tests.test_rectified_flow import constant_field

    rng = np.random.default_rng(7)
    h = rng.normal(size=(12, 3))
    c = np.array([5.0, -1.0, 2.0])
    r = h + c
    report = eval_alignment(h, r, constant_field(3, c, k_steps=1), max_points=12, seed=0)
    assert report.emd_after <= 1e-9
    assert report.reduction_pct >= 100.0 - 1e-6


def test_force_decoder_fits_constant_force():
    rng = np.random.default_rng(8)
    latents = rng.normal(size=(60, 6))
    forces = np.tile([1.5, -0.5, 2.0], (60, 1))
    cfg = ForceDecoderConfig(hidden=(8,), epochs=30000, learning_rate=3e-3, batch_size=60, seed=0)
    net, curve = train_force_decoder(latents, forces, cfg)
    assert curve[-1] <= curve[0]
    pred = net.forward(latents)
    assert np.max(np.abs(pred - forces)) < 1e-3


def test_force_decoder_recovers_linear_map():
    rng = np.random.default_rng(9)
    latents = rng.normal(size=(400, 8))
    w = rng.normal(size=(8, 3))
    forces = latents @ w + np.array([0.2, -0.1, 0.4])
    cfg = ForceDecoderConfig(hidden=(64, 64), epochs=800, learning_rate=2e-3, batch_size=128, seed=1)
    net, _ = train_force_decoder(latents[:300], forces[:300], cfg)
    assert r_squared(net.forward(latents[300:]), forces[300:]) >= 0.95


def test_force_decoder_zero_latents_predict_mean_force():
    rng = np.random.default_rng(10)
    latents = np.zeros((50, 4))
    forces = rng.normal(size=(50, 3))
    cfg = ForceDecoderConfig(hidden=(8,), epochs=3000, learning_rate=1e-2, batch_size=50, seed=2)
    net, _ = train_force_decoder(latents, forces, cfg)
    pred = net.forward(latents)
    assert np.max(np.abs(pred - forces.mean(axis=0))) < 1e-3


def test_force_decoder_validation():
    with pytest.raises(ShapeError):
        train_force_decoder(np.zeros((5, 3)), np.zeros((5, 2)), ForceDecoderConfig())
    with pytest.raises(ValidationError):
        train_force_decoder(np.zeros((5, 3)), np.full((5, 3), np.nan), ForceDecoderConfig())


def test_force_transfer_identity_alignment_matches_unaligned():
    rng = np.random.default_rng(11)
    latents = rng.normal(size=(80, 5))
    forces = latents[:, :3] * 0.5
    vf = zero_velocity_field(5, k_steps=4)
    cfg = ForceDecoderConfig(hidden=(16,), epochs=60, learning_rate=2e-3, batch_size=64)
    report = eval_force_transfer(
        (latents[:60], forces[:60]),
        (latents[60:], forces[60:]),
        (latents, forces),
        vf,
        cfg,
        runs=3,
        seed=0,
    )
    assert report.runs == 3
    assert report.settings["h2r_unaligned"] == report.settings["h2r_aligned"]
    for setting in report.settings.values():
        assert len(setting["mean"]) == 3 and len(setting["std"]) == 3


def make_sweep_inputs(seed=0):
    rng = np.random.default_rng(seed)
    d = 4
    offset = np.array([4.0, -2.0, 1.0, 0.5])
    humans = random_transition_set(rng, "human", 60)
    robots = random_transition_set(rng, "robot", 60)
    for t in humans:
        t.latent = rng.normal(size=d)
    for t in robots:
        t.latent = rng.normal(size=d) + offset
    holdout_h = rng.normal(size=(40, d))
    holdout_r = rng.normal(size=(40, d)) + offset
    flow_cfg = FlowConfig(
        width=32, depth=2, t_steps=6, epochs=120, batch_size=512, learning_rate=3e-3, k_steps=12
    )
    return SweepInputs(
        transitions={"pivot": (humans, robots)},
        holdout_human=holdout_h,
        holdout_robot=holdout_r,
        pair_config=PairConfig(delta=6.0),
        flow_config=flow_cfg,
        max_points=40,
        seed=3,
    )


def test_sweep_produces_row_per_value_and_is_deterministic():
    inputs = make_sweep_inputs()
    values = [0.8, 1.0, 1.2]
    rows_a = sweep("lambda", values, inputs)
    rows_b = sweep("lambda", values, make_sweep_inputs())
    assert [r["value"] for r in rows_a] == values
    assert all("reduction_pct" in r for r in rows_a)
    assert rows_a == rows_b


def test_sweep_failed_row_is_reported_and_others_continue():
    inputs = make_sweep_inputs()
    rows = sweep("delta", [1e-9, 6.0], inputs)
    assert "error" in rows[0]
    assert "reduction_pct" in rows[1]


def test_sweep_validation():
    inputs = make_sweep_inputs()
    with pytest.raises(ValidationError):
        sweep("gamma", [1.0, 2.0], inputs)
    with pytest.raises(ValidationError):
        sweep("lambda", [1.0], inputs)


def test_pca_recovers_planar_data():
    rng = np.random.default_rng(12)
    basis = np.linalg.qr(rng.normal(size=(8, 2)))[0].T  # (2, 8) orthonormal rows
    coords = rng.normal(size=(50, 2)) * np.array([3.0, 1.0])
    points = coords @ basis + 0.5
    proj = pca_export({"cloud": points})
    assert not proj.degenerate
    recon = proj.coords["cloud"] @ proj.components + proj.mean
    assert np.max(np.abs(recon - points)) < 1e-9
    assert proj.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)


def test_pca_isotropic_cloud_explained_variance():
    rng = np.random.default_rng(13)
    d = 32
    points = rng.normal(size=(2000, d))
    proj = pca_export({"cloud": points})
    assert abs(proj.explained_variance_ratio.sum() - 2.0 / d) < 0.05


def test_pca_duplicated_points_share_coordinates():
    rng = np.random.default_rng(14)
    pts = rng.normal(size=(20, 5))
    proj = pca_export({"a": pts, "b": pts.copy()})
    assert np.array_equal(proj.coords["a"], proj.coords["b"])


def test_pca_sign_convention_is_deterministic():
    rng = np.random.default_rng(15)
    pts = rng.normal(size=(40, 6)) * np.array([5.0, 2.0, 1.0, 0.5, 0.2, 0.1])
    proj = pca_export({"x": pts})
    for comp in proj.components:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_rank_deficient_falls_back_with_diagnostic(caplog):
    import logging

    pts = np.tile([1.0, 2.0, 3.0], (5, 1))
    with caplog.at_level(logging.WARNING):
        proj = pca_export({"flat": pts})
    assert proj.degenerate
    assert np.array_equal(proj.coords["flat"], np.zeros((5, 2)))
    assert any("zero-padded" in r.message for r in caplog.records)


def test_pca_validation():
    with pytest.raises(ValidationError):
        pca_export({})
    with pytest.raises(ValidationError):
        pca_export({"a": np.zeros((2, 3))})
    with pytest.raises(ValidationError):
        pca_export({"a": np.zeros((5, 1))})
    with pytest.raises(ShapeError):
        pca_export({"a": np.zeros((5, 3)), "b": np.zeros((5, 4))})


def test_pca_csv_export(tmp_path):
    rng = np.random.default_rng(16)
    proj = pca_export({"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(3, 3))})
    path = tmp_path / "pca.csv"
    write_pca_csv(proj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "set,x,y"
    assert len(lines) == 1 + 4 + 3
    assert lines[1].startswith("a,")
