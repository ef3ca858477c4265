"""Quantitative evaluation: EMD between latent clouds, force-probe transfer,
hyperparameter sweeps, and 2-D PCA export for figures."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import FlowAlignError, ShapeError, TrainingError, UsageError, ValidationError
from .nn_core import DenseNet, fit_mse
from .pseudo_pairs import PairConfig, mine_pairs
from .rectified_flow import FlowConfig, VelocityField, train_flow, transport_batch

log = logging.getLogger(__name__)

SOLVERS = ("exact_assignment", "entropic")


# ---------------------------------------------------------------------------
# Earth Mover's Distance


def _as_points(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError(f"{name} must be a nonempty (n, d) array, got shape {arr.shape}")
    return arr


def _sinkhorn_cost(cost: np.ndarray, epsilon: float, max_iter: int, tol: float) -> float:
    n, m = cost.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(max_iter):
        f = epsilon * (log_a - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - cost) / epsilon, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
        err = np.abs(plan.sum(axis=1) - np.exp(log_a)).max()
        if err < tol:
            break
    return float(np.sum(plan * cost))


def emd(
    a,
    b,
    solver: str = "exact_assignment",
    *,
    max_points: int | None = None,
    seed: int = 0,
    epsilon: float = 0.01,
    max_iter: int = 2000,
    tol: float = 1e-9,
) -> float:
    """Earth Mover's Distance between two uniform point clouds.

    The exact solver computes the optimal-assignment mean Euclidean cost and
    requires equal sizes; pass ``max_points`` to enable seeded subsampling to
    a common size. The entropic solver returns a Sinkhorn approximation at
    regularization ``epsilon`` and accepts unequal sizes.
    """
    if solver not in SOLVERS:
        raise ValidationError(f"unknown EMD solver {solver!r}, expected one of {SOLVERS}")
    pa = _as_points(a, "a")
    pb = _as_points(b, "b")
    if pa.shape[1] != pb.shape[1]:
        raise ShapeError(f"point dimensions differ: {pa.shape[1]} vs {pb.shape[1]}")
    if max_points is not None:
        target = min(len(pa), len(pb), int(max_points))
        rng = np.random.default_rng(seed)
        if len(pa) > target:
            pa = pa[np.sort(rng.choice(len(pa), target, replace=False))]
        if len(pb) > target:
            pb = pb[np.sort(rng.choice(len(pb), target, replace=False))]
    if solver == "exact_assignment":
        if len(pa) != len(pb):
            raise UsageError(
                f"exact_assignment needs equal sizes ({len(pa)} vs {len(pb)}); "
                "pass max_points to subsample"
            )
        cost = cdist(pa, pb)
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    return _sinkhorn_cost(cdist(pa, pb), epsilon, max_iter, tol)


@dataclass
class EmdReport:
    emd_before: float
    emd_after: float
    reduction_pct: float
    n_human: int
    n_robot: int
    n_used: int
    solver: str
    seed: int

    def to_dict(self) -> dict:
        return {
            "emd_before": self.emd_before,
            "emd_after": self.emd_after,
            "reduction_pct": self.reduction_pct,
            "n_human": self.n_human,
            "n_robot": self.n_robot,
            "n_used": self.n_used,
            "solver": self.solver,
            "seed": self.seed,
        }


def eval_alignment(
    human_latents,
    robot_latents,
    vf: VelocityField,
    *,
    solver: str = "exact_assignment",
    max_points: int = 256,
    seed: int = 0,
    k_steps: int | None = None,
) -> EmdReport:
    """EMD between the two latent clouds before and after transporting the human side."""
    h = _as_points(human_latents, "human_latents")
    r = _as_points(robot_latents, "robot_latents")
    if h.shape[1] != vf.latent_dim or r.shape[1] != vf.latent_dim:
        raise ShapeError(
            f"latent dims ({h.shape[1]}, {r.shape[1]}) do not match field dim {vf.latent_dim}"
        )
    rng = np.random.default_rng(seed)
    used = min(len(h), len(r), max_points)
    hs = h[np.sort(rng.choice(len(h), used, replace=False))]
    rs = r[np.sort(rng.choice(len(r), used, replace=False))]
    before = emd(hs, rs, solver=solver, epsilon=0.01)
    after = emd(transport_batch(vf, hs, k_steps), rs, solver=solver, epsilon=0.01)
    reduction = 100.0 * (1.0 - after / before) if before > 0.0 else 0.0
    return EmdReport(
        emd_before=before,
        emd_after=after,
        reduction_pct=reduction,
        n_human=len(h),
        n_robot=len(r),
        n_used=used,
        solver=solver,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Force probe


@dataclass
class ForceDecoderConfig:
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 400  # published recipe runs far longer; desk scale suffices
    learning_rate: float = 1e-4
    batch_size: int = 256
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("force decoder epochs/batch_size must be positive")
        if self.learning_rate <= 0.0:
            raise ValidationError("force decoder learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForceDecoderConfig":
        kwargs = dict(data)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def train_force_decoder(latents, forces, config: ForceDecoderConfig):
    """ReLU regression network from robot latents to 3-axis contact force."""
    config.validate()
    x = _as_points(latents, "latents")
    y = np.asarray(forces, dtype=np.float64)
    if y.shape != (x.shape[0], 3):
        raise ShapeError(f"force labels must be (n, 3), got {y.shape}")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ValidationError("force decoder inputs must be finite")
    net = DenseNet(
        [x.shape[1], *config.hidden, 3],
        ["relu"] * len(config.hidden) + ["identity"],
        seed=config.seed,
    )
    curve = fit_mse(
        net,
        x,
        y,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        seed=config.seed,
    )
    if curve[-1] > curve[0]:
        raise TrainingError(
            f"force decoder diverged: loss went from {curve[0]:.6g} to {curve[-1]:.6g}"
        )
    return net, curve


def r_squared(pred: np.ndarray, target: np.ndarray) -> float:
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - target.mean(axis=0)) ** 2))
    return 1.0 - ss_res / ss_tot


FORCE_SETTINGS = ("h2r_unaligned", "h2r_aligned", "r2r")


@dataclass
class ForceReport:
    """Per-axis L1 force errors, mean and std over seeded evaluation runs."""

    settings: dict  # name -> {"mean": [3], "std": [3]}
    runs: int
    seed: int
    axes: tuple[str, ...] = ("fx", "fy", "fz")

    def mean(self, setting: str) -> np.ndarray:
        return np.asarray(self.settings[setting]["mean"])

    def to_dict(self) -> dict:
        return {
            "axes": list(self.axes),
            "runs": self.runs,
            "seed": self.seed,
            "settings": {
                name: {"mean": list(map(float, v["mean"])), "std": list(map(float, v["std"]))}
                for name, v in self.settings.items()
            },
        }


def eval_force_transfer(
    robot_train: tuple[np.ndarray, np.ndarray],
    robot_test: tuple[np.ndarray, np.ndarray],
    human_eval: tuple[np.ndarray, np.ndarray],
    vf: VelocityField,
    config: ForceDecoderConfig,
    *,
    runs: int = 5,
    seed: int = 0,
    subsample: float = 0.8,
    k_steps: int | None = None,
) -> ForceReport:
    """Cross-domain force prediction under three settings.

    Robot force data train the decoder; human force labels are used only for
    testing. Each run retrains the decoder and redraws the evaluation
    subsample from its run seed, and all three settings inside one run score
    the identical human subsample.
    """
    if runs < 1:
        raise ValidationError(f"runs must be >= 1, got {runs}")
    if not 0.0 < subsample <= 1.0:
        raise ValidationError("subsample fraction must be in (0, 1]")
    x_train, y_train = (np.asarray(v, dtype=np.float64) for v in robot_train)
    x_test, y_test = (np.asarray(v, dtype=np.float64) for v in robot_test)
    x_human, y_human = (np.asarray(v, dtype=np.float64) for v in human_eval)
    aligned_human = transport_batch(vf, x_human, k_steps)

    per_setting = {name: [] for name in FORCE_SETTINGS}
    for run in range(runs):
        run_seed = seed + run
        decoder, _ = train_force_decoder(x_train, y_train, replace(config, seed=run_seed))
        rng = np.random.default_rng(run_seed)
        h_idx = np.sort(rng.choice(len(x_human), max(1, int(subsample * len(x_human))), replace=False))
        r_idx = np.sort(rng.choice(len(x_test), max(1, int(subsample * len(x_test))), replace=False))
        evals = {
            "h2r_unaligned": (x_human[h_idx], y_human[h_idx]),
            "h2r_aligned": (aligned_human[h_idx], y_human[h_idx]),
            "r2r": (x_test[r_idx], y_test[r_idx]),
        }
        for name, (inputs, labels) in evals.items():
            pred = decoder.forward(inputs)
            per_setting[name].append(np.mean(np.abs(pred - labels), axis=0))
    settings = {
        name: {
            "mean": np.mean(np.stack(errs), axis=0).tolist(),
            "std": np.std(np.stack(errs), axis=0).tolist(),
        }
        for name, errs in per_setting.items()
    }
    return ForceReport(settings=settings, runs=runs, seed=seed)


# ---------------------------------------------------------------------------
# Hyperparameter sweeps


SWEEP_PARAMS = ("lambda", "delta")


@dataclass
class SweepInputs:
    """Frozen pipeline artifacts a sweep re-mines and re-trains against."""

    transitions: dict  # task_id -> (human transitions, robot transitions)
    holdout_human: np.ndarray
    holdout_robot: np.ndarray
    pair_config: PairConfig
    flow_config: FlowConfig
    solver: str = "exact_assignment"
    max_points: int = 256
    seed: int = 0
    latent_fingerprint: str = ""


def sweep(param: str, values, inputs: SweepInputs) -> list[dict]:
    """Re-run mining + flow training + alignment eval for each parameter value.

    A failing row is reported in place and the remaining rows continue. All
    rows share the sweep seed, so rows differ only through the swept value.
    """
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"unknown sweep parameter {param!r}, expected one of {SWEEP_PARAMS}")
    values = list(values)
    if len(values) < 2:
        raise ValidationError("a sweep needs at least 2 values")
    rows = []
    for value in values:
        row = {"param": param, "value": float(value)}
        try:
            if param == "lambda":
                pair_cfg = replace(inputs.pair_config, balance=float(value))
            else:
                pair_cfg = replace(inputs.pair_config, delta=float(value))
            pairs = []
            for task in sorted(inputs.transitions):
                humans, robots = inputs.transitions[task]
                pairs.extend(mine_pairs(humans, robots, pair_cfg))
            vf, _ = train_flow(pairs, inputs.flow_config, inputs.latent_fingerprint)
            report = eval_alignment(
                inputs.holdout_human,
                inputs.holdout_robot,
                vf,
                solver=inputs.solver,
                max_points=inputs.max_points,
                seed=inputs.seed,
            )
            row.update(
                n_pairs=len(pairs),
                emd_before=report.emd_before,
                emd_after=report.emd_after,
                reduction_pct=report.reduction_pct,
            )
        except FlowAlignError as exc:
            row["error"] = str(exc)
            log.warning("sweep row %s=%s failed: %s", param, value, exc)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# PCA export


@dataclass
class PcaProjection:
    coords: dict  # label -> (n, 2) array
    components: np.ndarray  # (2, d)
    mean: np.ndarray  # (d,)
    explained_variance_ratio: np.ndarray  # (2,)
    degenerate: bool


def pca_export(point_sets: dict) -> PcaProjection:
    """Project labeled point sets onto the top-2 principal axes of their union.

    The sign convention pins each component's largest-magnitude loading
    positive. Rank-deficient input falls back to zero-padded components with
    a diagnostic instead of failing.
    """
    if not point_sets:
        raise ValidationError("need at least one point set")
    arrays = {name: _as_points(pts, name) for name, pts in point_sets.items()}
    dims = {a.shape[1] for a in arrays.values()}
    if len(dims) != 1:
        raise ShapeError(f"point sets have inconsistent dimensions: {sorted(dims)}")
    d = dims.pop()
    if d < 2:
        raise ValidationError(f"PCA export needs dimension >= 2, got {d}")
    union = np.concatenate(list(arrays.values()))
    if len(union) < 3:
        raise ValidationError(f"PCA export needs at least 3 points, got {len(union)}")
    mean = union.mean(axis=0)
    centered = union - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    total = float(np.sum(s**2))
    rank = int(np.sum(s > max(s[0], 1e-300) * 1e-12)) if s.size else 0
    degenerate = rank < 2
    components = np.zeros((2, d))
    evr = np.zeros(2)
    for i in range(min(2, rank)):
        components[i] = vt[i]
        evr[i] = s[i] ** 2 / total if total > 0 else 0.0
    if degenerate:
        log.warning("PCA input has rank %d < 2; missing components are zero-padded", rank)
    for i in range(2):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    coords = {name: (arr - mean) @ components.T for name, arr in arrays.items()}
    return PcaProjection(
        coords=coords,
        components=components,
        mean=mean,
        explained_variance_ratio=evr,
        degenerate=degenerate,
    )


def write_pca_csv(projection: PcaProjection, path) -> None:
    with open(path, "w") as fh:
        fh.write("set,x,y\n")
        for name, coords in projection.coords.items():
            for row in coords:
                fh.write(f"{name},{row[0]!r},{row[1]!r}\n")
