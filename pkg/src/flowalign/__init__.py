"""Cross-domain latent alignment of unpaired sensor trajectories via rectified flow.

Pipeline: synthetic two-domain trajectory data -> robot-anchored pose
normalization -> self-supervised tactile encoders -> transition-similarity
pseudo-pair mining with contact filtering -> velocity-field training ->
Euler-integrated latent transport -> EMD / force-probe / sensitivity
evaluation. See the CLI (`flowalign --help`) for the staged workflow.
"""

from .config import (
    EvalConfig,
    PipelineConfig,
    config_hash,
    desk_config,
    full_config,
    load_config,
    preset_config,
    save_config,
    smoke_config,
)
from .data_model import (
    Dataset,
    GenConfig,
    SensorSpec,
    TactileFrame,
    Trajectory,
    contact_norm,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .encoders import (
    EncoderConfig,
    TactileEncoder,
    encode_trajectory,
    load_encoder,
    save_encoder,
    train_ssl,
)
from .errors import (
    CompatibilityError,
    DegenerateTaskError,
    FlowAlignError,
    ParseError,
    ShapeError,
    TrainingError,
    TransportError,
    UsageError,
    ValidationError,
)
from .evaluation import (
    EmdReport,
    ForceDecoderConfig,
    ForceReport,
    emd,
    eval_alignment,
    eval_force_transfer,
    pca_export,
    sweep,
    train_force_decoder,
)
from .nn_core import DenseNet, OptimizerState, fit_mse, step
from .normalize import TaskStats, compute_stats, normalize_pose
from .pipeline import run_pipeline
from .pseudo_pairs import (
    PairConfig,
    PseudoPair,
    TransitionObservation,
    build_transitions,
    is_contact,
    mine_pairs,
    similarity,
)
from .rectified_flow import (
    FlowConfig,
    Toy2dConfig,
    VelocityField,
    load_velocity_field,
    save_velocity_field,
    toy2d_experiment,
    train_flow,
    transport,
    transport_batch,
)

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError",
    "Dataset",
    "DegenerateTaskError",
    "DenseNet",
    "EmdReport",
    "EncoderConfig",
    "EvalConfig",
    "FlowAlignError",
    "FlowConfig",
    "ForceDecoderConfig",
    "ForceReport",
    "GenConfig",
    "OptimizerState",
    "PairConfig",
    "ParseError",
    "PipelineConfig",
    "PseudoPair",
    "SensorSpec",
    "ShapeError",
    "TactileEncoder",
    "TactileFrame",
    "TaskStats",
    "Toy2dConfig",
    "TrainingError",
    "Trajectory",
    "TransitionObservation",
    "TransportError",
    "UsageError",
    "ValidationError",
    "VelocityField",
    "build_transitions",
    "compute_stats",
    "config_hash",
    "contact_norm",
    "desk_config",
    "emd",
    "encode_trajectory",
    "eval_alignment",
    "eval_force_transfer",
    "fit_mse",
    "full_config",
    "generate_synthetic",
    "is_contact",
    "load_config",
    "load_dataset",
    "load_encoder",
    "load_velocity_field",
    "mine_pairs",
    "normalize_pose",
    "pca_export",
    "preset_config",
    "run_pipeline",
    "save_config",
    "save_dataset",
    "save_encoder",
    "save_velocity_field",
    "similarity",
    "smoke_config",
    "step",
    "sweep",
    "toy2d_experiment",
    "train_flow",
    "train_force_decoder",
    "train_ssl",
    "transport",
    "transport_batch",
]
