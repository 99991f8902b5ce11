"""Training configuration: nested dataclasses with YAML (de)serialization.

Defaults mirror the reference full-scale schedule; `desk_preset` shrinks
everything to sizes that train in minutes on a CPU.
"""

from dataclasses import dataclass, field, asdict, fields
import hashlib
import json

import yaml


@dataclass
class PerturbConfig:
    """Periodic noise injection on high-gradient Gaussians (teacher variant 'perb')."""

    enabled: bool = False
    t_start: int = 500
    t_end: int = 15000
    interval: int = 500
    grad_threshold: float | None = None  # falls back to densify_grad_threshold
    sigma_position: float | None = None  # world units; default 0.01 * scene extent
    sigma_rotation: float = 0.02         # on the 6D rotation representation
    sigma_scale: float = 0.05            # log-scale units
    sigma_opacity: float = 0.05          # logit units


@dataclass
class DropoutConfig:
    """Random Gaussian dropout with a linearly ramped rate (teacher variant 'drop')."""

    enabled: bool = False
    r_init: float = 0.2
    t0: int = 500
    t1: int = 15000


@dataclass
class LearningRates:
    position_init: float = 1.6e-4   # scaled by scene extent
    position_final: float = 1.6e-6  # scaled by scene extent
    sh_dc: float = 2.5e-3
    sh_rest: float = 2.5e-3 / 20.0
    opacity: float = 5e-2
    scale: float = 5e-3
    rotation: float = 1e-3


@dataclass
class LossWeights:
    lambda_dssim: float = 0.2  # blend between L1 and D-SSIM
    lambda_kd: float = 1.0     # pseudo-label term in the distillation loss


@dataclass
class DistillConfig:
    """Student-only settings: pruning budget and structure-histogram loss."""

    budget: float = 0.5                  # kept fraction of Gaussians at pruning
    simplify_iterations: tuple = (15000,)
    importance_mode: str = "topk"        # "topk" or "sample"
    hist_enabled: bool = True
    hist_interval: int = 500
    hist_weight: float = 1.0
    hist_grid_size: int = 128
    student_init: str = "scene"          # "scene" or "teacher" (pruned std warm start)


@dataclass
class TrainConfig:
    total_iters: int = 30000
    sh_degree: int = 3
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    near_plane: float = 0.01

    densify_from: int = 500
    densify_until: int = 15000
    densify_interval: int = 100
    densify_grad_threshold: float = 0.0002
    clone_scale_fraction: float = 0.01   # of scene extent; below -> clone, else split
    split_factor: float = 1.6
    opacity_prune_threshold: float = 0.005
    opacity_reset_interval: int = 3000
    max_gaussians: int = 500_000

    initial_opacity: float = 0.1
    log_interval: int = 100

    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    lr: LearningRates = field(default_factory=LearningRates)
    loss: LossWeights = field(default_factory=LossWeights)
    distill: DistillConfig = field(default_factory=DistillConfig)

    def copy(self):
        return from_dict(to_dict(self))

    def config_hash(self) -> str:
        blob = json.dumps(to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_preset() -> TrainConfig:
    """Small-scene schedule: every phase boundary scaled down by 6x."""
    cfg = TrainConfig(
        total_iters=5000,
        sh_degree=1,
        densify_from=100,
        densify_until=2500,
        densify_interval=100,
        # small images concentrate per-pixel gradients on few Gaussians, so
        # the full-scale threshold over-splits; 2e-3 with a hard cap keeps
        # the model near 15x the ground-truth count and trains in minutes
        densify_grad_threshold=0.002,
        opacity_reset_interval=3000,
        max_gaussians=800,
    )
    cfg.perturb.t_start = 100
    cfg.perturb.t_end = 2500
    cfg.perturb.interval = 100
    cfg.dropout.t0 = 100
    cfg.dropout.t1 = 2500
    cfg.distill.simplify_iterations = (2500,)
    cfg.distill.hist_interval = 100
    cfg.distill.hist_grid_size = 32
    return cfg


def to_dict(cfg) -> dict:
    d = asdict(cfg)

    def _tuples_to_lists(obj):
        if isinstance(obj, dict):
            return {k: _tuples_to_lists(v) for k, v in obj.items()}
        if isinstance(obj, tuple):
            return [_tuples_to_lists(v) for v in obj]
        if isinstance(obj, list):
            return [_tuples_to_lists(v) for v in obj]
        return obj

    return _tuples_to_lists(d)


_NESTED = {
    "perturb": PerturbConfig,
    "dropout": DropoutConfig,
    "lr": LearningRates,
    "loss": LossWeights,
    "distill": DistillConfig,
}


def _build(cls, data: dict):
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in _NESTED and isinstance(value, dict):
            kwargs[f.name] = _build(_NESTED[f.name], value)
        elif isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> TrainConfig:
    return _build(TrainConfig, data)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping, got {type(data).__name__}")
    return from_dict(data)


def save_config(cfg: TrainConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=True)
