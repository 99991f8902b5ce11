"""Adam for Gaussian-cloud parameters with per-group learning rates.

Moment arrays live alongside the cloud and are resized in lockstep whenever
densification or pruning changes the number of Gaussians. The position
learning rate follows an exponential decay over training.
"""

from dataclasses import dataclass
import math
import numpy as np

from .gaussians import GaussianCloud, normalize_quaternions
from .rasterizer import GaussianGrads
from .config import LearningRates

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

# parameter group -> (cloud attribute, grads attribute)
_GROUPS = {
    "positions": "positions",
    "rotations": "rotations",
    "log_scales": "log_scales",
    "opacity_logits": "opacity_logits",
    "sh_dc": "sh_coeffs",
    "sh_rest": "sh_coeffs",
}


def position_lr(step: int, total_iters: int, lr_init: float, lr_final: float) -> float:
    """Exponential (log-linear) decay from lr_init to lr_final over total_iters."""
    if total_iters <= 0:
        return lr_final
    t = min(max(step / total_iters, 0.0), 1.0)
    return math.exp((1.0 - t) * math.log(lr_init) + t * math.log(lr_final))


@dataclass
class AdamState:
    """First/second moment estimates per parameter group plus the step count."""

    step: int
    m: dict
    v: dict

    @classmethod
    def for_cloud(cls, cloud: GaussianCloud):
        m, v = {}, {}
        for group in _GROUPS:
            shape = _group_array(cloud, group).shape
            m[group] = np.zeros(shape)
            v[group] = np.zeros(shape)
        return cls(step=0, m=m, v=v)

    def filter_rows(self, keep):
        """Drop moment rows for removed Gaussians (boolean mask or index array)."""
        for group in _GROUPS:
            self.m[group] = self.m[group][keep]
            self.v[group] = self.v[group][keep]

    def append_rows(self, n_new: int):
        """Zero-initialized moments for Gaussians appended to the cloud."""
        for group in _GROUPS:
            pad = np.zeros((n_new,) + self.m[group].shape[1:])
            self.m[group] = np.concatenate([self.m[group], pad], axis=0)
            self.v[group] = np.concatenate([self.v[group], pad], axis=0)

    def reset_group(self, group: str):
        self.m[group][:] = 0.0
        self.v[group][:] = 0.0


def _group_array(obj, group: str):
    if group == "sh_dc":
        return obj.sh_coeffs[:, :1]
    if group == "sh_rest":
        return obj.sh_coeffs[:, 1:]
    return getattr(obj, _GROUPS[group])


def group_learning_rates(lr: LearningRates, scene_extent: float, step: int,
                         total_iters: int) -> dict:
    return {
        "positions": position_lr(step, total_iters,
                                 lr.position_init * scene_extent,
                                 lr.position_final * scene_extent),
        "rotations": lr.rotation,
        "log_scales": lr.scale,
        "opacity_logits": lr.opacity,
        "sh_dc": lr.sh_dc,
        "sh_rest": lr.sh_rest,
    }


def adam_step(state: AdamState, grads: GaussianGrads, cloud: GaussianCloud,
              lrs: dict) -> GaussianCloud:
    """One bias-corrected Adam update, applied in place to the cloud.

    Quaternions are renormalized after the step so the cloud never drifts
    away from unit rotations.
    """
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    for group in _GROUPS:
        g = _group_array(grads, group)
        m = state.m[group]
        v = state.v[group]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (lrs[group] / bc1) * m / (np.sqrt(v / bc2) + ADAM_EPS)
        _group_array(cloud, group)[...] -= update
    cloud.rotations[:] = normalize_quaternions(cloud.rotations)
    return cloud
