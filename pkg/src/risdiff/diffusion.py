"""Noise schedule, forward noising, and guided reverse sampling.

The forward process progressively corrupts a clean vector x0 over T steps:
    x_t = sqrt(1 - beta_t) * x_{t-1} + sqrt(beta_t) * eps_t
with the closed-form marginal
    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,   abar_t = prod alpha_i.

The reverse process walks t = T..1 using a noise predictor, blending its
conditional and unconditional outputs with a guidance weight, and adds
posterior noise scaled by sqrt(var(t)) (see reverse_step for the
compatibility flag covering the plain-var variant).

Everything here is denoiser-agnostic: sample() takes a plain callable.
All array ops broadcast, so a state may hold one chain (dim,) or a batch
of chains (batch, dim).
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "DiffusionState",
    "GuidanceConfig",
    "build_linear_schedule",
    "forward_step",
    "forward_jump",
    "posterior_variance",
    "guided_noise",
    "reverse_step",
    "sample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels, 1-indexed: beta[t-1] is the step-t variance."""

    t_max: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if self.beta.shape != (self.t_max,):
            raise ValueError("beta length must equal t_max")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        if np.any(np.diff(self.beta) < 0):
            raise ValueError("beta must be non-decreasing")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")


@dataclass(frozen=True)
class DiffusionState:
    x: np.ndarray
    step: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError(f"non-finite state at step {self.step}")
        if self.step < 0:
            raise ValueError("step must be >= 0")


@dataclass(frozen=True)
class GuidanceConfig:
    lambda2: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ValueError(f"lambda2 must be in [0, 1], got {self.lambda2}")


def build_linear_schedule(t_max: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced beta over t_max steps, endpoints hit exactly."""
    if t_max < 2:
        raise ValueError(f"t_max must be >= 2, got {t_max}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, t_max)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(t_max=t_max, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_step(schedule: NoiseSchedule, t):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.t_max):
        raise ValueError(f"step {t} outside [1, {schedule.t_max}]")


def _per_step(values: np.ndarray, t, target_ndim: int):
    """values[t-1], shaped to broadcast against a target of target_ndim."""
    t = np.asarray(t)
    picked = values[t.astype(np.int64) - 1] if t.ndim else values[int(t) - 1]
    if t.ndim:
        picked = picked.reshape(t.shape + (1,) * (target_ndim - t.ndim))
    return picked


def forward_step(x_prev, schedule: NoiseSchedule, t, rng, eps=None):
    """One noising step; ``eps`` overrides the drawn noise (test hook).

    ``t`` may be a scalar or one per batch row.
    """
    _check_step(schedule, t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(x_prev.shape)
    b = _per_step(schedule.beta, t, x_prev.ndim)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * eps


def forward_jump(x0, schedule: NoiseSchedule, t, rng, eps=None):
    """Jump straight to step t via the closed-form marginal.

    Returns (x_t, eps); the drawn noise is the regression target for the
    denoiser, so it is always handed back. ``t`` may be a scalar or one per
    batch row.
    """
    _check_step(schedule, t)
    x0 = np.asarray(x0, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    ab = _per_step(schedule.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, eps


def posterior_variance(schedule: NoiseSchedule, t: int) -> float:
    """(1 - abar_{t-1}) / (1 - abar_t) * beta_t, with abar_0 = 1 (so 0 at t=1)."""
    _check_step(schedule, t)
    ab_prev = 1.0 if t == 1 else schedule.alpha_bar[t - 2]
    return float((1.0 - ab_prev) / (1.0 - schedule.alpha_bar[t - 1]) * schedule.beta[t - 1])


def guided_noise(eps_cond, eps_uncond, cfg: GuidanceConfig):
    """Convex blend: lambda2 * conditional + (1 - lambda2) * unconditional."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(
            f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}"
        )
    return cfg.lambda2 * eps_cond + (1.0 - cfg.lambda2) * eps_uncond


def reverse_step(
    state: DiffusionState,
    eps_tilde,
    schedule: NoiseSchedule,
    rng,
    *,
    literal_variance_term: bool = False,
    z=None,
):
    """One denoising update from step t to t-1.

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_tilde) / sqrt(alpha_t)
              + scale * z
    where z ~ N(0, I) except at t = 1, where z is forced to zero so the
    returned estimate carries no spurious noise. ``scale`` is
    sqrt(var(t)) by default; ``literal_variance_term`` switches to the
    plain var(t) multiplier for comparison runs.
    """
    t = state.step
    _check_step(schedule, t)
    eps_tilde = np.asarray(eps_tilde, dtype=np.float64)
    if eps_tilde.shape != state.x.shape:
        raise ValueError(f"eps shape {eps_tilde.shape} != state shape {state.x.shape}")
    b = schedule.beta[t - 1]
    ab = schedule.alpha_bar[t - 1]
    mean = (state.x - b / np.sqrt(1.0 - ab) * eps_tilde) / np.sqrt(schedule.alpha[t - 1])
    if t == 1:
        return DiffusionState(x=mean, step=0)
    if z is None:
        z = rng.standard_normal(state.x.shape)
    var = posterior_variance(schedule, t)
    scale = var if literal_variance_term else np.sqrt(var)
    return DiffusionState(x=mean + scale * z, step=t - 1)


def sample(
    predict,
    condition,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    rng,
    shape,
    *,
    literal_variance_term: bool = False,
):
    """Full reverse chain: x_T ~ N(0, I) down to the step-0 estimate.

    ``predict(x, t, condition_or_None)`` must return a noise prediction of
    x's shape; None asks for the unconditional branch. When lambda2 pins
    the blend to one branch, the other is never evaluated.
    """
    state = DiffusionState(x=rng.standard_normal(shape), step=schedule.t_max)
    for t in range(schedule.t_max, 0, -1):
        if cfg.lambda2 == 0.0:
            eps_tilde = np.asarray(predict(state.x, t, None), dtype=np.float64)
        elif cfg.lambda2 == 1.0:
            eps_tilde = np.asarray(predict(state.x, t, condition), dtype=np.float64)
        else:
            eps_cond = predict(state.x, t, condition)
            eps_uncond = predict(state.x, t, None)
            eps_tilde = guided_noise(eps_cond, eps_uncond, cfg)
        state = reverse_step(
            state, eps_tilde, schedule, rng,
            literal_variance_term=literal_variance_term,
        )
    return state.x
