"""Conditional noise-prediction network and its optimizer.

The network is a residual fully-connected stack in double precision:

    features = [x_t | step_embedding(t) | condition_embedding]
    h = silu(W0 @ features + b0)
    h = h + silu(Wi @ h + bi)          (per extra hidden layer)
    eps_hat = Wout @ h + bout

The condition embedding is one linear+silu projection of the concatenated
(pilot, partial channel, mask indicator). An absent condition contributes
an exact zero vector, which is also what the embedding produces at
initialization (projection and output layers start at zero), so the
conditional and unconditional branches coincide until training separates
them.

All inputs accept a leading batch axis.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, concat
from .errors import GeometryError
from .rng import derive

__all__ = [
    "ConditionVector",
    "DenoiserParams",
    "AdamState",
    "step_embedding",
    "init_params",
    "embed_condition",
    "predict_noise",
    "noise_loss",
    "gradients",
    "zero_grad",
    "adam_update",
]

DEFAULT_ARCH = {
    "hidden_layers": 3,
    "width": 256,
    "activation": "silu",
    "step_dim": 64,
    "cond_dim": 128,
}


@dataclass(frozen=True)
class ConditionVector:
    """Auxiliary inputs: pilot (2N), zero-filled partial channel (2*N*M2),
    mask indicator (M2). present=False marks the unconditional branch; a
    float array (one 0/1 entry per batch row) drops rows individually,
    which is how condition dropout works on a batch."""

    pilot: np.ndarray
    partial_channel: np.ndarray
    indicator: np.ndarray
    present: bool | np.ndarray = True

    def stacked(self) -> np.ndarray:
        return np.concatenate(
            [np.atleast_1d(self.pilot), np.atleast_1d(self.partial_channel),
             np.atleast_1d(self.indicator)], axis=-1)


def step_embedding(t, dimension: int) -> np.ndarray:
    """Sinusoidal step encoding: pairs (sin(t*f_i), cos(t*f_i)) with
    f_i = 10000^(-2i/dimension). Deterministic, entries in [-1, 1]."""
    if dimension % 2 != 0:
        raise ValueError(f"embedding dimension must be even, got {dimension}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("step must be >= 0")
    i = np.arange(dimension // 2, dtype=np.float64)
    freq = 10000.0 ** (-2.0 * i / dimension)
    angles = t[..., None] * freq
    out = np.empty(t.shape + (dimension,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@dataclass
class DenoiserParams:
    """Named weight tensors plus the geometry/architecture they serve."""

    arch: dict
    x_dim: int
    cond_in_dim: int
    tensors: dict = field(default_factory=dict)  # name -> Tensor

    @property
    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def items(self):
        return self.tensors.items()


def _fan_in_init(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_params(x_dim: int, cond_in_dim: int, seed: int, arch: dict | None = None) -> DenoiserParams:
    """Fan-in uniform init; condition projection and output layer start at
    exactly zero so the fresh network predicts 0 and ignores conditions."""
    arch = dict(DEFAULT_ARCH if arch is None else arch)
    if arch["activation"] != "silu":
        raise ValueError(f"unsupported activation {arch['activation']!r}")
    width = arch["width"]
    rng = derive(seed, "init")
    tensors = {}
    tensors["cond.w"] = Tensor(np.zeros((cond_in_dim, arch["cond_dim"])), requires_grad=True)
    tensors["cond.b"] = Tensor(np.zeros(arch["cond_dim"]), requires_grad=True)
    in_dim = x_dim + arch["step_dim"] + arch["cond_dim"]
    tensors["layer0.w"] = Tensor(_fan_in_init(rng, in_dim, (in_dim, width)), requires_grad=True)
    tensors["layer0.b"] = Tensor(_fan_in_init(rng, in_dim, width), requires_grad=True)
    for i in range(1, arch["hidden_layers"]):
        tensors[f"layer{i}.w"] = Tensor(_fan_in_init(rng, width, (width, width)), requires_grad=True)
        tensors[f"layer{i}.b"] = Tensor(_fan_in_init(rng, width, width), requires_grad=True)
    tensors["out.w"] = Tensor(np.zeros((width, x_dim)), requires_grad=True)
    tensors["out.b"] = Tensor(np.zeros(x_dim), requires_grad=True)
    return DenoiserParams(arch=arch, x_dim=x_dim, cond_in_dim=cond_in_dim, tensors=tensors)


def _check_finite(t: Tensor, layer: str):
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"numerical overflow in layer {layer}")


def embed_condition(cond: ConditionVector | None, params: DenoiserParams):
    """Linear+silu projection of the stacked condition; zero vector when the
    condition is absent. Returns a Tensor (graph-tracked through params)."""
    cond_dim = params.arch["cond_dim"]
    row_mask = None
    if cond is not None and isinstance(cond.present, np.ndarray):
        row_mask = np.asarray(cond.present, dtype=np.float64)
    elif cond is None or not cond.present:
        shape = (cond_dim,)
        if cond is not None and np.asarray(cond.pilot).ndim > 1:
            shape = (np.asarray(cond.pilot).shape[0], cond_dim)
        return Tensor(np.zeros(shape))
    stacked = cond.stacked()
    if stacked.shape[-1] != params.cond_in_dim:
        raise GeometryError(
            f"condition length {stacked.shape[-1]} != expected {params.cond_in_dim}"
        )
    z = Tensor(stacked) @ params.tensors["cond.w"] + params.tensors["cond.b"]
    out = z.silu()
    if row_mask is not None:
        # dropped rows contribute an exact zero, same as present=False
        out = out * Tensor(row_mask[:, None])
    _check_finite(out, "cond")
    return out


def predict_noise(params: DenoiserParams, x_t, t, cond: ConditionVector | None) -> Tensor:
    """Forward pass; returns a Tensor whose .data is the noise prediction."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != params.x_dim:
        raise GeometryError(f"input length {x_t.shape[-1]} != expected {params.x_dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    semb = step_embedding(t_arr, params.arch["step_dim"])
    if x_t.ndim == 2 and semb.ndim == 1:
        semb = np.broadcast_to(semb, (x_t.shape[0], semb.shape[0]))
    cemb = embed_condition(cond, params)
    if x_t.ndim == 2 and cemb.data.ndim == 1:
        cemb = cemb * Tensor(np.ones((x_t.shape[0], 1)))
    h = concat([Tensor(x_t), Tensor(semb), cemb], axis=-1)
    h = (h @ params.tensors["layer0.w"] + params.tensors["layer0.b"]).silu()
    _check_finite(h, "layer0")
    for i in range(1, params.arch["hidden_layers"]):
        inner = (h @ params.tensors[f"layer{i}.w"] + params.tensors[f"layer{i}.b"]).silu()
        h = h + inner
        _check_finite(h, f"layer{i}")
    out = h @ params.tensors["out.w"] + params.tensors["out.b"]
    _check_finite(out, "out")
    return out


def noise_loss(eps_true, eps_pred: Tensor) -> Tensor:
    """Squared L2 norm of (prediction - noise), averaged over the batch axis.

    Per sample this is a full squared vector norm, so an untrained network
    that predicts zero scores about the vector length (unit-variance noise).
    """
    diff = eps_pred - Tensor(np.asarray(eps_true, dtype=np.float64))
    total = diff.square().sum()
    if diff.data.ndim == 2:
        total = total * (1.0 / diff.data.shape[0])
    return total


def zero_grad(params: DenoiserParams):
    for t in params.tensors.values():
        t.grad = None


def gradients(params: DenoiserParams, loss: Tensor) -> dict:
    """Run the reverse pass; returns name -> gradient array (zeros where the
    loss never touched a parameter)."""
    backward(loss)
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.tensors.items()
    }


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: DenoiserParams, grads: dict, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam; mutates params.tensors[...].data and state."""
    state.step += 1
    t = state.step
    for name, tensor in params.tensors.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{tensor.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
