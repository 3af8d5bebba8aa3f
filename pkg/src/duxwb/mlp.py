"""Four-layer fully connected network with LeakyReLU activations.

One implementation serves both estimator heads: the exposure-based MLP (3
output neurons, predicts an illuminant from the feature vector) and the ECCC
weighting network (n output neurons, emits bias-interpolation logits). The
backward pass is analytic; no autograd framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Illuminant
from .errors import DegenerateOutputError, DomainError

HIDDEN_WIDTH = 9
DEFAULT_LEAKY_SLOPE = 0.01
# Gradient of acos is clamped once |cos| exceeds this, avoiding the singularity
# at zero angular error.
COS_CLAMP = 1.0 - 1e-7
_DEG = 180.0 / np.pi

# Neutral gray direction used to seed the output layer so an untrained model
# predicts a sensible constant instead of an arbitrary direction.
NEUTRAL = np.ones(3) / np.sqrt(3.0)


@dataclass
class MlpParams:
    """Weights and biases of the [d_in -> 9 -> 9 -> 9 -> d_out] network."""

    weights: list  # four arrays, (out, in)
    biases: list   # four arrays, (out,)
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]

    def tensors(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            leaky_slope=self.leaky_slope,
        )

    @classmethod
    def from_tensors(cls, tensors: dict, leaky_slope: float = DEFAULT_LEAKY_SLOPE) -> "MlpParams":
        weights = [np.asarray(tensors[f"w{i}"], dtype=np.float64) for i in range(1, 5)]
        biases = [np.asarray(tensors[f"b{i}"], dtype=np.float64) for i in range(1, 5)]
        return cls(weights=weights, biases=biases, leaky_slope=leaky_slope)


def count_params(d_in: int, d_out: int = 3, hidden: int = HIDDEN_WIDTH) -> int:
    """Exact scalar parameter count of the four-layer network."""
    return (
        d_in * hidden + hidden
        + hidden * hidden + hidden
        + hidden * hidden + hidden
        + hidden * d_out + d_out
    )


def init_mlp(
    d_in: int,
    d_out: int,
    seed: int,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
    out_bias: Optional[np.ndarray] = None,
    out_scale: float = 1.0,
) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    The output layer can be seeded with a bias direction and a damped weight
    scale so a freshly initialized network starts at a meaningful constant
    prediction.
    """
    rng = np.random.default_rng(seed)
    dims = [d_in, HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, d_out]
    weights, biases = [], []
    for i in range(4):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == 3:
            w *= out_scale
        weights.append(w)
        b = np.zeros(fan_out)
        if i == 3 and out_bias is not None:
            b = np.asarray(out_bias, dtype=np.float64).copy()
        biases.append(b)
    return MlpParams(weights=weights, biases=biases, leaky_slope=leaky_slope)


# ============================================================
# Forward / backward
# ============================================================

def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0.0, z, slope * z)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Raw (pre-normalization) outputs; accepts (d_in,) or (batch, d_in)."""
    y, _ = mlp_forward_trace(params, x)
    return y


def mlp_forward_trace(params: MlpParams, x: np.ndarray):
    """Forward pass keeping pre-activations for the backward pass."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[np.newaxis, :] if single else x
    if a.shape[1] != params.d_in:
        raise DomainError(f"input width {a.shape[1]} != expected {params.d_in}")
    trace = {"a0": a, "z": [], "a": []}
    for i in range(3):
        z = a @ params.weights[i].T + params.biases[i]
        a = _leaky(z, params.leaky_slope)
        trace["z"].append(z)
        trace["a"].append(a)
    y = a @ params.weights[3].T + params.biases[3]
    trace["single"] = single
    return (y[0] if single else y), trace


def mlp_backward(params: MlpParams, trace: dict, dout: np.ndarray):
    """Gradients of a scalar loss given d(loss)/d(raw outputs).

    Returns (grads dict keyed like tensors(), d(loss)/d(input)).
    """
    dout = np.asarray(dout, dtype=np.float64)
    if trace["single"]:
        dout = dout[np.newaxis, :]
    grads = {}
    grads["w4"] = dout.T @ trace["a"][2]
    grads["b4"] = dout.sum(axis=0)
    da = dout @ params.weights[3]
    for i in (2, 1, 0):
        z = trace["z"][i]
        dz = da * np.where(z >= 0.0, 1.0, params.leaky_slope)
        a_prev = trace["a"][i - 1] if i > 0 else trace["a0"]
        grads[f"w{i + 1}"] = dz.T @ a_prev
        grads[f"b{i + 1}"] = dz.sum(axis=0)
        da = dz @ params.weights[i]
    dx = da[0] if trace["single"] else da
    return grads, dx


# ============================================================
# Angular loss
# ============================================================

def angular_loss_batch(raw: np.ndarray, gts: np.ndarray):
    """Per-sample angular error (degrees) and its gradient w.r.t. raw outputs.

    Rows with a degenerate raw output (norm < 1e-12) are flagged invalid and
    excluded: their loss is reported as nan and their gradient as zero.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    gts = np.atleast_2d(np.asarray(gts, dtype=np.float64))
    gt_norm = np.linalg.norm(gts, axis=1)
    if np.any(gt_norm < 1e-12):
        raise DomainError("ground-truth illuminant must be nonzero")
    ghat = gts / gt_norm[:, np.newaxis]
    norms = np.linalg.norm(raw, axis=1)
    valid = norms >= 1e-12
    safe = np.where(valid, norms, 1.0)
    cos = np.einsum("ij,ij->i", raw, ghat) / safe
    cos_c = np.clip(cos, -1.0, 1.0)
    loss = np.degrees(np.arccos(cos_c))
    loss[~valid] = np.nan
    # d(deg)/d(raw) = -(180/pi) / sqrt(1 - c^2) * (ghat - c * rhat) / ||raw||
    cg = np.clip(cos, -COS_CLAMP, COS_CLAMP)
    factor = -_DEG / np.sqrt(1.0 - cg * cg)
    rhat = raw / safe[:, np.newaxis]
    draw = factor[:, np.newaxis] * (ghat - cos_c[:, np.newaxis] * rhat) / safe[:, np.newaxis]
    draw[~valid] = 0.0
    return loss, draw, valid


def angular_grad_vec(direction: np.ndarray, gt: np.ndarray):
    """Angular error of one direction vector and its gradient."""
    loss, draw, valid = angular_loss_batch(direction, gt)
    if not valid[0]:
        raise DegenerateOutputError("direction vector has vanishing norm")
    return float(loss[0]), draw[0]


# ============================================================
# EMLP: the illuminant-estimating specialization
# ============================================================

def emlp_init(
    d_in: int = 15,
    seed: int = 0,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
    neutral_start: bool = True,
) -> MlpParams:
    """Initialize an estimator head.

    With neutral_start the output layer is damped and biased toward neutral
    gray, so the untrained network behaves like a constant gray predictor.
    """
    out_bias = NEUTRAL if neutral_start else None
    out_scale = 0.05 if neutral_start else 1.0
    return init_mlp(d_in, 3, seed, leaky_slope, out_bias=out_bias, out_scale=out_scale)


def emlp_forward_raw(params: MlpParams, feature: np.ndarray) -> np.ndarray:
    """Pre-normalization 3-vector output, exposed for gradient checks."""
    return mlp_forward(params, np.asarray(feature, dtype=np.float64).reshape(-1))


def emlp_forward(params: MlpParams, feature: np.ndarray) -> Illuminant:
    """Unit-norm illuminant estimate for one feature vector.

    Negative raw components are clamped to zero before normalization: an
    illuminant is a physical light color. Training operates on the raw
    output, where the angular loss needs no clamp.
    """
    raw = emlp_forward_raw(params, feature)
    if np.linalg.norm(raw) < 1e-12:
        raise DegenerateOutputError("EMLP produced a near-zero output vector")
    v = np.maximum(raw, 0.0)
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise DegenerateOutputError("EMLP output has no positive component")
    return Illuminant.from_array(v / norm)


def emlp_backward(params: MlpParams, feature: np.ndarray, gt) -> tuple:
    """Loss (degrees) and analytic gradients for one sample."""
    gt_vec = gt.as_array() if isinstance(gt, Illuminant) else np.asarray(gt, dtype=np.float64)
    x = np.asarray(feature, dtype=np.float64).reshape(-1)
    raw, trace = mlp_forward_trace(params, x)
    loss, draw, valid = angular_loss_batch(raw, gt_vec)
    if not valid[0]:
        raise DegenerateOutputError("EMLP produced a near-zero output vector")
    grads, _ = mlp_backward(params, trace, draw[0])
    return float(loss[0]), grads
