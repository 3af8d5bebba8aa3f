"""Exposure-based convolutional color constancy.

Two (or one) learned filters, stored at quarter resolution, are upsampled and
cross-correlated with unit-mass log-chroma histograms of the long/short
frames. A feature-driven MLP emits softmax weights that blend a bank of
quarter-resolution bias maps; the upsampled blend joins the correlation
responses, a softmax over all bins forms a probability map, and its (u, v)
expectation decodes to an illuminant. A variant without the feature path
learns a single full-resolution bias instead.

All learnable state lives in float64 numpy arrays; backward passes are
analytic and validated against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DualExposurePair, Illuminant, RawImage, interp_matrix
from .convops import (
    corr_same_multi_fft,
    fft_flipped,
    fft_image,
    fft_size,
    grad_kernel_from_products,
    sobel_smoothness,
)
from .errors import DegenerateOutputError, DomainError
from .histogram import DEFAULT_BINS, bin_centers, build_histogram
from .mlp import MlpParams, angular_loss_batch, count_params as mlp_count_params, init_mlp, mlp_backward, mlp_forward_trace

VARIANTS = ("both", "avg", "short", "long")
LAMBDA_BIAS = 0.01
LAMBDA_FILTER = 0.02
UPSAMPLE_FACTOR = 4

_interp_cache: dict = {}


def _upsampler(bins: int) -> np.ndarray:
    key = bins
    if key not in _interp_cache:
        _interp_cache[key] = interp_matrix(bins // UPSAMPLE_FACTOR, bins)
    return _interp_cache[key]


@dataclass
class EcccParams:
    """Learnable state of the estimator."""

    filters: np.ndarray                 # (n_filters, h/4, h/4)
    biases: Optional[np.ndarray]        # (n, h/4, h/4) when use_def
    full_bias: Optional[np.ndarray]     # (h, h) when not use_def
    mlp: Optional[MlpParams]            # feature -> n logits when use_def
    bins: int = DEFAULT_BINS
    variant: str = "both"
    use_def: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}")
        expected = 2 if self.variant == "both" else 1
        if self.filters.shape[0] != expected:
            raise DomainError(f"variant {self.variant} needs {expected} filter(s)")
        if self.use_def and (self.biases is None or self.mlp is None):
            raise DomainError("feature-driven model needs a bias bank and an MLP")
        if not self.use_def and self.full_bias is None:
            raise DomainError("model without the feature path needs a full bias")

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def n_biases(self) -> int:
        return self.biases.shape[0] if self.biases is not None else 0

    def tensors(self) -> dict:
        out = {"filters": self.filters}
        if self.use_def:
            out["biases"] = self.biases
            for name, arr in self.mlp.tensors().items():
                out[f"mlp_{name}"] = arr
        else:
            out["full_bias"] = self.full_bias
        return out

    def copy(self) -> "EcccParams":
        return EcccParams(
            filters=self.filters.copy(),
            biases=None if self.biases is None else self.biases.copy(),
            full_bias=None if self.full_bias is None else self.full_bias.copy(),
            mlp=None if self.mlp is None else self.mlp.copy(),
            bins=self.bins,
            variant=self.variant,
            use_def=self.use_def,
        )


def count_eccc_params(
    bins: int = DEFAULT_BINS,
    n: int = 20,
    variant: str = "both",
    use_def: bool = True,
    def_dim: int = 15,
) -> int:
    """Exact scalar parameter count for a configuration."""
    h4 = bins // UPSAMPLE_FACTOR
    n_filters = 2 if variant == "both" else 1
    total = n_filters * h4 * h4
    if use_def:
        total += n * h4 * h4 + mlp_count_params(def_dim, n)
    else:
        total += bins * bins
    return total


def count_params(params: EcccParams) -> int:
    return sum(int(np.prod(a.shape)) for a in params.tensors().values())


def init_eccc(
    bins: int = DEFAULT_BINS,
    n: int = 20,
    variant: str = "both",
    use_def: bool = True,
    def_dim: int = 15,
    seed: int = 0,
    biases: Optional[np.ndarray] = None,
) -> EcccParams:
    """Zero filters; bias bank zeroed unless an initialized bank is supplied."""
    h4 = bins // UPSAMPLE_FACTOR
    n_filters = 2 if variant == "both" else 1
    filters = np.zeros((n_filters, h4, h4))
    if use_def:
        bank = np.zeros((n, h4, h4)) if biases is None else np.asarray(biases, dtype=np.float64).copy()
        if bank.shape != (n, h4, h4):
            raise DomainError(f"bias bank must have shape {(n, h4, h4)}")
        mlp = init_mlp(def_dim, n, seed)
        return EcccParams(filters, bank, None, mlp, bins, variant, use_def=True)
    return EcccParams(filters, None, np.zeros((bins, bins)), None, bins, variant, use_def=False)


# ============================================================
# Histogram assembly per variant
# ============================================================

def hists_for_pair(pair: DualExposurePair, variant: str = "both", bins: int = DEFAULT_BINS) -> np.ndarray:
    """Unit-mass histogram stack (J, h, h) for the requested input variant."""
    if variant == "both":
        hs = [build_histogram(pair.long, bins), build_histogram(pair.short, bins)]
    elif variant == "avg":
        avg = RawImage((pair.long.data + pair.short.data) / 2.0)
        hs = [build_histogram(avg, bins)]
    elif variant == "short":
        hs = [build_histogram(pair.short, bins)]
    elif variant == "long":
        hs = [build_histogram(pair.long, bins)]
    else:
        raise DomainError(f"unknown variant {variant!r}")
    return np.stack([h.normalized() for h in hs])


# ============================================================
# Batched forward / backward cores
# ============================================================

def prepare_predictor(params: EcccParams) -> dict:
    """Precompute everything inference reuses across calls: the upsampled
    filters and their padded transforms."""
    h = params.bins
    r = _upsampler(h)
    f_up = np.stack([r @ f @ r.T for f in params.filters])
    f_kernels = fft_flipped(f_up, fft_size(h, h))
    return {"f_up": f_up, "f_kernels": f_kernels}


def _forward_batch(
    params: EcccParams,
    hists: Optional[np.ndarray] = None,
    defs: Optional[np.ndarray] = None,
    hists_fft: Optional[np.ndarray] = None,
    prepared: Optional[dict] = None,
) -> dict:
    """hists: (B, J, h, h) unit-mass; defs: (B, d) when the feature path is on.

    hists_fft may carry padded transforms (from convops.fft_image) computed
    once per dataset; the histograms themselves are then not needed. prepared
    (from prepare_predictor) skips the per-call filter work at inference.
    """
    h = params.bins
    if hists_fft is None:
        if hists is None:
            raise DomainError("either histograms or their transforms are required")
        if hists.ndim != 4 or hists.shape[1] != params.n_filters or hists.shape[-1] != h:
            raise DomainError("histogram stack does not match the model configuration")
        hists_fft = fft_image(hists, fft_size(h, h))
    elif hists_fft.ndim != 4 or hists_fft.shape[1] != params.n_filters:
        raise DomainError("histogram transform stack does not match the model configuration")
    r = _upsampler(h)
    batch = hists_fft.shape[0]

    if prepared is not None:
        f_up = prepared["f_up"]
        conv = corr_same_multi_fft(hists_fft, f_up, h, f_kernels=prepared["f_kernels"])
    else:
        f_up = np.stack([r @ f @ r.T for f in params.filters])
        conv = corr_same_multi_fft(hists_fft, f_up, h)

    cache = {"hists_fft": hists_fft, "f_up": f_up, "conv": conv, "batch": batch}
    if params.use_def:
        if defs is None:
            raise DomainError("this model requires a feature vector")
        defs = np.atleast_2d(np.asarray(defs, dtype=np.float64))
        if defs.shape[1] != params.mlp.d_in:
            raise DomainError(f"feature length {defs.shape[1]} != expected {params.mlp.d_in}")
        logits_w, trace = mlp_forward_trace(params.mlp, defs)
        logits_w = logits_w - logits_w.max(axis=1, keepdims=True)
        w = np.exp(logits_w)
        w /= w.sum(axis=1, keepdims=True)
        b_small = np.tensordot(w, params.biases, axes=(1, 0))
        b_up = np.einsum("Mi,bik,Nk->bMN", r, b_small, r, optimize=True)
        cache.update({"w": w, "trace": trace, "b_small": b_small, "b_up": b_up})
    else:
        b_up = np.broadcast_to(params.full_bias, conv.shape).copy()
        cache["b_up"] = b_up

    logits = conv + b_up
    flat = logits.reshape(batch, -1)
    flat = flat - flat.max(axis=1, keepdims=True)
    p = np.exp(flat)
    p /= p.sum(axis=1, keepdims=True)
    p = p.reshape(batch, h, h)

    centers = bin_centers(h)
    lu = np.einsum("bij,i->b", p, centers)
    lv = np.einsum("bij,j->b", p, centers)
    direction = np.stack([np.exp(-lu), np.ones(batch), np.exp(-lv)], axis=1)
    cache.update({"p": p, "lu": lu, "lv": lv, "direction": direction, "centers": centers})
    return cache


def _backward_batch(params: EcccParams, cache: dict, gts: np.ndarray) -> tuple:
    """Mean loss over the batch and gradients for every parameter group.

    loss per sample = angular error + S_B (bias smoothness) + S_F (filter
    smoothness); the filter term is shared across samples.
    """
    h = params.bins
    r = _upsampler(h)
    batch = cache["batch"]
    gts = np.atleast_2d(np.asarray(gts, dtype=np.float64))

    ang, dd, valid = angular_loss_batch(cache["direction"], gts)
    n_valid = int(np.count_nonzero(valid))
    if n_valid == 0:
        raise DegenerateOutputError("all decoded outputs in the batch are degenerate")
    scale = 1.0 / n_valid
    weight = valid.astype(np.float64) * scale

    s_b, grad_b_up_pen = sobel_smoothness(cache["b_up"])
    s_f_each, grad_f_pen = sobel_smoothness(cache["f_up"])
    s_f = float(s_f_each.sum())

    losses = ang + LAMBDA_BIAS * s_b + LAMBDA_FILTER * s_f
    mean_loss = float(np.nansum(losses * weight))

    dd = dd * scale  # invalid rows are already zero
    dlu = dd[:, 0] * (-np.exp(-cache["lu"]))
    dlv = dd[:, 2] * (-np.exp(-cache["lv"]))
    centers = cache["centers"]
    p = cache["p"]
    dp = dlu[:, None, None] * centers[None, :, None] + dlv[:, None, None] * centers[None, None, :]
    inner = (p * dp).sum(axis=(-2, -1), keepdims=True)
    dlogits = p * (dp - inner)

    grads: dict = {}
    # filters: correlation adjoint plus the shared smoothness penalty; the
    # flipped-dlogits transform is shared across filters
    if cache["hists_fft"].dtype == np.complex64:
        dlogits_t = dlogits.astype(np.float32)
    else:
        dlogits_t = dlogits
    f_dlogits = fft_flipped(dlogits_t, fft_size(h, h))
    dfilters = np.empty_like(params.filters)
    for j in range(params.n_filters):
        df_up = grad_kernel_from_products(cache["hists_fft"][:, j] * f_dlogits, h, h)
        df_up += LAMBDA_FILTER * grad_f_pen[j]
        dfilters[j] = r.T @ df_up @ r
    grads["filters"] = dfilters

    db_up = dlogits + (LAMBDA_BIAS * weight)[:, None, None] * grad_b_up_pen
    if params.use_def:
        db_small = np.einsum("Mi,bMN,Nk->bik", r, db_up, r, optimize=True)
        grads["biases"] = np.einsum("bi,bjk->ijk", cache["w"], db_small)
        dw = np.einsum("njk,bjk->bn", params.biases, db_small)
        w = cache["w"]
        dlogits_w = w * (dw - (w * dw).sum(axis=1, keepdims=True))
        mlp_grads, _ = mlp_backward(params.mlp, cache["trace"], dlogits_w)
        for name, arr in mlp_grads.items():
            grads[f"mlp_{name}"] = arr
    else:
        grads["full_bias"] = db_up.sum(axis=0)

    parts = {
        "angular_mean": float(np.nansum(ang * weight)),
        "smooth_bias_mean": float(np.nansum(LAMBDA_BIAS * s_b * weight)),
        "smooth_filter": LAMBDA_FILTER * s_f,
        "n_valid": n_valid,
    }
    return mean_loss, grads, parts


# ============================================================
# Public single-pair API
# ============================================================

def eccc_forward_from_hists(params: EcccParams, hists: np.ndarray, feature=None, prepared=None):
    """Estimate from a prebuilt (J, h, h) unit-mass histogram stack."""
    feat = None
    if params.use_def:
        feat = _feature_values(feature)[np.newaxis, :]
    cache = _forward_batch(
        params, np.asarray(hists, dtype=np.float64)[np.newaxis], feat, prepared=prepared
    )
    direction = cache["direction"][0]
    ill = Illuminant.from_array(direction / np.linalg.norm(direction))
    return ill, cache["p"][0]


def eccc_forward(params: EcccParams, pair: DualExposurePair, feature=None):
    """Estimate the illuminant of a pair; returns (illuminant, probability map)."""
    hists = hists_for_pair(pair, params.variant, params.bins)
    return eccc_forward_from_hists(params, hists, feature)


def eccc_backward_from_hists(params: EcccParams, hists: np.ndarray, feature, gt):
    feat = None
    if params.use_def:
        feat = _feature_values(feature)[np.newaxis, :]
    cache = _forward_batch(params, np.asarray(hists, dtype=np.float64)[np.newaxis], feat)
    gt_vec = gt.as_array() if isinstance(gt, Illuminant) else np.asarray(gt, dtype=np.float64)
    loss, grads, parts = _backward_batch(params, cache, gt_vec[np.newaxis])
    return loss, grads, parts


def eccc_backward(params: EcccParams, pair: DualExposurePair, feature, gt):
    """Loss (degrees + smoothness) and analytic gradients for one pair."""
    hists = hists_for_pair(pair, params.variant, params.bins)
    return eccc_backward_from_hists(params, hists, feature, gt)


def _feature_values(feature) -> np.ndarray:
    if feature is None:
        raise DomainError("this model requires a feature vector")
    values = getattr(feature, "values", feature)
    return np.asarray(values, dtype=np.float64).reshape(-1)
