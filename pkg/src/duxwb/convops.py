"""2D correlation kernels used by the convolutional estimator.

The estimator cross-correlates a full-resolution filter with an equally sized
histogram under zero padding, keeping the output the same size. That path runs
through FFTs; its adjoint (gradient w.r.t. the kernel) reuses the same padded
transforms, and because histograms are fixed across a training run their
transforms can be computed once and reused every epoch. The tiny 3x3 Sobel
penalties are computed by explicit shifts.

Conventions, with o = (K-1)//2 for a K x K kernel over an N x N image:
    corr_same(img, ker)[i, j]  = sum_{a,b} ker[a, b] * img[i + a - o, j + b - o]
    corr_valid(img, ker)[i, j] = sum_{a,b} ker[a, b] * img[i + a, j + b]
All functions broadcast over leading batch dimensions.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

SOBEL_U = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_U.T.copy()


def fft_size(n: int, k: int) -> int:
    """Padded transform size for linear correlation of N x N with K x K."""
    return sfft.next_fast_len(n + k - 1, real=True)


def fft_image(img: np.ndarray, size: int) -> np.ndarray:
    """Padded forward transform, cacheable across repeated correlations."""
    return sfft.rfft2(img, (size, size))


def corr_same_fft(f_img: np.ndarray, ker: np.ndarray, n: int) -> np.ndarray:
    """corr_same on a pretransformed image; channel axes must already match."""
    k = ker.shape[-1]
    size = fft_size(n, k)
    f_ker = sfft.rfft2(ker[..., ::-1, ::-1], (size, size))
    full = sfft.irfft2(f_img * f_ker, (size, size))
    start = k - 1 - (k - 1) // 2
    return full[..., start:start + n, start:start + n]


def corr_same_multi_fft(
    f_hists: np.ndarray,
    kernels: np.ndarray,
    n: int,
    f_kernels: np.ndarray = None,
) -> np.ndarray:
    """Channel-summed corr_same: f_hists (..., J, S, Sc) against kernels (J, K, K).

    When the cached transforms are complex64 the whole path runs in single
    precision (training tolerates the ~1e-6 rounding; oracle checks use the
    double path). A precomputed kernel transform skips that work for
    fixed-parameter inference.
    """
    k = kernels.shape[-1]
    size = fft_size(n, k)
    if f_kernels is None:
        if f_hists.dtype == np.complex64:
            kernels = kernels.astype(np.float32)
        f_kernels = sfft.rfft2(kernels[..., ::-1, ::-1], (size, size))
    prod = (f_hists * f_kernels).sum(axis=-3)
    full = sfft.irfft2(prod, (size, size))
    start = k - 1 - (k - 1) // 2
    return full[..., start:start + n, start:start + n]


def fft_flipped(dout: np.ndarray, size: int) -> np.ndarray:
    """Padded transform of the axis-reversed array, for kernel-gradient paths."""
    return sfft.rfft2(dout[..., ::-1, ::-1], (size, size))


def grad_kernel_from_products(prod: np.ndarray, n: int, ksize: int) -> np.ndarray:
    """Finish a kernel-gradient: batch-sum frequency products, invert, slice."""
    size = fft_size(n, ksize)
    if prod.ndim > 2:
        prod = prod.reshape(-1, prod.shape[-2], prod.shape[-1]).sum(axis=0)
    full = sfft.irfft2(prod, (size, size))
    start = n - 1 - (ksize - 1) // 2
    return full[start:start + ksize, start:start + ksize]


def corr_same_grad_kernel_fft(f_img: np.ndarray, dout: np.ndarray, n: int, ksize: int) -> np.ndarray:
    """Adjoint of corr_same w.r.t. the kernel, from a pretransformed image.

    grad[a, b] = sum_{i,j} dout[i, j] * img[i + a - o, j + b - o]; leading
    batch dimensions are summed in the frequency domain.
    """
    return grad_kernel_from_products(f_img * fft_flipped(dout, fft_size(n, ksize)), n, ksize)


def corr_same(img: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Zero-padded same-size cross-correlation (leading dims broadcast)."""
    n = img.shape[-1]
    return corr_same_fft(fft_image(img, fft_size(n, ker.shape[-1])), ker, n)


def corr_same_multi(hists: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Sum over channel j of corr_same(hists[..., j], kernels[j])."""
    n = hists.shape[-1]
    return corr_same_multi_fft(fft_image(hists, fft_size(n, kernels.shape[-1])), kernels, n)


def corr_same_grad_kernel(img: np.ndarray, dout: np.ndarray, ksize: int) -> np.ndarray:
    """Adjoint of corr_same w.r.t. the kernel; batched inputs are summed."""
    n = img.shape[-1]
    return corr_same_grad_kernel_fft(fft_image(img, fft_size(n, ksize)), dout, n, ksize)


def corr_valid_3x3(img: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Valid-mode correlation with a 3x3 kernel via nine shifted views."""
    n0, n1 = img.shape[-2], img.shape[-1]
    out = ker[0, 0] * img[..., 0:n0 - 2, 0:n1 - 2].copy()
    for a in range(3):
        for b in range(3):
            if a == 0 and b == 0:
                continue
            if ker[a, b] != 0.0:
                out += ker[a, b] * img[..., a:a + n0 - 2, b:b + n1 - 2]
    return out


def conv_full_3x3(y: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Full-mode convolution with a 3x3 kernel: the adjoint of corr_valid_3x3."""
    m0, m1 = y.shape[-2], y.shape[-1]
    out = np.zeros(y.shape[:-2] + (m0 + 2, m1 + 2), dtype=np.float64)
    for a in range(3):
        for b in range(3):
            if ker[a, b] != 0.0:
                out[..., a:a + m0, b:b + m1] += ker[a, b] * y
    return out


def sobel_smoothness(map2d: np.ndarray) -> tuple:
    """Sum of squared Sobel responses of a map and its gradient.

    Returns (value, grad) where value = ||map * d_u||^2 + ||map * d_v||^2 in
    valid mode, so constant maps score exactly zero. Batched input returns a
    value per batch item and a matching gradient stack.
    """
    yu = corr_valid_3x3(map2d, SOBEL_U)
    yv = corr_valid_3x3(map2d, SOBEL_V)
    value = (yu * yu).sum(axis=(-2, -1)) + (yv * yv).sum(axis=(-2, -1))
    grad = 2.0 * (conv_full_3x3(yu, SOBEL_U) + conv_full_3x3(yv, SOBEL_V))
    return value, grad
