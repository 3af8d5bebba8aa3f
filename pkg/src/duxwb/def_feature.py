"""The dual-exposure feature: a compact vector describing how the short and
long frames of a pair disagree chromatically.

The default feature has 15 entries: the flattened 3x3 chromaticity mapping
matrix between the two frames (9) plus the unique entries of the covariance of
the per-pixel short/long ratio image (6). Ablation variants swap the mapping
family (affine 3x4, homography on rg-chroma) or the color representation, and
may drop the covariance block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    DualExposurePair,
    PinvResult,
    RawImage,
    chromaticity_matrix,
    covariance3,
    pinv_map,
)
from .errors import DomainError

COLOR_REPRS = ("rgb", "rg_chroma", "rgb_chroma")
MAPPINGS = ("linear3x3", "affine3x4", "homography3x3")

# Upper-triangle order of the symmetric covariance: (0,0),(0,1),(0,2),(1,1),(1,2),(2,2)
_TRIU_ROWS = (0, 0, 0, 1, 1, 2)
_TRIU_COLS = (0, 1, 2, 1, 2, 2)


@dataclass(frozen=True)
class DefConfig:
    """Knobs for feature extraction; defaults reproduce the 15-element feature.

    eps_ratio bounds the ratio image where the long frame is at the noise
    floor: on [0, 1] data quantized to 10 bits with ~2e-3 read noise, 1e-2
    keeps zero-signal pixels from dominating the covariance block.
    """

    color_repr: str = "rgb_chroma"
    mapping: str = "linear3x3"
    eps_ratio: float = 1e-2
    eps_chroma: float = 1e-6
    include_covariance: bool = True
    # short_to_long fits C mapping the short frame onto the long frame.
    map_direction: str = "short_to_long"
    # Exclude pixels saturated in either frame from the C_c / C_v fit. Off by
    # default: clipping asymmetry is the very signal the feature encodes.
    mask_saturated: bool = False
    saturation_level: float = 1.0 - 1e-6
    # Append centroid difference and scale to the affine feature (16 entries).
    tm_extended: bool = False

    def __post_init__(self):
        if self.color_repr not in COLOR_REPRS:
            raise DomainError(f"unknown color_repr {self.color_repr!r}")
        if self.mapping not in MAPPINGS:
            raise DomainError(f"unknown mapping {self.mapping!r}")
        if self.eps_ratio < 0.0 or self.eps_chroma < 0.0:
            raise DomainError("eps values must be nonnegative")
        if self.map_direction not in ("short_to_long", "long_to_short"):
            raise DomainError(f"unknown map_direction {self.map_direction!r}")

    @property
    def feature_length(self) -> int:
        if self.mapping == "affine3x4":
            n = 16 if self.tm_extended else 12
        else:
            n = 9
        return n + (6 if self.include_covariance else 0)


@dataclass
class DefVector:
    """Extracted feature plus a degeneracy diagnostic from the mapping fit."""

    values: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise DomainError("feature vector contains non-finite values")

    def __len__(self) -> int:
        return self.values.shape[0]

    def mapping_matrix(self) -> np.ndarray:
        """Row-major 3x3 mapping block of the default 15-element layout."""
        return self.values[:9].reshape(3, 3)

    def covariance_matrix(self) -> np.ndarray:
        """Reconstruct the symmetric covariance from the trailing 6 entries."""
        if len(self) < 6:
            raise DomainError("feature has no covariance block")
        tri = self.values[-6:]
        cov = np.zeros((3, 3), dtype=np.float64)
        cov[_TRIU_ROWS, _TRIU_COLS] = tri
        cov[_TRIU_COLS, _TRIU_ROWS] = tri
        return cov


class AffineResult(NamedTuple):
    matrix: np.ndarray      # 3x4: [alpha * R | T]
    rotation: np.ndarray    # 3x3 orthogonal factor
    alpha: float
    translation: np.ndarray
    degenerate: bool


class HomographyResult(NamedTuple):
    matrix: np.ndarray      # 3x3, normalized so H[2,2] = 1 when possible
    degenerate: bool


# ============================================================
# Building blocks
# ============================================================

def ratio_image(pair: DualExposurePair, eps: float) -> np.ndarray:
    """Elementwise short / (long + eps), as a 3 x k matrix."""
    if eps < 0.0:
        raise DomainError("eps must be nonnegative")
    long_m = pair.long.as_matrix()
    short_m = pair.short.as_matrix()
    denom = long_m + eps
    if eps == 0.0:
        # 0/0 pixels are defined as 0 so the ratio stays finite
        safe = np.where(denom > 0.0, denom, 1.0)
        out = np.where(denom > 0.0, short_m / safe, 0.0)
    else:
        out = short_m / denom
    return out


def _represent(img: RawImage, cfg: DefConfig) -> np.ndarray:
    if cfg.color_repr == "rgb":
        return img.as_matrix()
    ch = chromaticity_matrix(img.as_matrix(), cfg.eps_chroma)
    if cfg.color_repr == "rgb_chroma":
        return ch
    # rg_chroma: keep a 3-row layout (r, g, 1-r-g) so one fitting path serves
    # every representation; the third row is redundant when eps_chroma = 0.
    return np.vstack([ch[0], ch[1], 1.0 - ch[0] - ch[1]])


def _rg1_rows(img: RawImage, cfg: DefConfig) -> np.ndarray:
    ch = chromaticity_matrix(img.as_matrix(), cfg.eps_chroma)
    return np.vstack([ch[0], ch[1], np.ones_like(ch[0])])


def affine_map(source_chroma: np.ndarray, target_chroma: np.ndarray) -> AffineResult:
    """Procrustes-style similarity fit: scale, rotation, and centroid translation.

    Maps source points onto target points as x -> alpha * R @ x + T. The
    constant last row of the full 4x4 form is dropped, leaving a 3x4 matrix.
    """
    src = np.asarray(source_chroma, dtype=np.float64)
    tgt = np.asarray(target_chroma, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[0] != 3:
        raise DomainError("affine_map expects matching 3 x k matrices")
    if src.shape[1] < 4:
        raise DomainError("affine_map requires k >= 4 points")
    cs = src.mean(axis=1)
    ct = tgt.mean(axis=1)
    src_c = src - cs[:, np.newaxis]
    tgt_c = tgt - ct[:, np.newaxis]
    norm_s = np.linalg.norm(src_c)
    norm_t = np.linalg.norm(tgt_c)
    if norm_s < 1e-12 or norm_t < 1e-12:
        rot = np.eye(3)
        matrix = np.hstack([rot, np.zeros((3, 1))])
        return AffineResult(matrix, rot, 1.0, np.zeros(3), True)
    alpha = float(norm_t / norm_s)
    u, _, vt = np.linalg.svd(tgt_c @ src_c.T)
    rot = u @ vt
    translation = ct - alpha * (rot @ cs)
    matrix = np.hstack([alpha * rot, translation[:, np.newaxis]])
    return AffineResult(matrix, rot, alpha, translation, False)


def homography_map(source_rg1: np.ndarray, target_rg1: np.ndarray) -> HomographyResult:
    """DLT homography between (r, g, 1) chroma rows, normalized so H[2,2] = 1."""
    src = np.asarray(source_rg1, dtype=np.float64)
    tgt = np.asarray(target_rg1, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[0] != 3:
        raise DomainError("homography_map expects matching 3 x k matrices")
    k = src.shape[1]
    if k < 4:
        raise DomainError("homography_map requires k >= 4 points")
    x, y = src[0], src[1]
    xp, yp = tgt[0], tgt[1]
    ones = np.ones(k)
    zeros = np.zeros(k)
    rows_a = np.stack([x, y, ones, zeros, zeros, zeros, -xp * x, -xp * y, -xp], axis=1)
    rows_b = np.stack([zeros, zeros, zeros, x, y, ones, -yp * x, -yp * y, -yp], axis=1)
    a = np.concatenate([rows_a, rows_b], axis=0)
    # Smallest eigenvector of A^T A is the algebraic least-squares solution.
    ata = a.T @ a
    w, v = np.linalg.eigh(ata)
    h = v[:, 0]
    degenerate = False
    if w.size > 1:
        scale = max(w[-1], 1e-300)
        if w[1] / scale < 1e-12:
            degenerate = True  # null space wider than 1: solution not unique
    hm = h.reshape(3, 3)
    if abs(hm[2, 2]) > 1e-12 * np.max(np.abs(hm)):
        hm = hm / hm[2, 2]
    else:
        degenerate = True
        hm = hm / np.max(np.abs(hm))
    return HomographyResult(hm, degenerate)


def apply_homography(h: np.ndarray, pts_rg1: np.ndarray) -> np.ndarray:
    """Map (r, g, 1) rows through a homography with perspective division."""
    out = np.asarray(h, dtype=np.float64) @ np.asarray(pts_rg1, dtype=np.float64)
    return out / out[2:3, :]


# ============================================================
# Feature assembly
# ============================================================

def compute_def(pair: DualExposurePair, cfg: DefConfig | None = None) -> DefVector:
    """Extract the dual-exposure feature from an aligned pair."""
    cfg = cfg or DefConfig()
    k = pair.long.pixel_count
    if k < 16:
        raise DomainError("compute_def requires at least 16 pixels")

    if cfg.map_direction == "short_to_long":
        src_img, tgt_img = pair.short, pair.long
    else:
        src_img, tgt_img = pair.long, pair.short

    mask = None
    if cfg.mask_saturated:
        lm = pair.long.as_matrix()
        sm = pair.short.as_matrix()
        keep = np.all(lm < cfg.saturation_level, axis=0) & np.all(sm < cfg.saturation_level, axis=0)
        if np.count_nonzero(keep) >= 16:
            mask = keep

    degenerate = False
    if cfg.mapping == "linear3x3":
        src = _represent(src_img, cfg)
        tgt = _represent(tgt_img, cfg)
        if mask is not None:
            src, tgt = src[:, mask], tgt[:, mask]
        res: PinvResult = pinv_map(src, tgt)
        entries = res.matrix.reshape(-1)
        degenerate = res.degenerate
    elif cfg.mapping == "affine3x4":
        src = _represent(src_img, cfg)
        tgt = _represent(tgt_img, cfg)
        if mask is not None:
            src, tgt = src[:, mask], tgt[:, mask]
        aff = affine_map(src, tgt)
        entries = aff.matrix.reshape(-1)
        degenerate = aff.degenerate
        if cfg.tm_extended:
            centroid_diff = tgt.mean(axis=1) - src.mean(axis=1)
            entries = np.concatenate([entries, centroid_diff, [aff.alpha]])
    else:  # homography3x3 always works on (r, g, 1) chroma rows
        src = _rg1_rows(src_img, cfg)
        tgt = _rg1_rows(tgt_img, cfg)
        if mask is not None:
            src, tgt = src[:, mask], tgt[:, mask]
        hom = homography_map(src, tgt)
        entries = hom.matrix.reshape(-1)
        degenerate = hom.degenerate

    if cfg.include_covariance:
        ratios = ratio_image(pair, cfg.eps_ratio)
        if mask is not None:
            ratios = ratios[:, mask]
        cov = covariance3(ratios)
        entries = np.concatenate([entries, cov[_TRIU_ROWS, _TRIU_COLS]])

    return DefVector(values=entries, degenerate=degenerate)
