"""PSNR, SSIM and SAM for normalized HSI cubes.

PSNR and SSIM are computed per band and averaged; SAM is the mean spectral
angle (radians) over pixels. Cubes are ``(B, M, N)`` with data range 1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["MetricReport", "psnr", "psnr_bands", "ssim", "ssim_bands", "sam", "sam_details", "report", "PSNR_CAP"]

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _pair(gt, pred):
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    if gt.ndim == 2:
        gt, pred = gt[None], pred[None]
    if gt.ndim != 3:
        raise ValueError("expected (B, M, N) cubes")
    return gt, pred


def psnr_bands(gt, pred) -> np.ndarray:
    gt, pred = _pair(gt, pred)
    mse = np.mean((gt - pred) ** 2, axis=(1, 2))
    with np.errstate(divide="ignore"):
        val = 10.0 * np.log10(1.0 / mse)
    return np.minimum(val, PSNR_CAP)


def psnr(gt, pred) -> float:
    return float(np.mean(psnr_bands(gt, pred)))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, win):
    views = sliding_window_view(img, win.shape)
    return np.tensordot(views, win, axes=((2, 3), (0, 1)))


def ssim_bands(gt, pred) -> np.ndarray:
    """Mean local SSIM per band (11x11 Gaussian window, sigma 1.5, 'valid' region)."""
    gt, pred = _pair(gt, pred)
    if min(gt.shape[1:]) < SSIM_WINDOW:
        raise ValueError(f"planes must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    win = _gaussian_window()
    out = np.empty(gt.shape[0])
    for b in range(gt.shape[0]):
        x, y = gt[b], pred[b]
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        num = (2 * mx * my + C1) * (2 * sxy + C2)
        den = (mx * mx + my * my + C1) * (sxx + syy + C2)
        out[b] = np.mean(num / den)
    return out


def ssim(gt, pred) -> float:
    return float(np.mean(ssim_bands(gt, pred)))


def sam_details(gt, pred) -> tuple[float, int]:
    """Mean spectral angle in radians and the number of skipped zero-norm pixels."""
    gt, pred = _pair(gt, pred)
    g = gt.reshape(gt.shape[0], -1)
    p = pred.reshape(pred.shape[0], -1)
    ng = np.linalg.norm(g, axis=0)
    npr = np.linalg.norm(p, axis=0)
    valid = (ng > 0) & (npr > 0)
    skipped = int(np.count_nonzero(~valid))
    if not valid.any():
        raise ValueError("all pixels have zero-norm spectra")
    gu = g[:, valid] / ng[valid]
    pu = p[:, valid] / npr[valid]
    # 2*atan2(|a-b|, |a+b|) is exact for parallel unit vectors, unlike arccos
    ang = 2.0 * np.arctan2(np.linalg.norm(gu - pu, axis=0), np.linalg.norm(gu + pu, axis=0))
    return float(np.mean(ang)), skipped


def sam(gt, pred) -> float:
    return sam_details(gt, pred)[0]


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    psnr_per_band: tuple[float, ...]
    ssim_per_band: tuple[float, ...]
    sam_skipped: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def report(gt, pred) -> MetricReport:
    pb = psnr_bands(gt, pred)
    sb = ssim_bands(gt, pred)
    angle, skipped = sam_details(gt, pred)
    return MetricReport(
        psnr=float(np.mean(pb)),
        ssim=float(np.mean(sb)),
        sam=angle,
        psnr_per_band=tuple(float(v) for v in pb),
        ssim_per_band=tuple(float(v) for v in sb),
        sam_skipped=skipped,
    )
