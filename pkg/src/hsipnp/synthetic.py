"""Synthetic hyperspectral cubes for toy training and end-to-end checks.

Each cube is a linear mixture of a few smooth endmember spectra with spatial
abundance maps built from smoothed random fields plus sharp-edged shapes,
rescaled into [0.05, 0.95].
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _spectra(rng, n: int, bands: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, bands)
    out = np.empty((n, bands))
    for i in range(n):
        base = rng.uniform(0.1, 0.5)
        slope = rng.uniform(-0.3, 0.3)
        centre = rng.uniform(-0.2, 1.2)
        width = rng.uniform(0.15, 0.6)
        amp = rng.uniform(0.2, 0.6)
        out[i] = base + slope * t + amp * np.exp(-((t - centre) ** 2) / (2 * width**2))
    return np.clip(out, 0.02, None)


def _abundance(rng, rows: int, cols: int) -> np.ndarray:
    coarse = ndimage.gaussian_filter(rng.standard_normal((rows, cols)), rng.uniform(2.5, 5.0), mode="wrap")
    fine = ndimage.gaussian_filter(rng.standard_normal((rows, cols)), rng.uniform(0.7, 1.5), mode="wrap")
    field = coarse / (coarse.std() + 1e-12) + rng.uniform(0.1, 0.5) * fine / (fine.std() + 1e-12)
    field = (field - field.min()) / (np.ptp(field) + 1e-12)
    yy, xx = np.mgrid[0:rows, 0:cols]
    for _ in range(int(rng.integers(2, 7))):
        if rng.random() < 0.5:
            r0, c0 = rng.integers(0, rows), rng.integers(0, cols)
            h, w = rng.integers(rows // 6 + 1, rows // 2 + 2), rng.integers(cols // 6 + 1, cols // 2 + 2)
            shape = (yy >= r0) & (yy < r0 + h) & (xx >= c0) & (xx < c0 + w)
        else:
            r0, c0 = rng.uniform(0, rows), rng.uniform(0, cols)
            rad = rng.uniform(min(rows, cols) / 8, min(rows, cols) / 3)
            shape = (yy - r0) ** 2 + (xx - c0) ** 2 < rad**2
        field = np.where(shape, rng.uniform(0.0, 1.0), field)
    return field


def synthetic_cube(rows: int = 32, cols: int = 32, bands: int = 8, seed=0, endmembers: int = 4) -> np.ndarray:
    """One ``(bands, rows, cols)`` cube with values in [0.05, 0.95]."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    spectra = _spectra(rng, endmembers, bands)
    abund = np.stack([_abundance(rng, rows, cols) for _ in range(endmembers)])
    abund = abund / (abund.sum(axis=0, keepdims=True) + 1e-12)
    cube = np.einsum("kb,kmn->bmn", spectra, abund)
    lo, hi = cube.min(), cube.max()
    return 0.05 + 0.9 * (cube - lo) / (hi - lo + 1e-12)


def synthetic_dataset(count: int, rows=32, cols=32, bands=8, seed=0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_cube(rows, cols, bands, rng) for _ in range(count)]
