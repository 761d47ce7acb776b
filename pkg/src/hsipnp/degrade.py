"""Forward degradation operators ``y = D x + e`` and noise synthesis.

Three operators are provided, each with an exact adjoint:

* :class:`SuperRes`  -- circular blur of every band followed by keeping every
  ``factor``-th pixel.
* :class:`Sensing`   -- CASSI-style coded sensing, ``y = sum_b shift_b(mask_b * x_b)``
  producing a single measurement plane.
* :class:`Mask`      -- element-wise binary masking (inpainting).

Cubes are ``(B, M, N)`` arrays; the sensing measurement is ``(1, M, N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .tensor import DimensionMismatchError, fft2_band, ifft2_band

__all__ = [
    "SuperRes",
    "Sensing",
    "Mask",
    "TaskOperator",
    "apply",
    "apply_adjoint",
    "gaussian_kernel",
    "box_kernel",
    "psf2otf",
    "IidGaussian",
    "NonIid",
    "Stripe",
    "Impulse",
    "NoiseModel",
    "add_noise",
]


def _as_cube(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionMismatchError(f"expected a (B, M, N) cube, got shape {x.shape}")
    return x


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized ``size x size`` Gaussian blur kernel (even sizes allowed)."""
    if size < 1:
        raise ValueError("kernel size must be positive")
    if sigma <= 0:
        k = np.zeros((size, size))
        k[size // 2, size // 2] = 1.0
        return k
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / size**2)


def psf2otf(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Transfer function of circular convolution with ``kernel`` centred at ``k // 2``."""
    kh, kw = kernel.shape
    M, N = shape
    if kh > M or kw > N:
        raise DimensionMismatchError(f"blur kernel {kernel.shape} larger than plane {shape}")
    padded = np.zeros((M, N))
    padded[:kh, :kw] = kernel
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return fft2_band(padded)


@dataclass(frozen=True, eq=False)
class SuperRes:
    """Blur (circular) then ``factor``-times decimation, ``D = S H``."""

    blur: np.ndarray
    factor: int

    def __post_init__(self):
        blur = np.asarray(self.blur, dtype=np.float64)
        if blur.ndim != 2:
            raise ValueError("blur kernel must be 2-D")
        if not np.isclose(blur.sum(), 1.0, rtol=0, atol=1e-8):
            raise ValueError(f"blur kernel must sum to 1 (sums to {blur.sum():.6g})")
        if int(self.factor) != self.factor or self.factor < 1:
            raise ValueError("factor must be a positive integer")
        object.__setattr__(self, "blur", blur)
        object.__setattr__(self, "factor", int(self.factor))

    def _check(self, M: int, N: int):
        f = self.factor
        if M % f or N % f:
            raise DimensionMismatchError(f"factor {f} does not divide plane size {M}x{N}")

    def otf(self, M: int, N: int) -> np.ndarray:
        return psf2otf(self.blur, (M, N))

    def observed_shape(self, shape):
        B, M, N = shape
        self._check(M, N)
        return (B, M // self.factor, N // self.factor)

    def apply(self, x):
        x = _as_cube(x)
        B, M, N = x.shape
        self._check(M, N)
        blurred = ifft2_band(fft2_band(x) * self.otf(M, N))
        f = self.factor
        return blurred[:, ::f, ::f]

    def adjoint(self, y, shape=None):
        y = _as_cube(y)
        f = self.factor
        B, m, n = y.shape
        M, N = (m * f, n * f) if shape is None else shape[-2:]
        if (M // f, N // f) != (m, n):
            raise DimensionMismatchError("measurement does not match target shape")
        up = np.zeros((B, M, N))
        up[:, ::f, ::f] = y
        return ifft2_band(fft2_band(up) * np.conj(self.otf(M, N)))

    def gram_eigenvalues(self, M: int, N: int) -> np.ndarray:
        """Eigenvalues of ``G G^T`` on the low-resolution grid (``G = S H``).

        ``H H^T`` is circulant with kernel equal to the autocorrelation of the
        blur; its decimated (zeroth polyphase) component is the circulant
        kernel of ``G G^T``.
        """
        self._check(M, N)
        f = self.factor
        autocorr = ifft2_band(np.abs(self.otf(M, N)) ** 2)
        return fft2_band(autocorr[::f, ::f]).real


@dataclass(frozen=True, eq=False)
class Sensing:
    """Coded-aperture sensing ``y = sum_b roll(mask_b * x_b, shift_b)``.

    Circular shifts are pixel permutations, so ``Phi Phi^T`` is diagonal with
    entries ``psi = sum_b roll(mask_b**2, shift_b)``.
    """

    masks: np.ndarray
    shifts: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=np.float64)
        shifts = np.asarray(self.shifts)
        if masks.ndim != 3:
            raise DimensionMismatchError("masks must be (B, M, N)")
        if shifts.shape != (masks.shape[0], 2):
            raise DimensionMismatchError("shifts must be (B, 2)")
        if not np.issubdtype(shifts.dtype, np.integer):
            if not np.all(shifts == np.round(shifts)):
                raise ValueError("shifts must be integers")
        shifts = shifts.astype(np.int64)
        if not np.all(np.isfinite(masks)):
            raise ValueError("masks must be finite")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "shifts", shifts)
        psi = np.zeros(masks.shape[1:])
        for b in range(masks.shape[0]):
            psi += np.roll(masks[b] ** 2, tuple(shifts[b]), axis=(0, 1))
        object.__setattr__(self, "psi", psi)

    @classmethod
    def cassi(cls, rows: int, cols: int, bands: int, seed=0, p: float = 0.5) -> "Sensing":
        """Single random Bernoulli aperture dispersed by one column per band."""
        rng = np.random.default_rng(seed)
        base = (rng.random((rows, cols)) < p).astype(np.float64)
        masks = np.repeat(base[None], bands, axis=0)
        shifts = np.stack([np.zeros(bands, dtype=np.int64), np.arange(bands)], axis=1)
        return cls(masks, shifts)

    def observed_shape(self, shape):
        return (1, *shape[1:])

    def _check(self, x):
        if x.shape != self.masks.shape:
            raise DimensionMismatchError(f"cube {x.shape} does not match masks {self.masks.shape}")

    def apply(self, x):
        x = _as_cube(x)
        self._check(x)
        y = np.zeros(x.shape[1:])
        for b in range(x.shape[0]):
            y += np.roll(self.masks[b] * x[b], tuple(self.shifts[b]), axis=(0, 1))
        return y[None]

    def adjoint(self, y, shape=None):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 3:
            if y.shape[0] != 1:
                raise DimensionMismatchError("sensing measurement must be a single plane")
            y = y[0]
        if y.shape != self.masks.shape[1:]:
            raise DimensionMismatchError("measurement does not match mask plane")
        out = np.empty(self.masks.shape)
        for b in range(self.masks.shape[0]):
            out[b] = self.masks[b] * np.roll(y, tuple(-self.shifts[b]), axis=(0, 1))
        return out


@dataclass(frozen=True, eq=False)
class Mask:
    """Diagonal binary masking ``D = S`` (``S^T = S``)."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float64)
        if m.ndim != 3:
            raise DimensionMismatchError("mask must be a (B, M, N) cube")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "mask", m)

    @classmethod
    def random(cls, shape, missing: float, seed=0) -> "Mask":
        rng = np.random.default_rng(seed)
        return cls((rng.random(shape) >= missing).astype(np.float64))

    def observed_shape(self, shape):
        return tuple(shape)

    def apply(self, x):
        x = _as_cube(x)
        if x.shape != self.mask.shape:
            raise DimensionMismatchError(f"cube {x.shape} does not match mask {self.mask.shape}")
        return self.mask * x

    def adjoint(self, y, shape=None):
        return self.apply(y)


TaskOperator = Union[SuperRes, Sensing, Mask]


def apply(op: TaskOperator, x) -> np.ndarray:
    """Noise-free degradation ``D x``."""
    return op.apply(x)


def apply_adjoint(op: TaskOperator, y, shape=None) -> np.ndarray:
    """``D^T y``; ``shape`` is the target cube shape when it is ambiguous."""
    return op.adjoint(y, shape)


# ---------------------------------------------------------------- noise models


@dataclass(frozen=True)
class IidGaussian:
    sigma: float  # 0-255 scale

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class NonIid:
    """Per-band Gaussian level drawn uniformly on ``[0, sigma_max]``."""

    sigma_max: float = 70.0

    def __post_init__(self):
        if self.sigma_max < 0:
            raise ValueError("sigma_max must be non-negative")


@dataclass(frozen=True)
class Stripe:
    """Negative column offsets on a random subset of bands."""

    band_fraction: float = 1.0 / 3.0
    col_fraction_range: tuple[float, float] = (0.05, 0.15)
    amplitude_range: tuple[float, float] = (0.25, 0.75)

    def __post_init__(self):
        _check_fraction(self.band_fraction)
        _check_range(self.col_fraction_range)


@dataclass(frozen=True)
class Impulse:
    """Salt-and-pepper corruption of a random subset of bands."""

    band_fraction: float = 1.0 / 3.0
    intensity_range: tuple[float, float] = (0.1, 0.7)

    def __post_init__(self):
        _check_fraction(self.band_fraction)
        _check_range(self.intensity_range)


NoiseModel = Union[IidGaussian, NonIid, Stripe, Impulse]


def _check_fraction(f):
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"fraction {f} outside [0, 1]")


def _check_range(r):
    lo, hi = r
    _check_fraction(lo)
    _check_fraction(hi)
    if lo > hi:
        raise ValueError(f"empty range {r}")


def _pick_bands(rng, B: int, fraction: float) -> np.ndarray:
    count = min(B, math.ceil(B * fraction))
    return np.sort(rng.choice(B, size=count, replace=False))


def _apply_one(x: np.ndarray, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    B, M, N = x.shape
    if isinstance(model, IidGaussian):
        if model.sigma == 0:
            return x
        return x + rng.standard_normal(x.shape) * (model.sigma / 255.0)
    if isinstance(model, NonIid):
        sig = rng.uniform(0.0, model.sigma_max, size=B) / 255.0
        return x + rng.standard_normal(x.shape) * sig[:, None, None]
    if isinstance(model, Stripe):
        out = x.copy()
        lo, hi = model.col_fraction_range
        nlo, nhi = math.ceil(lo * N - 1e-9), math.floor(hi * N + 1e-9)
        alo, ahi = model.amplitude_range
        for b in _pick_bands(rng, B, model.band_fraction):
            n_cols = int(rng.integers(nlo, max(nlo, nhi) + 1))
            cols = rng.choice(N, size=n_cols, replace=False)
            out[b][:, cols] -= rng.uniform(alo, ahi, size=n_cols)
        return out
    if isinstance(model, Impulse):
        out = x.copy()
        lo, hi = model.intensity_range
        for b in _pick_bands(rng, B, model.band_fraction):
            p = rng.uniform(lo, hi)
            hit = rng.random((M, N)) < p
            salt = rng.random((M, N)) < 0.5
            out[b][hit] = salt[hit].astype(np.float64)
        return out
    raise TypeError(f"unknown noise model {model!r}")


def add_noise(
    x, model: NoiseModel | Sequence[NoiseModel], seed: int | np.random.Generator = 0
) -> np.ndarray:
    """Corrupt ``x`` with one noise model or a sequence applied in order.

    Complex cases compose, e.g. ``[NonIid(70), Stripe()]`` for Gaussian plus
    stripes. The result is a deterministic function of ``seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionMismatchError("noise is applied to (B, M, N) cubes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    models = model if isinstance(model, (list, tuple)) else [model]
    for m in models:
        x = _apply_one(x, m, rng)
    return x
