"""Plug-and-play ADMM for HSI restoration.

The driver alternates a closed-form data-fidelity solve

    x = (D^T D + rho I)^{-1} (D^T y + rho * x_tilde),   x_tilde = v - u

with a denoising step ``v = denoiser(x + u, sigma)`` and the scaled dual
ascent ``u += x - v``. ``sigma`` follows a log-spaced schedule and
``rho = lam / (sigma / 255)**2``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
from scipy import ndimage

from .degrade import Mask, Sensing, SuperRes, TaskOperator
from .metrics import psnr
from .tensor import DimensionMismatchError, fft2_band, ifft2_band

__all__ = [
    "Schedule",
    "make_schedule",
    "DEFAULT_ITERS",
    "Denoiser",
    "identity_denoiser",
    "box_denoiser",
    "dense_operator_matrix",
    "x_update_dense_oracle",
    "x_update_sr",
    "x_update_cs",
    "x_update_inpaint",
    "x_update",
    "initialize",
    "bicubic_upsample",
    "AdmmState",
    "AdmmResult",
    "TraceRow",
    "run",
    "NonFiniteIterateError",
    "write_trace_csv",
]

DEFAULT_ITERS = {"sr": 25, "cs": 50, "inpaint": 100}
DENSE_ORACLE_LIMIT = 4096


@dataclass(frozen=True)
class Schedule:
    sigma_1: float
    sigma_2: float
    iters: int
    lam: float
    sigma: np.ndarray
    rho: np.ndarray

    def __len__(self):
        return self.iters

    def __iter__(self):
        return iter(zip(self.sigma.tolist(), self.rho.tolist()))


def make_schedule(sigma_1: float, sigma_2: float, iters: int, lam: float = 1.5) -> Schedule:
    """Log-uniform noise levels from ``sigma_1`` down to ``sigma_2`` (0-255 scale)."""
    if sigma_2 <= 0:
        raise ValueError("sigma_2 must be positive")
    if sigma_1 < sigma_2:
        raise ValueError("sigma_1 must be >= sigma_2")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if iters == 1:
        sigma = np.array([float(sigma_1)])
    else:
        # geometric spacing sigma_1 * r**t is exact at the log-midpoint of simple ratios
        t = np.arange(iters) / (iters - 1)
        sigma = float(sigma_1) * (float(sigma_2) / float(sigma_1)) ** t
        sigma[-1] = sigma_2
        sigma = np.minimum.accumulate(sigma)
    rho = lam / (sigma / 255.0) ** 2
    sigma.setflags(write=False)
    rho.setflags(write=False)
    return Schedule(float(sigma_1), float(sigma_2), int(iters), float(lam), sigma, rho)


# ------------------------------------------------------------------ denoisers


class Denoiser(Protocol):
    def __call__(self, cube: np.ndarray, sigma: float) -> np.ndarray: ...


def identity_denoiser(cube: np.ndarray, sigma: float) -> np.ndarray:
    return np.array(cube, dtype=np.float64, copy=True)


def box_denoiser(size: int = 3) -> Callable[[np.ndarray, float], np.ndarray]:
    """Band-wise spatial box filter, a crude prior for tests."""

    def _den(cube, sigma):
        return ndimage.uniform_filter(np.asarray(cube, dtype=np.float64), size=(1, size, size), mode="wrap")

    return _den


# ------------------------------------------------------------- dense oracle


def dense_operator_matrix(op: TaskOperator, shape: tuple[int, int, int]) -> np.ndarray:
    """Materialize ``D`` as a dense matrix acting on ``x.ravel()``.

    Built element by element from the operator definitions, independently of
    the FFT/roll code paths used by :func:`apply`.
    """
    B, M, N = shape
    n = B * M * N
    if n > DENSE_ORACLE_LIMIT:
        raise ValueError(f"dense oracle limited to {DENSE_ORACLE_LIMIT} unknowns, got {n}")
    idx = lambda b, m, c: (b * M + m) * N + c  # noqa: E731

    if isinstance(op, Mask):
        if op.mask.shape != shape:
            raise DimensionMismatchError("mask shape mismatch")
        return np.diag(op.mask.ravel())

    if isinstance(op, Sensing):
        if op.masks.shape != shape:
            raise DimensionMismatchError("masks shape mismatch")
        D = np.zeros((M * N, n))
        for b in range(B):
            dm, dn = op.shifts[b]
            for m in range(M):
                for c in range(N):
                    row = ((m + dm) % M) * N + (c + dn) % N
                    D[row, idx(b, m, c)] += op.masks[b, m, c]
        return D

    if isinstance(op, SuperRes):
        f = op.factor
        if M % f or N % f:
            raise DimensionMismatchError("factor does not divide plane")
        kh, kw = op.blur.shape
        ch, cw = kh // 2, kw // 2
        mo, no = M // f, N // f
        D = np.zeros((B * mo * no, n))
        for b in range(B):
            for i in range(mo):
                for j in range(no):
                    row = (b * mo + i) * no + j
                    m, c = i * f, j * f
                    # circular convolution: (h * x)[m, c] = sum_t h[t] x[m - t]
                    for p in range(kh):
                        for q in range(kw):
                            src = idx(b, (m - (p - ch)) % M, (c - (q - cw)) % N)
                            D[row, src] += op.blur[p, q]
        return D

    raise TypeError(f"unknown operator {op!r}")


def x_update_dense_oracle(op: TaskOperator, y, x_tilde, rho: float) -> np.ndarray:
    """Solve ``(D^T D + rho I) x = D^T y + rho x_tilde`` with a dense factorization."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    D = dense_operator_matrix(op, x_tilde.shape)
    A = D.T @ D + rho * np.eye(D.shape[1])
    rhs = D.T @ np.asarray(y, dtype=np.float64).ravel() + rho * x_tilde.ravel()
    return np.linalg.solve(A, rhs).reshape(x_tilde.shape)


# ------------------------------------------------------- fast x-updates


def _check_rho(rho):
    if not rho > 0:
        raise ValueError("rho must be positive")


def x_update_sr(op: SuperRes, y, x_tilde, rho: float) -> np.ndarray:
    """Closed-form SR solve via the Woodbury identity on the low-resolution grid.

    ``x = (b - G^T F^-1{F(G b) / (lambda(G G^T) + rho)}) / rho`` with
    ``b = G^T y + rho x_tilde``; ``G G^T`` is circulant on the LR grid.
    """
    _check_rho(rho)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    B, M, N = x_tilde.shape
    b = op.adjoint(y, x_tilde.shape) + rho * x_tilde
    eig = op.gram_eigenvalues(M, N)
    z = ifft2_band(fft2_band(op.apply(b)) / (eig + rho))
    return (b - op.adjoint(z, x_tilde.shape)) / rho


def x_update_cs(op: Sensing, y, x_tilde, rho: float) -> np.ndarray:
    """``x = x_tilde + Phi^T[(y - Phi x_tilde) / (rho + psi)]`` for diagonal ``Phi Phi^T``."""
    _check_rho(rho)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    denom = rho + op.psi
    if np.any(denom == 0):
        raise ZeroDivisionError("rho + psi vanishes")
    resid = np.asarray(y, dtype=np.float64).reshape(op.psi.shape) - op.apply(x_tilde)[0]
    return x_tilde + op.adjoint(resid / denom)


def x_update_inpaint(op: Mask, y, x_tilde, rho: float) -> np.ndarray:
    _check_rho(rho)
    s = op.mask
    return (s * np.asarray(y, dtype=np.float64) + rho * np.asarray(x_tilde, dtype=np.float64)) / (s + rho)


def x_update(op: TaskOperator, y, x_tilde, rho: float) -> np.ndarray:
    if isinstance(op, SuperRes):
        return x_update_sr(op, y, x_tilde, rho)
    if isinstance(op, Sensing):
        return x_update_cs(op, y, x_tilde, rho)
    if isinstance(op, Mask):
        return x_update_inpaint(op, y, x_tilde, rho)
    raise TypeError(f"unknown operator {op!r}")


# ---------------------------------------------------------- initialization


def _keys_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic convolution weights for taps at offsets -1, 0, 1, 2 from ``floor``."""
    d = np.stack([t + 1, t, 1 - t, 2 - t], axis=-1)
    ad = np.abs(d)
    w = np.where(
        ad <= 1,
        (a + 2) * ad**3 - (a + 3) * ad**2 + 1,
        np.where(ad < 2, a * ad**3 - 5 * a * ad**2 + 8 * a * ad - 4 * a, 0.0),
    )
    return w


def _upsample_axis(x: np.ndarray, factor: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    pos = np.arange(n * factor) / factor
    base = np.floor(pos).astype(int)
    w = _keys_weights(pos - base)
    out = 0.0
    for k, off in enumerate((-1, 0, 1, 2)):
        taps = np.take(x, (base + off) % n, axis=axis)
        shape = [1] * x.ndim
        shape[axis] = -1
        out = out + taps * w[:, k].reshape(shape)
    return out


def bicubic_upsample(cube, factor: int) -> np.ndarray:
    """Band-wise bicubic (Keys, a = -0.5) upsampling with periodic borders.

    Low-resolution pixel ``j`` sits at high-resolution coordinate ``factor * j``,
    matching the decimation used by :class:`SuperRes`.
    """
    cube = np.asarray(cube, dtype=np.float64)
    if factor == 1:
        return cube.copy()
    return _upsample_axis(_upsample_axis(cube, factor, 1), factor, 2)


def _fill_missing(y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    observed = mask > 0
    if not observed.any():
        raise ValueError("empty observation: mask has no observed entries")
    fallback = float(y[observed].mean())
    out = y.copy()
    for b in range(y.shape[0]):
        obs = observed[b]
        if obs.all():
            continue
        if not obs.any():
            out[b] = fallback
            continue
        _, (ii, jj) = ndimage.distance_transform_edt(~obs, return_indices=True)
        filled = y[b][ii, jj]
        smooth = ndimage.uniform_filter(filled, size=3, mode="nearest")
        out[b] = np.where(obs, y[b], smooth)
    return out


def initialize(op: TaskOperator, y) -> np.ndarray:
    """Task-specific starting cube.

    SR: bicubic upsampling. Inpainting: nearest observed neighbour fill with a
    3x3 smoothing pass over the filled pixels. CS: ``Phi^T (y / psi)``, the
    minimum-norm consistent cube (zero where ``psi`` is zero).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty observation")
    if isinstance(op, SuperRes):
        return bicubic_upsample(y, op.factor)
    if isinstance(op, Mask):
        return _fill_missing(y * op.mask, op.mask)
    if isinstance(op, Sensing):
        psi = op.psi
        plane = y.reshape(psi.shape)
        norm = np.divide(plane, psi, out=np.zeros_like(plane), where=psi > 0)
        return op.adjoint(norm)
    raise TypeError(f"unknown operator {op!r}")


# ------------------------------------------------------------------- driver


class NonFiniteIterateError(FloatingPointError):
    def __init__(self, iteration: int, which: str):
        super().__init__(f"non-finite {which} at iteration {iteration}")
        self.iteration = iteration
        self.which = which


@dataclass
class AdmmState:
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class TraceRow:
    iter: int
    sigma_k: float
    rho_k: float
    primal_residual: float
    psnr: Optional[float] = None


@dataclass
class AdmmResult:
    output: np.ndarray
    state: AdmmState
    trace: list[TraceRow] = field(default_factory=list)
    init: Optional[np.ndarray] = None


def run(
    op: TaskOperator,
    y,
    denoiser: Denoiser,
    schedule: Schedule,
    x0: Optional[np.ndarray] = None,
    gt: Optional[np.ndarray] = None,
) -> AdmmResult:
    """Run plug-and-play ADMM and return the final denoised iterate ``v``."""
    y = np.asarray(y, dtype=np.float64)
    x = initialize(op, y) if x0 is None else np.array(x0, dtype=np.float64)
    if gt is not None and np.shape(gt) != x.shape:
        raise DimensionMismatchError("ground truth does not match the restored cube")
    init = x.copy()
    state = AdmmState(x=x, v=x.copy(), u=np.zeros_like(x))
    trace: list[TraceRow] = []
    for k, (sigma, rho) in enumerate(schedule, start=1):
        x_tilde = state.v - state.u
        state.x = x_update(op, y, x_tilde, rho)
        if not np.all(np.isfinite(state.x)):
            raise NonFiniteIterateError(k, "x")
        v_tilde = state.x + state.u
        state.v = np.asarray(denoiser(v_tilde, sigma), dtype=np.float64)
        if state.v.shape != state.x.shape:
            raise DimensionMismatchError("denoiser changed the cube shape")
        if not np.all(np.isfinite(state.v)):
            raise NonFiniteIterateError(k, "v")
        state.u = state.u + (state.x - state.v)
        state.k = k
        resid = float(np.linalg.norm(state.x - state.v))
        score = psnr(gt, state.v) if gt is not None else None
        trace.append(TraceRow(k, float(sigma), float(rho), resid, score))
    return AdmmResult(output=state.v, state=state, trace=trace, init=init)


def write_trace_csv(trace: list[TraceRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "sigma_k", "rho_k", "primal_residual", "psnr"])
    for r in trace:
        w.writerow([r.iter, repr(r.sigma_k), repr(r.rho_k), repr(r.primal_residual),
                    "" if r.psnr is None else repr(r.psnr)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
