"""Dense tensor kernels shared by the degradation operators and the network.

Layout conventions
------------------
HSI cube      : ndarray ``(B, M, N)``, band-major (B planes of M x N).
Feature tensor: ndarray ``(C, B, M, N)`` or batched ``(S, C, B, M, N)``.

Convolutions treat the band axis as depth, so a 3D kernel has shape
``(out, in, kd, kh, kw)`` with ``kd`` running along the spectral axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "Kernel3d",
    "conv3d",
    "conv3d_transposed",
    "conv3d_raw",
    "conv3d_transposed_raw",
    "conv3d_weight_grad",
    "fft2_band",
    "ifft2_band",
    "add",
    "sub",
    "scale",
    "hadamard",
    "sigmoid",
    "tanh",
    "concat_channels",
    "pad",
    "crop",
]


class DimensionMismatchError(ValueError):
    """Raised when operand shapes are incompatible."""


Triple = tuple[int, int, int]


def _triple(v) -> Triple:
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v!r}")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class Kernel3d:
    """A 3D convolution kernel with optional bias.

    ``weight`` has shape ``(out, in, kd, kh, kw)``. Padding defaults to
    ``k // 2`` per axis (zero "same" padding for odd kernels).
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: Triple = (1, 1, 1)
    padding: Triple | None = None
    _pad: Triple = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weight)
        if w.ndim != 5:
            raise DimensionMismatchError(f"kernel weight must be 5-D, got shape {w.shape}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "stride", _triple(self.stride))
        pad = tuple(k // 2 for k in w.shape[2:]) if self.padding is None else _triple(self.padding)
        object.__setattr__(self, "_pad", pad)
        if any(s < 1 for s in self.stride):
            raise ValueError("strides must be positive")
        if self.bias is not None:
            object.__setattr__(self, "bias", np.asarray(self.bias))

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def size(self) -> Triple:
        return tuple(self.weight.shape[2:])  # type: ignore[return-value]

    @property
    def pad(self) -> Triple:
        return self._pad


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 4:
        return x[None], True
    if x.ndim == 5:
        return x, False
    raise DimensionMismatchError(f"feature tensor must be 4-D or 5-D, got shape {x.shape}")


def conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _im2col(x: np.ndarray, ksize, stride, pad) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Columns ``(C * kd * kh * kw, S * D' * H' * W')`` of a zero-padded batch."""
    S, C = x.shape[:2]
    for n, k, p in zip(x.shape[2:], ksize, pad):
        if n + 2 * p < k:
            raise DimensionMismatchError(f"padded extent {n + 2 * p} smaller than kernel {k}")
    dims = tuple(conv_output_size(n, k, s, p) for n, k, s, p in zip(x.shape[2:], ksize, stride, pad))
    pd, ph, pw = pad
    if any(pad):
        x = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    kd, kh, kw = ksize
    sd, sh, sw = stride
    Do, Ho, Wo = dims
    cols = np.empty((C, kd, kh, kw, S, Do, Ho, Wo), dtype=x.dtype)
    xs = x.swapaxes(0, 1)
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                cols[:, a, b, c] = xs[:, :, a : a + sd * Do : sd, b : b + sh * Ho : sh, c : c + sw * Wo : sw]
    return cols.reshape(C * kd * kh * kw, -1), dims


def conv3d_raw(x, weight, bias=None, stride=(1, 1, 1), pad=None) -> np.ndarray:
    """Batched cross-correlation ``(S, C, D, H, W) -> (S, O, D', H', W')``."""
    ksize = weight.shape[2:]
    pad = tuple(k // 2 for k in ksize) if pad is None else pad
    cols, dims = _im2col(x, ksize, stride, pad)
    out = weight.reshape(weight.shape[0], -1) @ cols
    if bias is not None:
        out += bias.reshape(-1, 1)
    out = out.reshape(weight.shape[0], x.shape[0], *dims)
    return np.ascontiguousarray(out.swapaxes(0, 1))


def conv3d_transposed_raw(g, weight, out_size, bias=None, stride=(1, 1, 1), pad=None) -> np.ndarray:
    """Adjoint of :func:`conv3d_raw` mapping ``(S, O, D', H', W')`` onto ``out_size``."""
    ksize = weight.shape[2:]
    pad = tuple(k // 2 for k in ksize) if pad is None else pad
    S = g.shape[0]
    C = weight.shape[1]
    for n, k, s, p, m in zip(out_size, ksize, stride, pad, g.shape[2:]):
        if conv_output_size(n, k, s, p) != m:
            raise DimensionMismatchError(
                f"transposed conv: input extent {m} inconsistent with output extent {n}"
            )
    if all(st == 1 for st in stride) and all(p <= k - 1 for p, k in zip(pad, ksize)):
        # unit stride: correlation with the flipped, channel-swapped kernel
        flipped = np.ascontiguousarray(np.flip(weight, axis=(2, 3, 4)).swapaxes(0, 1))
        full_pad = tuple(k - 1 - p for k, p in zip(ksize, pad))
        out = conv3d_raw(g, flipped, bias, (1, 1, 1), full_pad)
        return out[:, :, : out_size[0], : out_size[1], : out_size[2]]
    # cols: (C, kd, kh, kw, S, D', H', W')
    cols = np.tensordot(weight, g, axes=((0,), (1,)))
    padded = [n + 2 * p for n, p in zip(out_size, pad)]
    out = np.zeros((C, S, *padded), dtype=np.result_type(g, weight))
    Dq, Hq, Wq = g.shape[2:]
    sd, sh, sw = stride
    for a in range(ksize[0]):
        for b in range(ksize[1]):
            for c in range(ksize[2]):
                out[:, :, a : a + sd * Dq : sd, b : b + sh * Hq : sh, c : c + sw * Wq : sw] += cols[:, a, b, c]
    out = out.swapaxes(0, 1)
    pd, ph, pw = pad
    D, H, W = out_size
    out = out[:, :, pd : pd + D, ph : ph + H, pw : pw + W]
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1, 1)
    return np.ascontiguousarray(out)


def conv3d_weight_grad(x, g, ksize, stride=(1, 1, 1), pad=None) -> np.ndarray:
    """Gradient of ``<conv3d_raw(x, w), g>`` with respect to ``w``."""
    ksize = tuple(ksize)
    pad = tuple(k // 2 for k in ksize) if pad is None else pad
    cols, _ = _im2col(x, ksize, stride, pad)
    O = g.shape[1]
    gm = np.ascontiguousarray(g.swapaxes(0, 1)).reshape(O, -1)
    return (gm @ cols.T).reshape(O, x.shape[1], *ksize)


def _check_kernel_input(x: np.ndarray, channels: int, what: str):
    if x.shape[1] != channels:
        raise DimensionMismatchError(
            f"{what}: input has {x.shape[1]} channels, kernel expects {channels}"
        )


def conv3d(input: np.ndarray, kernel: Kernel3d) -> np.ndarray:
    """Zero-padded strided 3D convolution (cross-correlation) of a feature tensor."""
    x, squeeze = _as_batch(input)
    _check_kernel_input(x, kernel.in_channels, "conv3d")
    if kernel.bias is not None and kernel.bias.shape != (kernel.out_channels,):
        raise DimensionMismatchError("bias length must equal out_channels")
    out = conv3d_raw(x, kernel.weight, kernel.bias, kernel.stride, kernel.pad)
    return out[0] if squeeze else out


def conv3d_transposed(
    input: np.ndarray, kernel: Kernel3d, output_size: Triple | None = None
) -> np.ndarray:
    """Transposed convolution, the exact adjoint of :func:`conv3d` with ``kernel``.

    ``input`` carries ``kernel.out_channels`` channels and the result carries
    ``kernel.in_channels``. ``output_size`` defaults to ``extent * stride``,
    which inverts a "same"-padded strided convolution. A bias, when present,
    must have ``kernel.in_channels`` entries.
    """
    x, squeeze = _as_batch(input)
    _check_kernel_input(x, kernel.out_channels, "conv3d_transposed")
    if output_size is None:
        output_size = tuple(n * s for n, s in zip(x.shape[2:], kernel.stride))
    if kernel.bias is not None and kernel.bias.shape != (kernel.in_channels,):
        raise DimensionMismatchError("transposed bias length must equal in_channels")
    out = conv3d_transposed_raw(
        x, kernel.weight, tuple(output_size), kernel.bias, kernel.stride, kernel.pad
    )
    return out[0] if squeeze else out


def fft2_band(plane: np.ndarray) -> np.ndarray:
    """2D DFT over the last two axes (one M x N plane or a stack of bands)."""
    plane = np.asarray(plane)
    if plane.ndim < 2 or min(plane.shape[-2:]) < 1:
        raise DimensionMismatchError(f"expected at least one M x N plane, got {plane.shape}")
    return np.fft.fft2(plane, axes=(-2, -1))


def ifft2_band(spectrum: np.ndarray, real: bool = True) -> np.ndarray:
    out = np.fft.ifft2(spectrum, axes=(-2, -1))
    return out.real if real else out


def _same_shape(a, b, op: str):
    if np.shape(a) != np.shape(b):
        raise DimensionMismatchError(f"{op}: shapes {np.shape(a)} and {np.shape(b)} differ")


def add(a, b):
    _same_shape(a, b, "add")
    return np.add(a, b)


def sub(a, b):
    _same_shape(a, b, "sub")
    return np.subtract(a, b)


def scale(a, c: float):
    return np.multiply(a, c)


def hadamard(a, b):
    _same_shape(a, b, "hadamard")
    return np.multiply(a, b)


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def concat_channels(*tensors, axis: int | None = None):
    """Concatenate feature tensors along the channel axis (0 for 4-D, 1 for 5-D)."""
    ndim = {np.ndim(t) for t in tensors}
    if len(ndim) != 1:
        raise DimensionMismatchError("cannot concatenate tensors of different rank")
    nd = ndim.pop()
    ax = axis if axis is not None else (0 if nd == 4 else 1)
    rest = {tuple(np.delete(np.shape(t), ax)) for t in tensors}
    if len(rest) != 1:
        raise DimensionMismatchError("non-channel dimensions must agree for concatenation")
    return np.concatenate(tensors, axis=ax)


def pad(x, widths, mode: str = "constant"):
    """Pad the last three axes by ``widths`` ((before, after) per axis)."""
    x = np.asarray(x)
    full = [(0, 0)] * (x.ndim - 3) + [tuple(w) for w in widths]
    return np.pad(x, full, mode=mode)


def crop(x, widths):
    x = np.asarray(x)
    sl = [slice(None)] * (x.ndim - 3)
    for (lo, hi), n in zip(widths, x.shape[-3:]):
        if lo + hi > n:
            raise DimensionMismatchError("crop larger than tensor")
        sl.append(slice(lo, n - hi))
    return x[tuple(sl)]
