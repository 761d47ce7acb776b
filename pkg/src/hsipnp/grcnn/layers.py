"""Gated recurrent convolution units and residual blocks with manual backprop."""

from __future__ import annotations

import numpy as np

from ..tensor import (
    DimensionMismatchError,
    conv3d_raw,
    conv3d_transposed_raw,
    conv3d_weight_grad,
    sigmoid,
)

FORWARD = "forward"
BACKWARD = "backward"


def band_recurrence(w: np.ndarray, f: np.ndarray, reverse: bool = False) -> np.ndarray:
    """``h_i = (1 - w_i) h_{i-1} + w_i f_i`` along the band axis (axis 2), ``h_0 = 0``."""
    D = w.shape[2]
    h = np.empty_like(f)
    prev = np.zeros_like(f[:, :, 0])
    for i in (range(D - 1, -1, -1) if reverse else range(D)):
        wi = w[:, :, i]
        prev = (1.0 - wi) * prev + wi * f[:, :, i]
        h[:, :, i] = prev
    return h


def band_recurrence_backward(gh, w, f, h, reverse: bool = False):
    """Gradients of the band recurrence with respect to ``w`` and ``f``."""
    D = w.shape[2]
    dw = np.empty_like(w)
    df = np.empty_like(f)
    carry = np.zeros_like(gh[:, :, 0])
    order = range(D) if reverse else range(D - 1, -1, -1)
    for i in order:
        g = gh[:, :, i] + carry
        j = i + 1 if reverse else i - 1
        hprev = h[:, :, j] if 0 <= j < D else 0.0
        wi = w[:, :, i]
        dw[:, :, i] = g * (f[:, :, i] - hprev)
        df[:, :, i] = g * wi
        carry = g * (1.0 - wi)
    return dw, df


class GRConv:
    """Gated recurrent convolution unit.

    Two 3D convolutions of the input give weight maps ``W = sigmoid(h_w * I)``
    and candidates ``F = tanh(h_f * I)``; they are fused band by band with
    :func:`band_recurrence`. A bidirectional unit owns a second ``(h_w, h_f)``
    pair that runs in the opposite direction; the two fused maps are stacked
    along channels (``merge="stack"``) or summed (``merge="sum"``).

    ``out_channels`` is the per-direction width. With ``transposed=True`` the
    convolutions are transposed (upsampling) convolutions.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        ksize: int = 3,
        stride=(1, 1, 1),
        direction: str = FORWARD,
        bidirectional: bool = False,
        merge: str = "stack",
        transposed: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if direction not in (FORWARD, BACKWARD):
            raise ValueError(f"direction must be forward or backward, got {direction!r}")
        if merge not in ("stack", "sum"):
            raise ValueError("merge must be 'stack' or 'sum'")
        self.in_channels = in_channels
        self.width = out_channels
        self.ksize = ksize
        self.stride = tuple(stride) if not np.isscalar(stride) else (stride,) * 3
        self.pad = (ksize // 2,) * 3
        self.direction = direction
        self.bidirectional = bidirectional
        self.merge = merge
        self.transposed = transposed
        rng = rng if rng is not None else np.random.default_rng(0)
        k = ksize
        bound = 1.0 / np.sqrt(in_channels * k**3)
        shape = (in_channels, out_channels, k, k, k) if transposed else (out_channels, in_channels, k, k, k)
        self.params: dict[str, np.ndarray] = {}
        for p in range(self.n_pairs):
            for name in ("h_w", "h_f"):
                self.params[f"{name}{p}.weight"] = rng.uniform(-bound, bound, size=shape).astype(dtype)
                self.params[f"{name}{p}.bias"] = np.zeros(out_channels, dtype=dtype)

    @property
    def n_pairs(self) -> int:
        return 2 if self.bidirectional else 1

    @property
    def out_channels(self) -> int:
        if self.bidirectional and self.merge == "stack":
            return 2 * self.width
        return self.width

    def reverse_of(self, pair: int) -> bool:
        return (self.direction == BACKWARD) != (pair == 1)

    def _cat(self, p):
        ax = 1 if self.transposed else 0
        W = np.concatenate([self.params[f"h_w{p}.weight"], self.params[f"h_f{p}.weight"]], axis=ax)
        b = np.concatenate([self.params[f"h_w{p}.bias"], self.params[f"h_f{p}.bias"]])
        return W, b

    def forward(self, x: np.ndarray, out_size=None):
        if x.shape[1] != self.in_channels:
            raise DimensionMismatchError(
                f"GRConv expects {self.in_channels} channels, got {x.shape[1]}"
            )
        c = self.width
        outs, caches = [], []
        for p in range(self.n_pairs):
            W, b = self._cat(p)
            if self.transposed:
                size = out_size or tuple(n * s for n, s in zip(x.shape[2:], self.stride))
                pre = conv3d_transposed_raw(x, W, size, b, self.stride, self.pad)
            else:
                pre = conv3d_raw(x, W, b, self.stride, self.pad)
            w = sigmoid(pre[:, :c])
            f = np.tanh(pre[:, c:])
            h = band_recurrence(w, f, self.reverse_of(p))
            outs.append(h)
            caches.append((w, f, h))
        if self.n_pairs == 1:
            out = outs[0]
        elif self.merge == "stack":
            out = np.concatenate(outs, axis=1)
        else:
            out = outs[0] + outs[1]
        return out, (x, caches)

    def backward(self, gout: np.ndarray, cache, grads: dict, prefix: str = "") -> np.ndarray:
        x, caches = cache
        c = self.width
        gx = None
        for p, (w, f, h) in enumerate(caches):
            if self.n_pairs == 2 and self.merge == "stack":
                gh = gout[:, p * c : (p + 1) * c]
            else:
                gh = gout
            dw, df = band_recurrence_backward(gh, w, f, h, self.reverse_of(p))
            dpre = np.concatenate([dw * w * (1.0 - w), df * (1.0 - f * f)], axis=1)
            W, _ = self._cat(p)
            if self.transposed:
                gW = conv3d_weight_grad(dpre, x, W.shape[2:], self.stride, self.pad)
                gi = conv3d_raw(dpre, W, None, self.stride, self.pad)
                gw_, gf_ = gW[:, :c], gW[:, c:]
            else:
                gW = conv3d_weight_grad(x, dpre, W.shape[2:], self.stride, self.pad)
                gi = conv3d_transposed_raw(dpre, W, x.shape[2:], None, self.stride, self.pad)
                gw_, gf_ = gW[:c], gW[c:]
            gb = dpre.sum(axis=(0, 2, 3, 4))
            _acc(grads, f"{prefix}h_w{p}.weight", gw_)
            _acc(grads, f"{prefix}h_f{p}.weight", gf_)
            _acc(grads, f"{prefix}h_w{p}.bias", gb[:c])
            _acc(grads, f"{prefix}h_f{p}.bias", gb[c:])
            gx = gi if gx is None else gx + gi
        return gx

    def mirrored(self) -> "GRConv":
        """Copy running in the opposite band direction with band-flipped kernels."""
        m = object.__new__(GRConv)
        m.__dict__.update(self.__dict__)
        m.direction = BACKWARD if self.direction == FORWARD else FORWARD
        m.params = {
            k: (np.flip(v, axis=2).copy() if v.ndim == 5 else v.copy()) for k, v in self.params.items()
        }
        return m


def _acc(grads: dict, key: str, value: np.ndarray):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


class ResBlock:
    """Two 3x3x3 GRConv units plus a 1x1x1 GRConv projection shortcut."""

    def __init__(self, in_channels, out_channels, direction=FORWARD, rng=None, dtype=np.float64):
        self.conv1 = GRConv(in_channels, out_channels, 3, direction=direction, rng=rng, dtype=dtype)
        self.conv2 = GRConv(out_channels, out_channels, 3, direction=direction, rng=rng, dtype=dtype)
        self.shortcut = GRConv(in_channels, out_channels, 1, direction=direction, rng=rng, dtype=dtype)
        self.out_channels = out_channels

    def units(self):
        return [("conv1", self.conv1), ("conv2", self.conv2), ("shortcut", self.shortcut)]

    def forward(self, x):
        a, c1 = self.conv1.forward(x)
        b, c2 = self.conv2.forward(a)
        s, c3 = self.shortcut.forward(x)
        return b + s, (c1, c2, c3)

    def backward(self, g, cache, grads, prefix=""):
        c1, c2, c3 = cache
        ga = self.conv2.backward(g, c2, grads, prefix + "conv2.")
        gx = self.conv1.backward(ga, c1, grads, prefix + "conv1.")
        return gx + self.shortcut.backward(g, c3, grads, prefix + "shortcut.")

    def mirrored(self) -> "ResBlock":
        m = object.__new__(ResBlock)
        m.conv1 = self.conv1.mirrored()
        m.conv2 = self.conv2.mirrored()
        m.shortcut = self.shortcut.mirrored()
        m.out_channels = self.out_channels
        return m
