"""Encoder-decoder GRCNN denoiser.

Layout (depth ``L = len(widths) - 1``)::

    entry  : bidirectional GRConv, input -> widths[0] (stacked directions)
    enc[i] : down GRConv (stride 1x2x2) widths[i] -> widths[i],
             ResBlock widths[i] -> widths[i+1]
    dec[i] : up GRConv (transposed, stride 1x2x2) widths[i+1] -> widths[i],
             concat with the encoder input at level i,
             ResBlock 2*widths[i] -> widths[i]
    exit   : bidirectional GRConv, widths[0] -> 1 (directions summed)
    output : depends on ``residual``
             "none"  -> exit
             "input" -> noisy + exit
             "noise" -> noisy + (2 sigma / 255) * exit   (needs the noise map)
             default: "noise" with a noise map, "input" without

Encoder level ``i`` runs forward for even ``i`` and backward for odd ``i``;
the decoder level ``i`` reuses the encoder's direction. With a noise-level
map the input has one extra constant channel holding ``sigma / 255``.
"""

from __future__ import annotations

import warnings
from typing import Iterator

import numpy as np

from ..tensor import DimensionMismatchError
from .layers import BACKWARD, FORWARD, GRConv, ResBlock

DOWN_STRIDE = (1, 2, 2)
RESIDUAL_MODES = ("none", "input", "noise")


class StaleCacheError(RuntimeError):
    """``backward`` called without a matching forward pass."""


class GrcnnModel:
    def __init__(
        self,
        widths=(8, 16, 32),
        noise_map: bool = True,
        seed: int = 0,
        dtype=np.float64,
        flip_directions: bool = False,
        residual: str | bool | None = None,
    ):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 1 or any(w < 1 for w in widths):
            raise ValueError("widths must be positive")
        if widths[0] % 2:
            raise ValueError("widths[0] must be even (two stacked directions)")
        self.widths = widths
        self.noise_map = bool(noise_map)
        self.flip_directions = bool(flip_directions)
        if residual is None:
            residual = "noise" if noise_map else "input"
        elif residual is True:
            residual = "input"
        elif residual is False:
            residual = "none"
        if residual not in RESIDUAL_MODES:
            raise ValueError(f"residual must be one of {RESIDUAL_MODES}, got {residual!r}")
        if residual == "noise" and not noise_map:
            raise ValueError("noise-scaled residual needs the noise-level map")
        self.residual = residual
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        in_ch = 2 if noise_map else 1
        first = BACKWARD if flip_directions else FORWARD
        self.entry = GRConv(in_ch, widths[0] // 2, 3, direction=first, bidirectional=True,
                            rng=rng, dtype=dtype)
        self.encoder = []
        for i in range(self.depth):
            d = self.level_direction(i)
            down = GRConv(widths[i], widths[i], 3, stride=DOWN_STRIDE, direction=d, rng=rng, dtype=dtype)
            res = ResBlock(widths[i], widths[i + 1], direction=d, rng=rng, dtype=dtype)
            self.encoder.append((down, res))
        self.decoder = []
        for i in reversed(range(self.depth)):
            d = self.level_direction(i)
            up = GRConv(widths[i + 1], widths[i], 3, stride=DOWN_STRIDE, direction=d,
                        transposed=True, rng=rng, dtype=dtype)
            res = ResBlock(2 * widths[i], widths[i], direction=d, rng=rng, dtype=dtype)
            self.decoder.append((up, res))
        self.exit = GRConv(widths[0], 1, 3, direction=first, bidirectional=True, merge="sum",
                           rng=rng, dtype=dtype)
        if self.residual != "none":
            # start from the identity map; training learns the correction
            for v in self.exit.params.values():
                v[...] = 0
        self.version = 0
        self._cache = None

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def level_direction(self, level: int) -> str:
        fwd = (level % 2 == 0) != self.flip_directions
        return FORWARD if fwd else BACKWARD

    def descriptor(self) -> dict:
        return {
            "arch": "grcnn",
            "widths": list(self.widths),
            "noise_map": self.noise_map,
            "flip_directions": self.flip_directions,
            "residual": self.residual,
            "down_stride": list(DOWN_STRIDE),
            "ksize": 3,
        }

    # ---------------------------------------------------------- parameters

    def _units(self) -> Iterator[tuple[str, GRConv]]:
        yield "entry.", self.entry
        for i, (down, res) in enumerate(self.encoder):
            yield f"enc{i}.down.", down
            for n, u in res.units():
                yield f"enc{i}.res.{n}.", u
        for j, (up, res) in enumerate(self.decoder):
            yield f"dec{j}.up.", up
            for n, u in res.units():
                yield f"dec{j}.res.{n}.", u
        yield "exit.", self.exit

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Parameters in declaration order; the arrays are the live storage."""
        for prefix, unit in self._units():
            for k, v in unit.params.items():
                yield prefix + k, v

    def num_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        names = dict(self.named_parameters())
        if set(names) != set(state):
            raise KeyError("parameter names do not match the architecture")
        for k, v in names.items():
            if state[k].shape != v.shape:
                raise DimensionMismatchError(f"{k}: shape {state[k].shape} != {v.shape}")
            v[...] = state[k]
        self.touch()

    def touch(self):
        """Mark parameters as modified; invalidates cached activations."""
        self.version += 1
        self._cache = None

    def astype(self, dtype) -> "GrcnnModel":
        m = GrcnnModel(self.widths, self.noise_map, dtype=dtype, flip_directions=self.flip_directions,
                       residual=self.residual)
        m.load_state_dict({k: v.astype(dtype) for k, v in self.named_parameters()})
        return m

    def mirrored(self) -> "GrcnnModel":
        """Model whose output on band-reversed input is the band-reversed output of ``self``."""
        m = GrcnnModel(self.widths, self.noise_map, dtype=self.dtype,
                       flip_directions=not self.flip_directions, residual=self.residual)
        flipped = {k: (np.flip(v, axis=2).copy() if v.ndim == 5 else v.copy())
                   for k, v in self.named_parameters()}
        m.load_state_dict(flipped)
        return m

    # ------------------------------------------------------------- forward

    def _input(self, x: np.ndarray, sigma) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 5 or x.shape[1] != 1:
            raise DimensionMismatchError(f"expected (S, 1, B, M, N) batch, got {x.shape}")
        step = 2**self.depth
        if x.shape[3] % step or x.shape[4] % step:
            raise DimensionMismatchError(
                f"spatial size {x.shape[3]}x{x.shape[4]} not divisible by {step}"
            )
        if self.noise_map:
            if sigma is None:
                raise ValueError("model expects a noise-level map (sigma)")
            s = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
            if np.any(s < 0):
                raise ValueError("noise level must be non-negative")
            level = (s / 255.0).astype(self.dtype).reshape(-1, 1, 1, 1, 1)
            nmap = np.broadcast_to(level, x.shape)
            return np.concatenate([x, nmap], axis=1)
        if sigma is not None:
            raise ValueError("model was built without a noise-level map")
        return x

    def forward(self, x: np.ndarray, sigma=None, keep_cache: bool = False) -> np.ndarray:
        """Batched forward pass ``(S, 1, B, M, N) -> (S, 1, B, M, N)``."""
        inp = self._input(x, sigma)
        caches = {}
        h, caches["entry"] = self.entry.forward(inp)
        skips = []
        for i, (down, res) in enumerate(self.encoder):
            skips.append(h)
            h, caches[f"enc{i}.down"] = down.forward(h)
            h, caches[f"enc{i}.res"] = res.forward(h)
        for j, (up, res) in enumerate(self.decoder):
            skip = skips[self.depth - 1 - j]
            h, caches[f"dec{j}.up"] = up.forward(h, out_size=skip.shape[2:])
            h = np.concatenate([h, skip], axis=1)
            h, caches[f"dec{j}.res"] = res.forward(h)
        out, caches["exit"] = self.exit.forward(h)
        scale = None
        if self.residual == "noise":
            scale = 2.0 * inp[:, 1:2, :1, :1, :1]
            out = inp[:, :1] + scale * out
        elif self.residual == "input":
            out = out + inp[:, :1]
        caches["scale"] = scale
        self._cache = (self.version, caches) if keep_cache else None
        return out

    def backward(self, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the most recent ``forward(..., keep_cache=True)``."""
        if self._cache is None or self._cache[0] != self.version:
            raise StaleCacheError("no cached forward pass for the current parameters")
        _, caches = self._cache
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(grad_out, dtype=self.dtype)
        if caches["scale"] is not None:
            g = g * caches["scale"]
        g = self.exit.backward(g, caches["exit"], grads, "exit.")
        skip_grads = [None] * self.depth
        for j in reversed(range(self.depth)):
            up, res = self.decoder[j]
            level = self.depth - 1 - j
            g = res.backward(g, caches[f"dec{j}.res"], grads, f"dec{j}.res.")
            w = self.widths[level]
            skip_grads[level] = g[:, w:]
            g = up.backward(g[:, :w], caches[f"dec{j}.up"], grads, f"dec{j}.up.")
        for i in reversed(range(self.depth)):
            down, res = self.encoder[i]
            g = res.backward(g, caches[f"enc{i}.res"], grads, f"enc{i}.res.")
            g = down.backward(g, caches[f"enc{i}.down"], grads, f"enc{i}.down.")
            g = g + skip_grads[i]
        self.entry.backward(g, caches["entry"], grads, "entry.")
        return {k: grads[k] for k, _ in self.named_parameters()}


# -------------------------------------------------------------- cube-level API


def _cube_batch(cube) -> np.ndarray:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DimensionMismatchError(f"expected a (B, M, N) cube, got {cube.shape}")
    return cube[None, None]


def model_forward(model: GrcnnModel, noisy, sigma=None) -> np.ndarray:
    """Denoise one ``(B, M, N)`` cube; ``sigma`` (0-255) is required iff the model uses a noise map."""
    out = model.forward(_cube_batch(noisy), sigma)
    return np.asarray(out[0, 0], dtype=np.float64)


def model_backward(model: GrcnnModel, noisy, sigma, grad_output) -> dict[str, np.ndarray]:
    """Gradients of ``<model_forward(noisy), grad_output>`` for every kernel and bias."""
    model.forward(_cube_batch(noisy), sigma, keep_cache=True)
    return model.backward(_cube_batch(grad_output))


def denoise(model: GrcnnModel, noisy, sigma: float) -> np.ndarray:
    """Convenience denoiser ``D_sigma``; the noise map is dropped for map-less models."""
    return model_forward(model, noisy, sigma if model.noise_map else None)


class GrcnnDenoiser:
    """Adapter exposing a model as the ``(cube, sigma) -> cube`` plug-in prior.

    Requested levels outside ``sigma_range`` are clamped (with one warning per
    distinct level). Planes not divisible by ``2**depth`` are reflect-padded
    and cropped back.
    """

    def __init__(self, model: GrcnnModel, sigma_range=(0.0, 50.0)):
        self.model = model
        self.sigma_range = tuple(float(s) for s in sigma_range)
        self._warned: set[float] = set()

    def __call__(self, cube, sigma: float) -> np.ndarray:
        lo, hi = self.sigma_range
        s = float(sigma)
        if not lo <= s <= hi:
            if s not in self._warned:
                warnings.warn(f"noise level {s:.3g} outside trained range [{lo}, {hi}]; clamped",
                              RuntimeWarning, stacklevel=2)
                self._warned.add(s)
            s = min(max(s, lo), hi)
        cube = np.asarray(cube, dtype=np.float64)
        step = 2**self.model.depth
        _, M, N = cube.shape
        pm, pn = (-M) % step, (-N) % step
        if pm or pn:
            padded = np.pad(cube, ((0, 0), (0, pm), (0, pn)), mode="reflect")
            return denoise(self.model, padded, s)[:, :M, :N]
        return denoise(self.model, cube, s)
