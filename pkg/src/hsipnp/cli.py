"""Command-line entry point: simulate, restore, report, export, train-toy.

Every command is deterministic given ``--seed``. Failures exit non-zero and
print a JSON object ``{"error": <code>, "message": <text>}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import warnings

import numpy as np

from . import admm, metrics
from .cubefile import CubeFileError, read_cube, write_cube
from .degrade import (
    Impulse,
    IidGaussian,
    Mask,
    NonIid,
    Sensing,
    Stripe,
    SuperRes,
    add_noise,
    gaussian_kernel,
)
from .tensor import DimensionMismatchError

TASKS = ("denoise", "sr", "cs", "inpaint")
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_RUNTIME = 5


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        code = "unknown_task" if "--task" in message else "usage"
        raise CliError(code, message, EXIT_USAGE)


def _atomic_write_bytes(path: str, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: str, text: str):
    _atomic_write_bytes(path, text.encode("utf-8"))


def _load(path: str | None, what: str) -> np.ndarray:
    if path is None:
        raise CliError("missing_argument", f"--{what} is required")
    if not os.path.exists(path):
        raise CliError("missing_file", f"{what} file not found: {path}", EXIT_IO)
    return read_cube(path).astype(np.float64)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(","))


# ------------------------------------------------------------ operators


def _build_operator(args, shape, mask_cube=None):
    """Operator for ``args.task`` acting on clean cubes of ``shape``."""
    B, M, N = shape
    if args.task == "sr":
        return SuperRes(gaussian_kernel(args.blur_size, args.blur_sigma), args.factor)
    if args.task == "inpaint":
        if mask_cube is not None:
            return Mask(mask_cube)
        return Mask.random(shape, args.missing, seed=args.seed)
    if args.task == "cs":
        if mask_cube is not None:
            return Sensing(mask_cube, np.stack([np.zeros(B, int), np.arange(B)], axis=1))
        return Sensing.cassi(M, N, B, seed=args.seed)
    return None


def _noise_models(kind: str, sigma: float):
    if kind == "gaussian":
        return [IidGaussian(sigma)]
    if kind == "noniid":
        return [NonIid(sigma)]
    if kind == "g+stripe":
        return [NonIid(sigma), Stripe()]
    if kind == "g+impulse":
        return [NonIid(sigma), Impulse()]
    raise CliError("invalid_argument", f"unknown noise kind {kind!r}")


# -------------------------------------------------------------- commands


def cmd_simulate(args) -> dict:
    clean = _load(args.input, "input")
    mask_cube = _load(args.mask, "mask") if args.mask else None
    op = _build_operator(args, clean.shape, mask_cube)
    obs = clean if op is None else op.apply(clean)
    if args.noise > 0:
        obs = add_noise(obs, _noise_models(args.noise_kind, args.noise), seed=args.seed)
    if args.task == "sr":
        obs = np.clip(obs, 0.0, 1.0)
    write_cube(obs, args.out)
    if args.gt_out:
        write_cube(clean, args.gt_out)
    if args.mask_out and isinstance(op, Mask):
        write_cube(op.mask, args.mask_out)
    if args.mask_out and isinstance(op, Sensing):
        write_cube(op.masks, args.mask_out)
    return {"observation": args.out, "shape": list(obs.shape)}


def _denoiser(args):
    if args.denoiser == "identity":
        return admm.identity_denoiser
    if args.denoiser == "box":
        return admm.box_denoiser(3)
    if not args.model:
        raise CliError("missing_argument", "--model is required for the grcnn denoiser")
    if not os.path.exists(args.model):
        raise CliError("missing_file", f"model file not found: {args.model}", EXIT_IO)
    from .grcnn.checkpoint import load
    from .grcnn.model import GrcnnDenoiser

    return GrcnnDenoiser(load(args.model))


def cmd_restore(args) -> dict:
    y = _load(args.input, "input")
    gt = _load(args.gt, "gt") if args.gt else None
    den = _denoiser(args)
    if args.task == "denoise":
        out = den(y, args.noise)
        write_cube(out, args.out)
        res = {"output": args.out}
        if gt is not None:
            res["psnr"] = metrics.psnr(gt, out)
        return res
    mask_cube = _load(args.mask, "mask") if args.mask else None
    if args.task == "inpaint" and mask_cube is None:
        raise CliError("missing_argument", "--mask is required to restore an inpainting task")
    if args.task == "sr":
        shape = (y.shape[0], y.shape[1] * args.factor, y.shape[2] * args.factor)
    elif args.task == "cs":
        if mask_cube is None:
            if args.bands is None:
                raise CliError("missing_argument", "cs restore needs --mask or --bands")
            shape = (args.bands, y.shape[1], y.shape[2])
        else:
            shape = mask_cube.shape
    else:
        shape = y.shape
    op = _build_operator(args, shape, mask_cube)
    iters = args.iters if args.iters is not None else admm.DEFAULT_ITERS[args.task]
    sched = admm.make_schedule(args.sigma1, args.sigma2, iters, args.lam)
    result = admm.run(op, y, den, sched, gt=gt)
    write_cube(result.output, args.out)
    if args.trace:
        _atomic_write_text(args.trace, admm.write_trace_csv(result.trace))
    res = {"output": args.out, "iterations": iters}
    if gt is not None:
        res["psnr_init"] = metrics.psnr(gt, result.init)
        res["psnr"] = metrics.psnr(gt, result.output)
    return res


def cmd_report(args) -> dict:
    gt = _load(args.gt, "gt")
    pred = _load(args.input, "input")
    if gt.shape != pred.shape:
        raise CliError("dimension_mismatch", f"gt {gt.shape} vs prediction {pred.shape}", EXIT_DATA)
    rep = metrics.report(gt, pred)
    d = rep.as_dict()
    if args.out:
        if args.out.endswith(".csv"):
            lines = ["band,psnr,ssim"]
            lines += [f"{b},{p!r},{s!r}" for b, (p, s) in enumerate(zip(rep.psnr_per_band, rep.ssim_per_band))]
            lines.append(f"mean,{rep.psnr!r},{rep.ssim!r}")
            lines.append(f"sam,{rep.sam!r},")
            _atomic_write_text(args.out, "\n".join(lines) + "\n")
        else:
            _atomic_write_text(args.out, json.dumps(d, indent=2) + "\n")
    return {"psnr": rep.psnr, "ssim": rep.ssim, "sam": rep.sam}


def _png_bytes(img: np.ndarray) -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def to_uint8(plane: np.ndarray, gain: float = 1.0) -> np.ndarray:
    """Linear map ``[0, 1] -> [0, 255]`` after scaling by ``gain``, with clamping."""
    return np.round(np.clip(plane * gain, 0.0, 1.0) * 255.0).astype(np.uint8)


def _band(cube, band):
    if not 0 <= band < cube.shape[0]:
        raise CliError("invalid_argument", f"band {band} out of range [0, {cube.shape[0]})", EXIT_DATA)
    return cube[band]


def export_png(cube, band: int, path: str):
    _atomic_write_bytes(path, _png_bytes(to_uint8(_band(cube, band))))


def export_error_map(gt, pred, band: int, path: str, gain: float = 5.0):
    if gt.shape != pred.shape:
        raise CliError("dimension_mismatch", "gt and prediction shapes differ", EXIT_DATA)
    err = np.abs(_band(gt, band) - _band(pred, band))
    _atomic_write_bytes(path, _png_bytes(to_uint8(err, gain)))


def cmd_export_png(args) -> dict:
    export_png(_load(args.input, "input"), args.band, args.out)
    return {"png": args.out}


def cmd_export_error_map(args) -> dict:
    export_error_map(_load(args.gt, "gt"), _load(args.input, "input"), args.band, args.out, args.gain)
    return {"png": args.out}


def cmd_train_toy(args) -> dict:
    from .grcnn.checkpoint import save
    from .grcnn.train import toy_config, train_toy

    cfg = toy_config(
        lr=args.lr,
        lr_decay=args.lr_decay,
        epochs_fixed=args.epochs_fixed,
        epochs_random=args.epochs_random,
        batch_size=args.batch,
        patch_size=_ints(args.patch),
        complex_noise=args.no_noise_map,
        seed=args.seed,
    )
    result = train_toy(_ints(args.widths), _ints(args.cube), args.count,
                       noise_map=not args.no_noise_map, seed=args.seed, cfg=cfg)
    model = result.model
    save(model, args.out)
    if args.loss_csv:
        text = "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.losses))
        _atomic_write_text(args.loss_csv, text)
    return {"model": args.out, "final_epoch_loss": result.epoch_losses[-1],
            "parameters": model.num_parameters()}


# ---------------------------------------------------------------- parser


def _add_operator_flags(p):
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--mask", help="HSC1 mask cube (inpaint: 0/1 cube; cs: per-band apertures)")
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--blur-sigma", type=float, default=3.0)
    p.add_argument("--blur-size", type=int, default=8)
    p.add_argument("--missing", type=float, default=0.5, help="missing fraction for random masks")
    p.add_argument("--noise", type=float, default=0.0, help="noise level on the 0-255 scale")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hsipnp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="degrade a clean cube")
    _add_operator_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out")
    p.add_argument("--mask-out")
    p.add_argument("--noise-kind", default="gaussian", choices=("gaussian", "noniid", "g+stripe", "g+impulse"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("restore", help="run PnP-ADMM (or plain denoising)")
    _add_operator_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt")
    p.add_argument("--bands", type=int, help="band count for cs when no --mask is given")
    p.add_argument("--sigma1", type=float, default=50.0)
    p.add_argument("--sigma2", type=float, default=5.0)
    p.add_argument("--iters", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=1.5)
    p.add_argument("--model")
    p.add_argument("--denoiser", default="grcnn", choices=("grcnn", "identity", "box"))
    p.add_argument("--trace")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("report", help="PSNR / SSIM / SAM")
    p.add_argument("--gt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="write .json or .csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-png", help="8-bit grayscale band image")
    p.add_argument("--input", required=True)
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_png)

    p = sub.add_parser("export-error-map", help="absolute error map of one band")
    p.add_argument("--gt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--gain", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_error_map)

    p = sub.add_parser("train-toy", help="train the GRCNN denoiser on synthetic cubes")
    p.add_argument("--out", required=True)
    p.add_argument("--widths", default="8,16,32")
    p.add_argument("--cube", default="8,32,32", help="synthetic cube size B,M,N")
    p.add_argument("--patch", default="8,16,16", help="training patch size B,M,N")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--epochs-fixed", type=int, default=3)
    p.add_argument("--epochs-random", type=int, default=15)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--lr-decay", type=float, default=0.95)
    p.add_argument("--no-noise-map", action="store_true")
    p.add_argument("--loss-csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_toy)
    return parser


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as e:
        return _fail(e.code, str(e), e.status)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            result = args.func(args)
    except CliError as e:
        return _fail(e.code, str(e), e.status)
    except CubeFileError as e:
        return _fail(e.code, str(e), EXIT_IO)
    except FileNotFoundError as e:
        return _fail("missing_file", str(e), EXIT_IO)
    except DimensionMismatchError as e:
        return _fail("dimension_mismatch", str(e), EXIT_DATA)
    except (ValueError, TypeError) as e:
        return _fail("invalid_argument", str(e), EXIT_DATA)
    except FloatingPointError as e:
        return _fail("numerical_failure", str(e), EXIT_RUNTIME)
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
