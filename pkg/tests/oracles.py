"""Loop-based reference implementations shared by the test modules."""

import math

import numpy as np

from hsipnp.degrade import Mask, Sensing, SuperRes


def naive_conv3d(x, w, b, stride, padding):
    """Nested loops over (out, in, d, h, w) plus the kernel taps."""
    C, D, H, W = x.shape
    O, _, kd, kh, kw = w.shape
    pd, ph, pw = padding
    sd, sh, sw = stride
    xp = np.zeros((C, D + 2 * pd, H + 2 * ph, W + 2 * pw))
    xp[:, pd : pd + D, ph : ph + H, pw : pw + W] = x
    Do = (D + 2 * pd - kd) // sd + 1
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((O, Do, Ho, Wo))
    for o in range(O):
        for d in range(Do):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(C):
                        for a in range(kd):
                            for p in range(kh):
                                for q in range(kw):
                                    acc += w[o, c, a, p, q] * xp[c, d * sd + a, i * sh + p, j * sw + q]
                    out[o, d, i, j] = acc
    return out


def naive_scatter_transposed(g, w, stride, padding, out_size):
    """Scatter each input voxel's kernel stamp into the (padded) output."""
    O, Dq, Hq, Wq = g.shape
    _, C, kd, kh, kw = w.shape
    pd, ph, pw = padding
    D, H, W = out_size
    out = np.zeros((C, D + 2 * pd, H + 2 * ph, W + 2 * pw))
    for o in range(O):
        for d in range(Dq):
            for i in range(Hq):
                for j in range(Wq):
                    d0, i0, j0 = d * stride[0], i * stride[1], j * stride[2]
                    out[:, d0 : d0 + kd, i0 : i0 + kh, j0 : j0 + kw] += g[o, d, i, j] * w[o]
    return out[:, pd : pd + D, ph : ph + H, pw : pw + W]


def naive_grconv(x, ww, bw, wf, bf, reverse=False):
    """Scalar gated band recurrence on top of looped convolutions.

    ``x`` is ``(C, B, M, N)``; returns ``(O, B, M, N)``.
    """
    pre_w = naive_conv3d(x, ww, bw, (1, 1, 1), (ww.shape[2] // 2,) * 3)
    pre_f = naive_conv3d(x, wf, bf, (1, 1, 1), (wf.shape[2] // 2,) * 3)
    O, B, M, N = pre_w.shape
    out = np.zeros_like(pre_w)
    order = range(B - 1, -1, -1) if reverse else range(B)
    for o in range(O):
        for m in range(M):
            for n in range(N):
                h = 0.0
                for i in order:
                    w = 1.0 / (1.0 + np.exp(-pre_w[o, i, m, n]))
                    f = np.tanh(pre_f[o, i, m, n])
                    h = (1.0 - w) * h + w * f
                    out[o, i, m, n] = h
    return out


def finite_difference_worst(model, noisy, sigma, grad_output, step=1e-4, floor=1e-7, names=None):
    """Worst per-parameter relative error of ``model_backward`` vs central differences.

    The objective is ``<model_forward(noisy), grad_output>``. Relative error is
    ``|a - n| / max(|a|, |n|, floor)`` so exactly-zero gradients do not divide by 0.
    """
    from hsipnp.grcnn import model_backward, model_forward

    analytic = model_backward(model, noisy, sigma, grad_output)
    params = dict(model.named_parameters())
    worst, count = 0.0, 0
    for name in names or params:
        p = params[name]
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = float(np.sum(model_forward(model, noisy, sigma) * grad_output))
            flat[i] = old - step
            fm = float(np.sum(model_forward(model, noisy, sigma) * grad_output))
            flat[i] = old
            num = (fp - fm) / (2 * step)
            a = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
            count += 1
    model.touch()
    return worst, count


def randomize(model, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    model.load_state_dict(
        {k: rng.uniform(-scale, scale, v.shape).astype(v.dtype) for k, v in model.named_parameters()}
    )
    return model


def sr_dense(blur, factor, shape):
    """Row-by-row matrix of circular blur (kernel centred at k//2) then decimation."""
    B, M, N = shape
    kh, kw = blur.shape
    ch, cw = kh // 2, kw // 2
    m, n = M // factor, N // factor
    D = np.zeros((B * m * n, B * M * N))
    for b in range(B):
        for i in range(m):
            for j in range(n):
                row = (b * m + i) * n + j
                r, c = i * factor, j * factor
                for p in range(kh):
                    for q in range(kw):
                        rr = (r - (p - ch)) % M
                        cc = (c - (q - cw)) % N
                        D[row, (b * M + rr) * N + cc] += blur[p, q]
    return D


def random_op(kind, rng):
    if kind == "sr":
        f = int(rng.integers(1, 4))
        shape = (int(rng.integers(1, 4)), f * int(rng.integers(1, 4)), f * int(rng.integers(1, 4)))
        k = rng.random((int(rng.integers(1, shape[1] + 1)), int(rng.integers(1, shape[2] + 1))))
        return SuperRes(k / k.sum(), f), shape
    shape = (int(rng.integers(1, 5)), int(rng.integers(1, 7)), int(rng.integers(1, 7)))
    if kind == "cs":
        masks = rng.random(shape)
        shifts = rng.integers(-3, 4, size=(shape[0], 2))
        return Sensing(masks, shifts), shape
    return Mask((rng.random(shape) < 0.5).astype(float)), shape


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def sr_instance(rng):
    B = int(rng.integers(1, 3))
    M, N = 2 * int(rng.integers(1, 5)), 2 * int(rng.integers(1, 5))
    k = rng.random((int(rng.integers(1, min(M, 4) + 1)), int(rng.integers(1, min(N, 4) + 1))))
    op = SuperRes(k / k.sum(), 2)
    x_t = rng.standard_normal((B, M, N))
    y = rng.standard_normal(op.observed_shape(x_t.shape))
    return op, y, x_t


def cs_instance(rng):
    B, M, N = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    op = Sensing.cassi(M, N, B, seed=int(rng.integers(1 << 30)))
    x_t = rng.standard_normal((B, M, N))
    return op, rng.standard_normal((1, M, N)), x_t


def inpaint_instance(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))
    op = Mask((rng.random(shape) < 0.5).astype(float))
    return op, rng.standard_normal(shape), rng.standard_normal(shape)


def naive_psnr(gt, pred):
    vals = []
    for b in range(gt.shape[0]):
        acc = 0.0
        for v in (gt[b] - pred[b]).ravel():
            acc += v * v
        mse = acc / gt[b].size
        vals.append(min(100.0, 10 * math.log10(1.0 / mse)) if mse > 0 else 100.0)
    return sum(vals) / len(vals)


def naive_ssim(gt, pred, size=11, sigma=1.5):
    w = [[math.exp(-((i - 5) ** 2 + (j - 5) ** 2) / (2 * sigma**2)) for j in range(size)] for i in range(size)]
    tot = sum(map(sum, w))
    w = [[v / tot for v in row] for row in w]
    c1, c2 = 0.01**2, 0.03**2
    per_band = []
    for b in range(gt.shape[0]):
        x, y = gt[b], pred[b]
        vals = []
        for r in range(x.shape[0] - size + 1):
            for c in range(x.shape[1] - size + 1):
                mx = my = sxx = syy = sxy = 0.0
                for i in range(size):
                    for j in range(size):
                        a, bb, wt = x[r + i, c + j], y[r + i, c + j], w[i][j]
                        mx += wt * a
                        my += wt * bb
                        sxx += wt * a * a
                        syy += wt * bb * bb
                        sxy += wt * a * bb
                sxx -= mx * mx
                syy -= my * my
                sxy -= mx * my
                vals.append(((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
        per_band.append(sum(vals) / len(vals))
    return sum(per_band) / len(per_band)


def naive_sam(gt, pred):
    angles = []
    for i in range(gt.shape[1]):
        for j in range(gt.shape[2]):
            g, p = gt[:, i, j], pred[:, i, j]
            dot = sum(a * b for a, b in zip(g, p))
            ng = math.sqrt(sum(a * a for a in g))
            npr = math.sqrt(sum(b * b for b in p))
            angles.append(math.acos(max(-1.0, min(1.0, dot / (ng * npr)))))
    return sum(angles) / len(angles)
