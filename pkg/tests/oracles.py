"""Independent brute-force references used as test oracles.

Everything here is written as plain nested loops in float64, deliberately
sharing no code with the production implementations it checks.
"""

from __future__ import annotations

import numpy as np


def pad_same(in_size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-in_size // stride)
    total = max((out - 1) * stride + k - in_size, 0)
    return total // 2, total - total // 2


def conv2d_loops(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None,
                 stride: tuple[int, int], padding: str) -> np.ndarray:
    """Six-loop cross-correlation; out-of-bounds taps contribute zero."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    sh, sw = stride
    if padding == "same":
        pt, _ = pad_same(h, kh, sh)
        pl, _ = pad_same(wd, kw, sw)
        ho, wo = -(-h // sh), -(-wd // sw)
    else:
        pt = pl = 0
        ho, wo = (h - kh) // sh + 1, (wd - kw) // sw + 1
    x64 = x.astype(np.float64)
    w64 = w.astype(np.float64)
    out = np.zeros((n, ho, wo, cout))
    for b in range(n):
        for y in range(ho):
            for xx in range(wo):
                for o in range(cout):
                    acc = 0.0
                    for dy in range(kh):
                        for dx in range(kw):
                            sy = y * sh + dy - pt
                            sx = xx * sw + dx - pl
                            if 0 <= sy < h and 0 <= sx < wd:
                                for c in range(cin):
                                    acc += x64[b, sy, sx, c] * w64[dy, dx, c, o]
                    out[b, y, xx, o] = acc + (float(bias[o]) if bias is not None else 0.0)
    return out


def depthwise_loops(x: np.ndarray, w: np.ndarray,
                    stride: tuple[int, int], padding: str) -> np.ndarray:
    """Per-channel loop convolution with the same padding rules."""
    n, h, wd, c = x.shape
    kh, kw, _ = w.shape
    sh, sw = stride
    if padding == "same":
        pt, _ = pad_same(h, kh, sh)
        pl, _ = pad_same(wd, kw, sw)
        ho, wo = -(-h // sh), -(-wd // sw)
    else:
        pt = pl = 0
        ho, wo = (h - kh) // sh + 1, (wd - kw) // sw + 1
    x64 = x.astype(np.float64)
    w64 = w.astype(np.float64)
    out = np.zeros((n, ho, wo, c))
    for b in range(n):
        for y in range(ho):
            for xx in range(wo):
                for ch in range(c):
                    acc = 0.0
                    for dy in range(kh):
                        for dx in range(kw):
                            sy = y * sh + dy - pt
                            sx = xx * sw + dx - pl
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc += x64[b, sy, sx, ch] * w64[dy, dx, ch]
                    out[b, y, xx, ch] = acc
    return out


def head_loss_f64(x: np.ndarray, w: np.ndarray, b: np.ndarray, y: np.ndarray,
                  clip: float = 1e-7) -> float:
    """float64 re-implementation of the head loss for finite differencing."""
    z = x.astype(np.float64) @ w.astype(np.float64) + b.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    p_true = (p * y).sum(axis=1)
    return float(-np.log(np.clip(p_true, clip, 1.0)).mean())


def fd_head_gradients(x: np.ndarray, w: np.ndarray, b: np.ndarray, y: np.ndarray,
                      h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of head_loss_f64 w.r.t. w and b."""
    w = w.astype(np.float64)
    b = b.astype(np.float64)
    dw = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        dw[idx] = (head_loss_f64(x, wp, b, y) - head_loss_f64(x, wm, b, y)) / (2 * h)
    db = np.zeros_like(b)
    for i in range(b.size):
        bp, bm = b.copy(), b.copy()
        bp[i] += h
        bm[i] -= h
        db[i] = (head_loss_f64(x, w, bp, y) - head_loss_f64(x, w, bm, y)) / (2 * h)
    return dw, db


def rotate90_cw(img: np.ndarray) -> np.ndarray:
    """Pixel permutation for an exact quarter-turn clockwise: out[i,j] = in[H-1-j, i]."""
    h, w = img.shape[:2]
    out = np.empty((w, h) + img.shape[2:], dtype=img.dtype)
    for i in range(w):
        for j in range(h):
            out[i, j] = img[h - 1 - j, i]
    return out


def bilinear_loops(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Reference resize: half-pixel centers, clamped, channels independent."""
    h, w = img.shape[:2]
    out = np.zeros((out_h, out_w, img.shape[2]))
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for c in range(img.shape[2]):
                top = img[y0, x0, c] * (1 - fx) + img[y0, x1, c] * fx
                bot = img[y1, x0, c] * (1 - fx) + img[y1, x1, c] * fx
                out[oy, ox, c] = top * (1 - fy) + bot * fy
    return out
