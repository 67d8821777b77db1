"""Independent brute-force reference implementations used as test oracles.

These deliberately share no code with the library: plain loops and direct
formulas only.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x, w, b, stride=1, padding=0, dilation=1):
    n, c, h, wid = x.shape
    k, _, kh, kw = w.shape
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wid + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, k, oh, ow))
    for ni in range(n):
        for ki in range(k):
            for oi in range(oh):
                for oj in range(ow):
                    acc = b[ki]
                    for ci in range(c):
                        for ii in range(kh):
                            for jj in range(kw):
                                yi = oi * stride - padding + ii * dilation
                                xj = oj * stride - padding + jj * dilation
                                if 0 <= yi < h and 0 <= xj < wid:
                                    acc += w[ki, ci, ii, jj] * x[ni, ci, yi, xj]
                    out[ni, ki, oi, oj] = acc
    return out


def matmul_naive(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def bilinear_naive(x, out_h, out_w):
    """Pixel-center source mapping, clamped at 0 (align-corners=false)."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for oi in range(out_h):
        sy = max((oi + 0.5) * h / out_h - 0.5, 0.0)
        y0 = min(int(math.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for oj in range(out_w):
            sx = max((oj + 0.5) * w / out_w - 0.5, 0.0)
            x0 = min(int(math.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ni in range(n):
                for ci in range(c):
                    top = (1 - fx) * x[ni, ci, y0, x0] + fx * x[ni, ci, y0, x1]
                    bot = (1 - fx) * x[ni, ci, y1, x0] + fx * x[ni, ci, y1, x1]
                    out[ni, ci, oi, oj] = (1 - fy) * top + fy * bot
    return out


def masked_average_pool_naive(features, mask):
    c, h, w = features.shape
    total = 0.0
    vec = np.zeros(c)
    for i in range(h):
        for j in range(w):
            if mask[0, i, j] != 0:
                total += 1
                for ci in range(c):
                    vec[ci] += features[ci, i, j]
    return vec / max(total, 1.0)


def single_head_attention_naive(q, keys, values, scale):
    """One query row against token rows; returns the attended vector."""
    logits = [scale * sum(q[t] * keys[i, t] for t in range(len(q))) for i in range(keys.shape[0])]
    mx = max(logits)
    exps = [math.exp(v - mx) for v in logits]
    z = sum(exps)
    weights = [e / z for e in exps]
    out = np.zeros(values.shape[1])
    for i, wgt in enumerate(weights):
        out += wgt * values[i]
    return out


def confusion_counts(pred, gt):
    tp = fp = fn = tn = 0
    for pi, gi in zip(np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)):
        p, g = pi != 0, gi != 0
        tp += p and g
        fp += p and not g
        fn += (not p) and g
        tn += (not p) and (not g)
    return tp, fp, fn, tn


def miou_naive(episode_results):
    classes = {}
    for cid, value in episode_results:
        classes.setdefault(cid, []).append(value)
    per = {c: sum(v) / len(v) for c, v in classes.items()}
    return sum(per.values()) / len(per)


def fb_iou_naive(pairs):
    tp = fp = fn = tn = 0
    for pred, gt in pairs:
        a, b, c, d = confusion_counts(pred, gt)
        tp += a
        fp += b
        fn += c
        tn += d
    fg = tp / (tp + fp + fn) if (tp + fp + fn) else 1.0
    bg = tn / (tn + fp + fn) if (tn + fp + fn) else 1.0
    return (fg + bg) / 2
