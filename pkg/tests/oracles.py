"""Independent reference implementations used as test oracles.

Written with plain loops and scalar arithmetic so they share no code path
with the vectorised package functions they check.
"""

from __future__ import annotations

import math
import struct


def reflect(i: int, n: int) -> int:
    """Reflect an out-of-range index without repeating the edge sample."""
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * (n - 1) - i
    return i


def window_values(img, r: int, c: int, radius: int = 1):
    """Samples of a 2-D nested list/array in the (2*radius+1)^2 window at (r, c)."""
    h, w = len(img), len(img[0])
    out = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            out.append(float(img[reflect(r + dr, h)][reflect(c + dc, w)]))
    return out


def patch_stats(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    vx = sum((a - mx) ** 2 for a in xs) / n
    vy = sum((b - my) ** 2 for b in ys) / n
    cxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / n
    return mx, my, vx, vy, cxy


def scalar_ssim(xs, ys, L=1.0, M1=0.01, M2=0.03, k=1.0):
    """SSIM of one window; with k > 1 the statistics of k*I are used with
    the constants of the original range."""
    C1, C2 = (M1 * L) ** 2, (M2 * L) ** 2
    mx, my, vx, vy, cxy = patch_stats([k * a for a in xs], [k * b for b in ys])
    lum = (2 * mx * my + C1) / (mx * mx + my * my + C1)
    cs = (2 * cxy + C2) / (vx + vy + C2)
    return lum * cs


def ssim_map_loops(x, y, L=1.0, k=1.0, radius=1):
    """Per-pixel SSIM of two 2-D arrays by explicit windows."""
    h, w = len(x), len(x[0])
    return [[scalar_ssim(window_values(x, r, c, radius), window_values(y, r, c, radius), L, k=k)
             for c in range(w)] for r in range(h)]


def lower_median(values):
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def depth_metrics_loops(pred, gt, median_scale=True, cap=10.0):
    """Abs Rel, Log10, RMS and delta accuracies with plain loops."""
    pairs = []
    for prow, grow in zip(pred, gt):
        for p, g in zip(prow, grow):
            if g > 0 and g <= cap and p > 0:
                pairs.append((float(p), float(g)))
    if median_scale:
        s_pred = lower_median([p for p, _ in pairs])
        s_gt = lower_median([g for _, g in pairs])
        pairs = [(p / s_pred * s_gt, g) for p, g in pairs]
    pairs = [(min(p, cap), g) for p, g in pairs]
    n = len(pairs)
    abs_rel = sum(abs(p - g) / g for p, g in pairs) / n
    log10 = sum(abs(math.log10(p) - math.log10(g)) for p, g in pairs) / n
    rms = math.sqrt(sum((p - g) ** 2 for p, g in pairs) / n)
    acc = []
    for t in (1.25, 1.25**2, 1.25**3):
        acc.append(sum(1 for p, g in pairs if max(p / g, g / p) < t) / n)
    return abs_rel, log10, rms, acc[0], acc[1], acc[2], n


def pfm_bytes(rows, channels=1, little_endian=True, scale=1.0, header_extra=b""):
    """Hand-built PFM. ``rows`` is top-to-bottom; PFM stores bottom-to-top."""
    h, w = len(rows), len(rows[0]) // channels
    magic = b"PF" if channels == 3 else b"Pf"
    s = -abs(scale) if little_endian else abs(scale)
    head = magic + b"\n" + f"{w} {h}\n".encode() + header_extra + f"{s}\n".encode()
    fmt = ("<" if little_endian else ">") + "f" * (w * channels)
    body = b"".join(struct.pack(fmt, *row) for row in reversed(rows))
    return head + body


def plane_depth(normal, d, fx, fy, cx, cy, u, v):
    """Depth Z of the plane n . X = d seen through pixel (u, v)."""
    ray = ((u - cx) / fx, (v - cy) / fy, 1.0)
    return d / sum(a * b for a, b in zip(normal, ray))
