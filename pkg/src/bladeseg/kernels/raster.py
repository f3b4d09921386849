"""Z-buffered flat-colour triangle fill.

Coverage rule: a pixel centre (j + 0.5, i + 0.5) is inside when all three
edge functions are positive, or zero on a top or left edge (y grows
downward).  Depth is interpolated as 1/z linearly in screen space.  Depth
ties keep the earlier triangle.
"""

import math

import numpy as np

from .._jit import USE_NUMBA, njit


@njit
def _is_top_left(ax, ay, bx, by):
    dy = by - ay
    return (dy == 0.0 and bx - ax > 0.0) or dy < 0.0


@njit
def rasterize_triangles_numba(sx, sy, inv_z, colors, labels, rgb, mask, depth):
    height, width = depth.shape
    for t in range(sx.shape[0]):
        x0, y0 = sx[t, 0], sy[t, 0]
        x1, y1 = sx[t, 1], sy[t, 1]
        x2, y2 = sx[t, 2], sy[t, 2]
        z0, z1, z2 = inv_z[t, 0], inv_z[t, 1], inv_z[t, 2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if not (area != 0.0 and math.isfinite(area)):
            continue
        if area < 0.0:
            x1, y1, x2, y2 = x2, y2, x1, y1
            z1, z2 = z2, z1
            area = -area
        tl0 = _is_top_left(x1, y1, x2, y2)
        tl1 = _is_top_left(x2, y2, x0, y0)
        tl2 = _is_top_left(x0, y0, x1, y1)
        j_lo = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        j_hi = min(width - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        i_lo = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        i_hi = min(height - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        for i in range(i_lo, i_hi + 1):
            py = i + 0.5
            for j in range(j_lo, j_hi + 1):
                px = j + 0.5
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                if w0 < 0.0 or (w0 == 0.0 and not tl0):
                    continue
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                if w1 < 0.0 or (w1 == 0.0 and not tl1):
                    continue
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if w2 < 0.0 or (w2 == 0.0 and not tl2):
                    continue
                d = area / (w0 * z0 + w1 * z1 + w2 * z2)
                if d < depth[i, j]:
                    depth[i, j] = d
                    mask[i, j] = 255 if labels[t] == 1 else 0
                    rgb[i, j, 0] = colors[t, 0]
                    rgb[i, j, 1] = colors[t, 1]
                    rgb[i, j, 2] = colors[t, 2]


def _top_left(ax, ay, bx, by):
    dy = by - ay
    return (dy == 0.0 and bx - ax > 0.0) or dy < 0.0


def rasterize_triangles_numpy(sx, sy, inv_z, colors, labels, rgb, mask, depth):
    height, width = depth.shape
    for t in range(sx.shape[0]):
        x0, x1, x2 = (float(v) for v in sx[t])
        y0, y1, y2 = (float(v) for v in sy[t])
        z0, z1, z2 = (float(v) for v in inv_z[t])
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if not (area != 0.0 and math.isfinite(area)):
            continue
        if area < 0.0:
            x1, y1, x2, y2 = x2, y2, x1, y1
            z1, z2 = z2, z1
            area = -area
        j_lo = max(0, math.ceil(min(x0, x1, x2) - 0.5))
        j_hi = min(width - 1, math.floor(max(x0, x1, x2) - 0.5))
        i_lo = max(0, math.ceil(min(y0, y1, y2) - 0.5))
        i_hi = min(height - 1, math.floor(max(y0, y1, y2) - 0.5))
        if j_lo > j_hi or i_lo > i_hi:
            continue
        px = np.arange(j_lo, j_hi + 1, dtype=np.float64)[None, :] + 0.5
        py = np.arange(i_lo, i_hi + 1, dtype=np.float64)[:, None] + 0.5
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = ((w0 > 0) | ((w0 == 0) & _top_left(x1, y1, x2, y2))) \
            & ((w1 > 0) | ((w1 == 0) & _top_left(x2, y2, x0, y0))) \
            & ((w2 > 0) | ((w2 == 0) & _top_left(x0, y0, x1, y1)))
        if not inside.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            d = area / (w0 * z0 + w1 * z1 + w2 * z2)
        win = depth[i_lo:i_hi + 1, j_lo:j_hi + 1]
        take = inside & (d < win)
        win[take] = d[take]
        mask[i_lo:i_hi + 1, j_lo:j_hi + 1][take] = 255 if labels[t] == 1 else 0
        rgb[i_lo:i_hi + 1, j_lo:j_hi + 1][take] = colors[t]


rasterize_triangles = rasterize_triangles_numba if USE_NUMBA else rasterize_triangles_numpy
