"""numba kernels for tile-based alpha compositing (forward and adjoint).

Each tile is processed independently and walks its depth-sorted entries,
touching only the pixels inside each entry's box. Per-pixel compositing order is
the same as a pixel-major loop. The adjoint writes one gradient row per
(tile, gaussian) list entry, so results do not depend on thread scheduling.
"""

import numpy as np
from numba import njit, prange

ALPHA_MIN = 1e-8
ALPHA_MAX = 0.99
T_MIN = 1e-4


@njit(cache=True)
def _power_floor(opac):
    # below this exponent alpha is certainly under ALPHA_MIN, so exp() can be skipped
    out = np.empty(opac.shape[0])
    for i in range(opac.shape[0]):
        out[i] = np.log(ALPHA_MIN / max(opac[i], 1e-300)) - 1e-6
    return out


@njit(parallel=True, cache=True)
def rasterize_forward(means2d, conics, opac, colors, ids, bbox, tile_start, tile_end,
                      tiles_x, width, height, tile, bg):
    image = np.empty((height, width, 3))
    final_t = np.empty((height, width))
    last = np.empty((height, width), dtype=np.int64)
    floor = _power_floor(opac)
    for t in prange(tile_start.shape[0]):
        x0 = (t % tiles_x) * tile
        y0 = (t // tiles_x) * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        trans = np.ones((tile, tile))
        acc = np.zeros((tile, tile, 3))
        done = np.zeros((tile, tile), dtype=np.bool_)
        end = np.full((tile, tile), tile_start[t], dtype=np.int64)
        # entry-major: each splat only visits pixels inside its own box
        for k in range(tile_start[t], tile_end[t]):
            gid = ids[k]
            mx = means2d[gid, 0]
            my = means2d[gid, 1]
            ca = conics[gid, 0]
            cb = conics[gid, 1]
            cc = conics[gid, 2]
            for py in range(max(y0, bbox[gid, 2]), min(y1, bbox[gid, 3] + 1)):
                dy = py + 0.5 - my
                for px in range(max(x0, bbox[gid, 0]), min(x1, bbox[gid, 1] + 1)):
                    ly = py - y0
                    lx = px - x0
                    if done[ly, lx]:
                        continue
                    dx = px + 0.5 - mx
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0 or power < floor[gid]:
                        continue
                    alpha = min(ALPHA_MAX, opac[gid] * np.exp(power))
                    if alpha < ALPHA_MIN:
                        continue
                    tr = trans[ly, lx]
                    test_t = tr * (1.0 - alpha)
                    if test_t < T_MIN:
                        done[ly, lx] = True
                        continue
                    w = alpha * tr
                    acc[ly, lx, 0] += colors[gid, 0] * w
                    acc[ly, lx, 1] += colors[gid, 1] * w
                    acc[ly, lx, 2] += colors[gid, 2] * w
                    trans[ly, lx] = test_t
                    end[ly, lx] = k + 1
        for py in range(y0, y1):
            for px in range(x0, x1):
                tr = trans[py - y0, px - x0]
                for ch in range(3):
                    image[py, px, ch] = acc[py - y0, px - x0, ch] + tr * bg[ch]
                final_t[py, px] = tr
                last[py, px] = end[py - y0, px - x0]
    return image, final_t, last


@njit(parallel=True, cache=True)
def rasterize_backward(means2d, conics, opac, colors, ids, bbox, tile_start, tile_end,
                       tiles_x, width, height, tile, bg, grad_image, final_t, last):
    m = ids.shape[0]
    g_mean = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_opac = np.zeros(m)
    g_color = np.zeros((m, 3))
    floor = _power_floor(opac)
    for t in prange(tile_start.shape[0]):
        x0 = (t % tiles_x) * tile
        y0 = (t // tiles_x) * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        # per-pixel running transmittance and light from behind
        trans = np.ones((tile, tile))
        behind = np.zeros((tile, tile, 3))
        for py in range(y0, y1):
            for px in range(x0, x1):
                tr = final_t[py, px]
                trans[py - y0, px - x0] = tr
                for ch in range(3):
                    behind[py - y0, px - x0, ch] = bg[ch] * tr
        for k in range(tile_end[t] - 1, tile_start[t] - 1, -1):
            gid = ids[k]
            mx = means2d[gid, 0]
            my = means2d[gid, 1]
            ca = conics[gid, 0]
            cb = conics[gid, 1]
            cc = conics[gid, 2]
            c0 = colors[gid, 0]
            c1 = colors[gid, 1]
            c2 = colors[gid, 2]
            for py in range(max(y0, bbox[gid, 2]), min(y1, bbox[gid, 3] + 1)):
                dy = py + 0.5 - my
                for px in range(max(x0, bbox[gid, 0]), min(x1, bbox[gid, 1] + 1)):
                    if k >= last[py, px]:
                        continue
                    dx = px + 0.5 - mx
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0 or power < floor[gid]:
                        continue
                    gauss = np.exp(power)
                    raw = opac[gid] * gauss
                    alpha = min(ALPHA_MAX, raw)
                    if alpha < ALPHA_MIN:
                        continue
                    ly = py - y0
                    lx = px - x0
                    tr = trans[ly, lx] / (1.0 - alpha)
                    trans[ly, lx] = tr
                    w = alpha * tr
                    d0 = grad_image[py, px, 0]
                    d1 = grad_image[py, px, 1]
                    d2 = grad_image[py, px, 2]
                    g_color[k, 0] += w * d0
                    g_color[k, 1] += w * d1
                    g_color[k, 2] += w * d2
                    inv = 1.0 / (1.0 - alpha)
                    s0 = behind[ly, lx, 0]
                    s1 = behind[ly, lx, 1]
                    s2 = behind[ly, lx, 2]
                    g_alpha = d0 * (c0 * tr - s0 * inv) + d1 * (c1 * tr - s1 * inv) + d2 * (c2 * tr - s2 * inv)
                    behind[ly, lx, 0] = s0 + c0 * w
                    behind[ly, lx, 1] = s1 + c1 * w
                    behind[ly, lx, 2] = s2 + c2 * w
                    if raw >= ALPHA_MAX:
                        continue
                    g_opac[k] += gauss * g_alpha
                    g_power = alpha * g_alpha
                    g_mean[k, 0] += g_power * (ca * dx + cb * dy)
                    g_mean[k, 1] += g_power * (cb * dx + cc * dy)
                    g_conic[k, 0] += -0.5 * dx * dx * g_power
                    g_conic[k, 1] += -dx * dy * g_power
                    g_conic[k, 2] += -0.5 * dy * dy * g_power
    return g_mean, g_conic, g_opac, g_color


@njit(cache=True)
def footprint_overlap(means2d, inv_cov, bbox, mask, chi2):
    """Count footprint pixels and in-mask footprint pixels per gaussian.

    ``bbox`` holds inclusive pixel ranges ``(x0, x1, y0, y1)`` (may extend past
    the image); pixels outside the image count as background.
    """
    n = means2d.shape[0]
    height, width = mask.shape
    total = np.zeros(n, dtype=np.int64)
    inside = np.zeros(n, dtype=np.int64)
    for i in range(n):
        a = inv_cov[i, 0]
        b = inv_cov[i, 1]
        c = inv_cov[i, 2]
        for py in range(bbox[i, 2], bbox[i, 3] + 1):
            dy = py + 0.5 - means2d[i, 1]
            for px in range(bbox[i, 0], bbox[i, 1] + 1):
                dx = px + 0.5 - means2d[i, 0]
                if a * dx * dx + 2.0 * b * dx * dy + c * dy * dy <= chi2:
                    total[i] += 1
                    if 0 <= px < width and 0 <= py < height and mask[py, px]:
                        inside[i] += 1
    return total, inside
