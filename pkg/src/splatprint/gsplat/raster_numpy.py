"""Pure-numpy compositing kernels, vectorized per tile.

Same contract as :mod:`raster_numba`; used when numba is disabled or missing.
Each tile builds a dense (pixels x entries) alpha matrix and evaluates the
front-to-back recurrence with cumulative products. ``bbox`` is accepted for
signature parity; pixels outside a box already fall under the alpha cutoff.
"""

import numpy as np

ALPHA_MIN = 1e-8
ALPHA_MAX = 0.99
T_MIN = 1e-4


def _tile_pixels(t, tiles_x, width, height, tile):
    x0 = (t % tiles_x) * tile
    y0 = (t // tiles_x) * tile
    xs = np.arange(x0, min(x0 + tile, width))
    ys = np.arange(y0, min(y0 + tile, height))
    py, px = np.meshgrid(ys, xs, indexing="ij")
    return py.ravel(), px.ravel()


def _tile_alpha(means2d, conics, opac, gids, px, py):
    dx = (px + 0.5)[:, None] - means2d[gids, 0][None, :]
    dy = (py + 0.5)[:, None] - means2d[gids, 1][None, :]
    ca, cb, cc = conics[gids, 0], conics[gids, 1], conics[gids, 2]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    gauss = np.exp(np.minimum(power, 0.0))
    raw = opac[gids][None, :] * gauss
    alpha = np.minimum(ALPHA_MAX, raw)
    used = (power <= 0.0) & (alpha >= ALPHA_MIN)
    alpha = np.where(used, alpha, 0.0)
    # transmittance before each entry, then cut at the first entry that would
    # push it below T_MIN (that entry and everything after are excluded)
    one_minus = 1.0 - alpha
    t_after = np.cumprod(one_minus, axis=1)
    stop = used & (t_after < T_MIN)
    keep = np.cumsum(stop, axis=1) == 0
    alpha = np.where(keep, alpha, 0.0)
    used = used & keep
    t_before = np.cumprod(np.concatenate([np.ones((len(px), 1)), 1.0 - alpha[:, :-1]], axis=1), axis=1)
    return dx, dy, gauss, raw, alpha, used, t_before


def rasterize_forward(means2d, conics, opac, colors, ids, bbox, tile_start, tile_end,
                      tiles_x, width, height, tile, bg):
    image = np.empty((height, width, 3))
    final_t = np.ones((height, width))
    last = np.empty((height, width), dtype=np.int64)
    for t in range(len(tile_start)):
        py, px = _tile_pixels(t, tiles_x, width, height, tile)
        s, e = tile_start[t], tile_end[t]
        if e == s:
            image[py, px] = bg
            final_t[py, px] = 1.0
            last[py, px] = s
            continue
        gids = ids[s:e]
        _, _, _, _, alpha, used, t_before = _tile_alpha(means2d, conics, opac, gids, px, py)
        w = alpha * t_before
        tfin = t_before[:, -1] * (1.0 - alpha[:, -1])
        image[py, px] = w @ colors[gids] + tfin[:, None] * bg
        final_t[py, px] = tfin
        k = np.arange(1, e - s + 1)
        last[py, px] = s + np.max(np.where(used, k[None, :], 0), axis=1)
    return image, final_t, last


def rasterize_backward(means2d, conics, opac, colors, ids, bbox, tile_start, tile_end,
                       tiles_x, width, height, tile, bg, grad_image, final_t, last):
    m = len(ids)
    g_mean = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_opac = np.zeros(m)
    g_color = np.zeros((m, 3))
    for t in range(len(tile_start)):
        s, e = tile_start[t], tile_end[t]
        if e == s:
            continue
        py, px = _tile_pixels(t, tiles_x, width, height, tile)
        gids = ids[s:e]
        dx, dy, gauss, raw, alpha, used, t_before = _tile_alpha(means2d, conics, opac, gids, px, py)
        dpix = grad_image[py, px]  # (P, 3)
        col = colors[gids]  # (K, 3)
        w = alpha * t_before
        g_color[s:e] = w.T @ dpix
        # light arriving from behind each entry: sum_{j>k} c_j w_j + bg * T_final
        contrib = w[:, :, None] * col[None, :, :]
        behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
        behind = behind + (final_t[py, px][:, None] * bg[None, :])[:, None, :]
        inv = 1.0 / (1.0 - alpha)
        g_alpha = np.einsum("pc,pkc->pk", dpix, col[None] * t_before[:, :, None] - behind * inv[:, :, None])
        g_alpha = np.where(used & (raw < ALPHA_MAX), g_alpha, 0.0)
        g_opac[s:e] = np.sum(gauss * g_alpha, axis=0)
        g_power = alpha * g_alpha
        ca, cb, cc = conics[gids, 0], conics[gids, 1], conics[gids, 2]
        g_mean[s:e, 0] = np.sum(g_power * (ca * dx + cb * dy), axis=0)
        g_mean[s:e, 1] = np.sum(g_power * (cb * dx + cc * dy), axis=0)
        g_conic[s:e, 0] = np.sum(-0.5 * dx * dx * g_power, axis=0)
        g_conic[s:e, 1] = np.sum(-dx * dy * g_power, axis=0)
        g_conic[s:e, 2] = np.sum(-0.5 * dy * dy * g_power, axis=0)
    return g_mean, g_conic, g_opac, g_color


def footprint_overlap(means2d, inv_cov, bbox, mask, chi2):
    n = len(means2d)
    height, width = mask.shape
    total = np.zeros(n, dtype=np.int64)
    inside = np.zeros(n, dtype=np.int64)
    for i in range(n):
        xs = np.arange(bbox[i, 0], bbox[i, 1] + 1)
        ys = np.arange(bbox[i, 2], bbox[i, 3] + 1)
        if len(xs) == 0 or len(ys) == 0:
            continue
        dx = xs[None, :] + 0.5 - means2d[i, 0]
        dy = ys[:, None] + 0.5 - means2d[i, 1]
        a, b, c = inv_cov[i]
        hit = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy <= chi2
        total[i] = np.count_nonzero(hit)
        yy, xx = np.nonzero(hit)
        px, py = xs[xx], ys[yy]
        ok = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        inside[i] = np.count_nonzero(mask[py[ok], px[ok]])
    return total, inside
