"""Numba-jitted blending kernels (hot loops of the rasterizer).

Semantics shared with _kernels_numpy: contributions walk splats in global
depth order restricted to each splat's integer bounding box; alpha is
clamped to 0.99, contributions below 1/255 are skipped, and blending stops
before a step that would push transmittance under 1e-4. Keeping the applied
set identical across tilings is what makes tiled and whole-image renders
bit-identical.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1.0e-4
# q >= 2*ln(255) implies alpha < 1/255 for any opacity < 1, so the exp can
# be skipped without changing the applied set.
Q_CUTOFF = 11.086626245216111


@njit(cache=True, parallel=True)
def forward_kernel(height, width, tile, tiles_x, toffs, tids,
                   means, conic, bbox, opac, depths, colors, feats, ids,
                   n_id_slots, bg, has_color, has_feat, has_id,
                   out_color, out_depth, out_feat, out_idmap,
                   out_alpha, out_transm,
                   want_records, rec_offsets, rec_pos, rec_gauss, rec_transm):
    fdim = feats.shape[1]
    n_tiles = toffs.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        y0 = ty * tile
        y1 = min(height, y0 + tile)
        x0 = tx * tile
        x1 = min(width, x0 + tile)
        s0 = toffs[t]
        s1 = toffs[t + 1]
        facc = np.zeros(fdim)
        idacc = np.zeros(n_id_slots)
        for py in range(y0, y1):
            for px in range(x0, x1):
                p = py * width + px
                trans = 1.0
                wsum = 0.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                dsum = 0.0
                if has_feat:
                    for k in range(fdim):
                        facc[k] = 0.0
                if has_id:
                    for k in range(n_id_slots):
                        idacc[k] = 0.0
                cursor = rec_offsets[p] if want_records else 0
                for s in range(s0, s1):
                    g = tids[s]
                    if px < bbox[g, 0] or px >= bbox[g, 1]:
                        continue
                    if py < bbox[g, 2] or py >= bbox[g, 3]:
                        continue
                    dx = px - means[g, 0]
                    dy = py - means[g, 1]
                    q = (conic[g, 0] * dx * dx
                         + 2.0 * conic[g, 1] * dx * dy
                         + conic[g, 2] * dy * dy)
                    if q < 0.0 or q >= Q_CUTOFF:
                        continue
                    gauss = np.exp(-0.5 * q)
                    alpha = opac[g] * gauss
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    test = trans * (1.0 - alpha)
                    if test < T_STOP:
                        break
                    w = alpha * trans
                    if want_records:
                        rec_pos[cursor] = g
                        rec_gauss[cursor] = gauss
                        rec_transm[cursor] = trans
                        cursor += 1
                    wsum += w
                    if has_color:
                        c0 += w * colors[g, 0]
                        c1 += w * colors[g, 1]
                        c2 += w * colors[g, 2]
                    dsum += w * depths[g]
                    if has_feat:
                        for k in range(fdim):
                            facc[k] += w * feats[g, k]
                    if has_id:
                        idacc[ids[g]] += w
                    trans = test
                out_alpha[py, px] = wsum
                out_transm[py, px] = trans
                out_depth[py, px] = dsum
                if has_color:
                    out_color[py, px, 0] = c0 + trans * bg[0]
                    out_color[py, px, 1] = c1 + trans * bg[1]
                    out_color[py, px, 2] = c2 + trans * bg[2]
                if has_feat:
                    for k in range(fdim):
                        out_feat[py, px, k] = facc[k]
                if has_id:
                    if wsum >= 0.5:
                        best = 0
                        bestw = idacc[0]
                        for k in range(1, n_id_slots):
                            if idacc[k] > bestw:
                                bestw = idacc[k]
                                best = k
                        out_idmap[py, px] = best
                    else:
                        out_idmap[py, px] = 0


@njit(cache=True, parallel=True)
def count_kernel(height, width, tile, tiles_x, toffs, tids,
                 means, conic, bbox, opac, counts):
    n_tiles = toffs.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        y0 = ty * tile
        y1 = min(height, y0 + tile)
        x0 = tx * tile
        x1 = min(width, x0 + tile)
        s0 = toffs[t]
        s1 = toffs[t + 1]
        for py in range(y0, y1):
            for px in range(x0, x1):
                trans = 1.0
                n = 0
                for s in range(s0, s1):
                    g = tids[s]
                    if px < bbox[g, 0] or px >= bbox[g, 1]:
                        continue
                    if py < bbox[g, 2] or py >= bbox[g, 3]:
                        continue
                    dx = px - means[g, 0]
                    dy = py - means[g, 1]
                    q = (conic[g, 0] * dx * dx
                         + 2.0 * conic[g, 1] * dx * dy
                         + conic[g, 2] * dy * dy)
                    if q < 0.0 or q >= Q_CUTOFF:
                        continue
                    alpha = opac[g] * np.exp(-0.5 * q)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    if alpha < ALPHA_MIN:
                        continue
                    test = trans * (1.0 - alpha)
                    if test < T_STOP:
                        break
                    n += 1
                    trans = test
                counts[py * width + px] = n


@njit(cache=True)
def backward_features_kernel(offsets, rec_idx, rec_gauss, rec_transm,
                             opac_all, grad_map, grad_features):
    fdim = grad_map.shape[1]
    n_px = offsets.shape[0] - 1
    for p in range(n_px):
        for r in range(offsets[p], offsets[p + 1]):
            i = rec_idx[r]
            alpha = opac_all[i] * rec_gauss[r]
            if alpha > ALPHA_MAX:
                alpha = ALPHA_MAX
            w = alpha * rec_transm[r]
            for k in range(fdim):
                grad_features[i, k] += w * grad_map[p, k]


@njit(cache=True)
def backward_appearance_kernel(offsets, rec_idx, rec_gauss, rec_transm,
                               transm_final, opac_all, colors_all, grad_map,
                               bg, grad_color, grad_opacity):
    n_px = offsets.shape[0] - 1
    for p in range(n_px):
        s = offsets[p]
        e = offsets[p + 1]
        if s == e:
            continue
        g0 = grad_map[p, 0]
        g1 = grad_map[p, 1]
        g2 = grad_map[p, 2]
        tn = transm_final[p]
        # suffix accumulator: sum of c_j * w_j over later contributions
        # plus the background term, all of which scale by (1 - alpha_k)
        suf0 = bg[0] * tn
        suf1 = bg[1] * tn
        suf2 = bg[2] * tn
        for r in range(e - 1, s - 1, -1):
            i = rec_idx[r]
            gauss = rec_gauss[r]
            a_raw = opac_all[i] * gauss
            clamped = a_raw > ALPHA_MAX
            alpha = ALPHA_MAX if clamped else a_raw
            trans = rec_transm[r]
            w = alpha * trans
            c0 = colors_all[i, 0]
            c1 = colors_all[i, 1]
            c2 = colors_all[i, 2]
            grad_color[i, 0] += w * g0
            grad_color[i, 1] += w * g1
            grad_color[i, 2] += w * g2
            inv = 1.0 / (1.0 - alpha)
            d_alpha = (g0 * (c0 * trans - suf0 * inv)
                       + g1 * (c1 * trans - suf1 * inv)
                       + g2 * (c2 * trans - suf2 * inv))
            if not clamped:
                grad_opacity[i] += d_alpha * gauss
            suf0 += c0 * w
            suf1 += c1 * w
            suf2 += c2 * w
