"""Pure-numpy fallback for the blending kernels.

Vectorizes each tile as a (pixels x splats) problem while reproducing the
sequential walk of the numba kernels: same skip/clamp thresholds, same
early-stop rule, channel accumulation in the same per-splat order.
"""
from __future__ import annotations

import numpy as np

from ._kernels_numba import ALPHA_MAX, ALPHA_MIN, Q_CUTOFF, T_STOP


def _tile_alphas(px, py, tids, means, conic, bbox, opac):
    """Effective per-(pixel, splat) alpha after skip rules; zeros drop out."""
    dx = px[:, None] - means[tids, 0][None, :]
    dy = py[:, None] - means[tids, 1][None, :]
    a = conic[tids, 0][None, :]
    b = conic[tids, 1][None, :]
    c = conic[tids, 2][None, :]
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    inside = ((px[:, None] >= bbox[tids, 0][None, :])
              & (px[:, None] < bbox[tids, 1][None, :])
              & (py[:, None] >= bbox[tids, 2][None, :])
              & (py[:, None] < bbox[tids, 3][None, :])
              & (q >= 0.0) & (q < Q_CUTOFF))
    gauss = np.where(inside, np.exp(-0.5 * np.where(inside, q, 0.0)), 0.0)
    alpha = np.minimum(opac[tids][None, :] * gauss, ALPHA_MAX)
    alpha[alpha < ALPHA_MIN] = 0.0
    alpha[~inside] = 0.0
    return alpha, gauss


def _walk(alpha):
    """Transmittance walk. Returns (applied mask, T before each splat, final T)."""
    trans = np.cumprod(1.0 - alpha, axis=1)
    trans_before = np.empty_like(trans)
    trans_before[:, 0] = 1.0
    trans_before[:, 1:] = trans[:, :-1]
    # stop before a contribution that would push T below the threshold;
    # zero-alpha entries leave T unchanged and can never trigger the stop
    stopped = np.cumsum(trans_before * (1.0 - alpha) < T_STOP, axis=1) > 0
    applied = (alpha > 0.0) & ~stopped
    alpha_eff = np.where(applied, alpha, 0.0)
    trans_eff = np.cumprod(1.0 - alpha_eff, axis=1)
    trans_before_eff = np.empty_like(trans_eff)
    trans_before_eff[:, 0] = 1.0
    trans_before_eff[:, 1:] = trans_eff[:, :-1]
    final = trans_eff[:, -1] if alpha.shape[1] else np.ones(alpha.shape[0])
    return applied, alpha_eff, trans_before_eff, final


def forward_numpy(height, width, tile, tiles_x, toffs, tids,
                  means, conic, bbox, opac, depths, colors, feats, ids,
                  n_id_slots, bg, has_color, has_feat, has_id,
                  want_records):
    fdim = feats.shape[1]
    if has_color:
        # tiles with no splat list keep T = 1, i.e. pure background
        out_color = np.tile(np.asarray(bg, dtype=np.float64), (height, width, 1))
    else:
        out_color = np.zeros((0, 0, 3))
    out_depth = np.zeros((height, width))
    out_feat = np.zeros((height, width, fdim)) if has_feat else np.zeros((0, 0, fdim))
    out_idmap = np.zeros((height, width), np.int32) if has_id else np.zeros((0, 0), np.int32)
    out_alpha = np.zeros((height, width))
    out_transm = np.ones((height, width))
    rec_chunks = []

    n_tiles = toffs.shape[0] - 1
    for t in range(n_tiles):
        ty, tx = divmod(t, tiles_x)
        y0, y1 = ty * tile, min(height, (ty + 1) * tile)
        x0, x1 = tx * tile, min(width, (tx + 1) * tile)
        sl = tids[toffs[t]:toffs[t + 1]]
        yy, xx = np.mgrid[y0:y1, x0:x1]
        px = xx.ravel().astype(np.float64)
        py = yy.ravel().astype(np.float64)
        flat = (yy * width + xx).ravel()
        if sl.size == 0:
            continue
        alpha, gauss = _tile_alphas(px, py, sl, means, conic, bbox, opac)
        applied, alpha_eff, trans_before, final = _walk(alpha)
        w = alpha_eff * trans_before
        wsum = np.zeros(px.size)
        csum = np.zeros((px.size, 3))
        dsum = np.zeros(px.size)
        fsum = np.zeros((px.size, fdim)) if has_feat else None
        idw = np.zeros((px.size, n_id_slots)) if has_id else None
        # accumulate splat by splat in depth order so rounding matches the
        # sequential kernels for any tiling
        for k in range(sl.size):
            wk = w[:, k]
            wsum += wk
            g = sl[k]
            if has_color:
                csum += wk[:, None] * colors[g]
            dsum += wk * depths[g]
            if has_feat:
                fsum += wk[:, None] * feats[g]
            if has_id:
                idw[:, ids[g]] += wk
        sh = (y1 - y0, x1 - x0)
        out_alpha[y0:y1, x0:x1] = wsum.reshape(sh)
        out_transm[y0:y1, x0:x1] = final.reshape(sh)
        out_depth[y0:y1, x0:x1] = dsum.reshape(sh)
        if has_color:
            out_color[y0:y1, x0:x1] = (csum + final[:, None] * bg).reshape(sh + (3,))
        if has_feat:
            out_feat[y0:y1, x0:x1] = fsum.reshape(sh + (fdim,))
        if has_id:
            idm = np.where(wsum >= 0.5, np.argmax(idw, axis=1), 0)
            out_idmap[y0:y1, x0:x1] = idm.reshape(sh).astype(np.int32)
        if want_records:
            rp, rk = np.nonzero(applied)
            rec_chunks.append((flat[rp], sl[rk], gauss[rp, rk], trans_before[rp, rk]))

    records = None
    if want_records:
        if rec_chunks:
            pix = np.concatenate([c[0] for c in rec_chunks])
            idx = np.concatenate([c[1] for c in rec_chunks]).astype(np.int32)
            gss = np.concatenate([c[2] for c in rec_chunks])
            trb = np.concatenate([c[3] for c in rec_chunks])
            order = np.argsort(pix, kind="stable")
            pix, idx, gss, trb = pix[order], idx[order], gss[order], trb[order]
        else:
            pix = np.zeros(0, np.int64)
            idx = np.zeros(0, np.int32)
            gss = np.zeros(0)
            trb = np.zeros(0)
        counts = np.bincount(pix, minlength=height * width)
        offsets = np.zeros(height * width + 1, np.int64)
        np.cumsum(counts, out=offsets[1:])
        records = (offsets, idx, gss, trb)
    return out_color, out_depth, out_feat, out_idmap, out_alpha, out_transm, records


def backward_features_numpy(offsets, rec_idx, rec_gauss, rec_transm,
                            opac_all, grad_map, grad_features):
    if rec_idx.size == 0:
        return
    alpha = np.minimum(opac_all[rec_idx] * rec_gauss, ALPHA_MAX)
    w = alpha * rec_transm
    pix = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    np.add.at(grad_features, rec_idx, w[:, None] * grad_map[pix])


def backward_appearance_numpy(offsets, rec_idx, rec_gauss, rec_transm,
                              transm_final, opac_all, colors_all, grad_map,
                              bg, grad_color, grad_opacity):
    if rec_idx.size == 0:
        return
    a_raw = opac_all[rec_idx] * rec_gauss
    clamped = a_raw > ALPHA_MAX
    alpha = np.where(clamped, ALPHA_MAX, a_raw)
    w = alpha * rec_transm
    pix = np.repeat(np.arange(offsets.size - 1), np.diff(offsets))
    g = grad_map[pix]
    c = colors_all[rec_idx]
    np.add.at(grad_color, rec_idx, w[:, None] * g)
    # suffix sums of c*w within each pixel segment, plus the background term
    cw = c * w[:, None]
    cs = np.cumsum(cw, axis=0)
    seg_end = offsets[1:][pix] - 1
    suffix = cs[seg_end] - cs[np.arange(rec_idx.size)]
    suffix = suffix + bg[None, :] * transm_final[pix][:, None]
    inv = 1.0 / (1.0 - alpha)
    d_alpha = np.sum(g * (c * rec_transm[:, None] - suffix * inv[:, None]), axis=1)
    contrib = np.where(clamped, 0.0, d_alpha * rec_gauss)
    np.add.at(grad_opacity, rec_idx, contrib)
