"""Hot numerical loops, each in a numba and a pure-numpy flavour.

The public names (``mask_mean_map``, ``ring_mad_map``, ``dp_layer``) are bound
to the numba implementation unless ``ACONTRARIO_DISABLE_NUMBA`` is set. Both
flavours are importable under their suffixed names so tests can check that
they agree.

All maps are computed on the *interior* of an image only: the output has
shape ``(H - 2*margin, W - 2*margin)`` where ``margin`` is the largest offset
component, and ``out[r, c]`` belongs to image pixel ``(r + margin, c + margin)``.
"""

import warnings

import numpy as np

from ._accel import USE_NUMBA, njit, prange

MAD_SCALE = 1.4826
MIN_MAD_SAMPLES = 8


def offsets_margin(offsets):
    return int(np.abs(offsets).max()) if len(offsets) else 0


# ---------------------------------------------------------------------------
# Mean over a pixel-offset mask
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _mask_mean_map_numba(img, offsets, margin):
    H, W = img.shape
    h, w = H - 2 * margin, W - 2 * margin
    out = np.empty((h, w))
    n = offsets.shape[0]
    for r in prange(h):
        y = r + margin
        for c in range(w):
            x = c + margin
            s = 0.0
            for k in range(n):
                s += img[y + offsets[k, 0], x + offsets[k, 1]]
            out[r, c] = s / n
    return out


def _mask_mean_map_numpy(img, offsets, margin):
    H, W = img.shape
    h, w = H - 2 * margin, W - 2 * margin
    acc = np.zeros((h, w))
    for dy, dx in offsets:
        acc += img[margin + dy:margin + dy + h, margin + dx:margin + dx + w]
    return acc / len(offsets)


# ---------------------------------------------------------------------------
# Scaled MAD over a pixel-offset mask, with optional excluded pixels
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _ring_mad_map_numba(img, offsets, margin, excluded):
    H, W = img.shape
    h, w = H - 2 * margin, W - 2 * margin
    out = np.empty((h, w))
    n = offsets.shape[0]
    for r in prange(h):
        buf = np.empty(n)
        dev = np.empty(n)
        y = r + margin
        for c in range(w):
            x = c + margin
            m = 0
            for k in range(n):
                yy = y + offsets[k, 0]
                xx = x + offsets[k, 1]
                if not excluded[yy, xx]:
                    buf[m] = img[yy, xx]
                    m += 1
            if m < 8:
                out[r, c] = np.nan
                continue
            med = np.median(buf[:m])
            for k in range(m):
                dev[k] = abs(buf[k] - med)
            out[r, c] = 1.4826 * np.median(dev[:m])
    return out


def _ring_mad_map_numpy(img, offsets, margin, excluded, rows_per_block=64):
    H, W = img.shape
    h, w = H - 2 * margin, W - 2 * margin
    out = np.empty((h, w))
    any_excluded = bool(excluded.any())
    for r0 in range(0, h, rows_per_block):
        r1 = min(h, r0 + rows_per_block)
        stack = np.empty((len(offsets), r1 - r0, w))
        for k, (dy, dx) in enumerate(offsets):
            sl = (slice(margin + dy + r0, margin + dy + r1),
                  slice(margin + dx, margin + dx + w))
            stack[k] = img[sl]
            if any_excluded:
                stack[k][excluded[sl]] = np.nan
        if any_excluded:
            count = np.sum(~np.isnan(stack), axis=0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                med = np.nanmedian(stack, axis=0)
                mad = np.nanmedian(np.abs(stack - med), axis=0)
            mad[count < MIN_MAD_SAMPLES] = np.nan
        else:
            med = np.median(stack, axis=0)
            mad = np.median(np.abs(stack - med), axis=0)
            if len(offsets) < MIN_MAD_SAMPLES:
                mad[:] = np.nan
        out[r0:r1] = MAD_SCALE * mad
    return out


# ---------------------------------------------------------------------------
# One frame of the trajectory dynamic program
# ---------------------------------------------------------------------------
#
# A triple q = (h at t-2, j at t-1, i at t) carries its second difference
# acc[q]. Triples are grouped by their head pair (j, i) -> head[q] and point
# to the tail pair (h, j) of the previous frame -> tail[q] (-1 when the tail
# pair heads no triple, i.e. only length-3 tracks end with q).
#
# D[p, l] is the smallest running max-acceleration of a length-l track that
# ends with head pair p; B[p, l] stores the triple realising it.

@njit(cache=True)
def _dp_layer_numba(head, tail, acc, ok, d_prev, n_pairs, lmax):
    d_cur = np.full((n_pairs, lmax + 1), np.inf)
    b_cur = np.full((n_pairs, lmax + 1), -1, dtype=np.int32)
    lprev = d_prev.shape[1] - 1
    for q in range(head.shape[0]):
        if not ok[q]:
            continue
        p = head[q]
        a = acc[q]
        if a < d_cur[p, 3]:
            d_cur[p, 3] = a
            b_cur[p, 3] = q
        t = tail[q]
        if t < 0:
            continue
        top = min(lmax, lprev + 1)
        for ell in range(4, top + 1):
            prev = d_prev[t, ell - 1]
            if prev == np.inf:
                continue
            v = prev if prev > a else a
            if v < d_cur[p, ell]:
                d_cur[p, ell] = v
                b_cur[p, ell] = q
    return d_cur, b_cur


def _dp_layer_numpy(head, tail, acc, ok, d_prev, n_pairs, lmax):
    d_cur = np.full((n_pairs, lmax + 1), np.inf)
    b_cur = np.full((n_pairs, lmax + 1), -1, dtype=np.int32)
    n = head.shape[0]
    if n == 0:
        return d_cur, b_cur
    qidx = np.arange(n)
    lprev = d_prev.shape[1] - 1
    has_tail = tail >= 0
    for ell in range(3, lmax + 1):
        if ell == 3:
            vals = np.where(ok, acc, np.inf)
        else:
            if ell - 1 > lprev:
                break
            prev = np.full(n, np.inf)
            prev[has_tail] = d_prev[tail[has_tail], ell - 1]
            vals = np.where(ok, np.maximum(prev, acc), np.inf)
        finite = np.isfinite(vals)
        if not finite.any():
            continue
        q = qidx[finite]
        order = np.lexsort((q, vals[finite], head[finite]))
        hs = head[finite][order]
        first = np.ones(len(hs), dtype=bool)
        first[1:] = hs[1:] != hs[:-1]
        winners = q[order][first]
        d_cur[head[winners], ell] = vals[winners]
        b_cur[head[winners], ell] = winners
    return d_cur, b_cur


if USE_NUMBA:
    mask_mean_map = _mask_mean_map_numba
    ring_mad_map = _ring_mad_map_numba
    dp_layer = _dp_layer_numba
else:
    mask_mean_map = _mask_mean_map_numpy
    ring_mad_map = _ring_mad_map_numpy
    dp_layer = _dp_layer_numpy
