"""Compiled inner loops shared by descriptor extraction, training and voting.

Per control point of a patch we keep three numbers: its z-offset from the
patch centre, the log of its distance to the centre, and its angular bin
(inclination * h_phi + azimuth). The radial bin depends on the patch's r_max
and is derived on the fly, which is what lets the depth check re-bin a
patch cheaply.
"""

import math

import numba
import numpy as np

NEG_INF = -np.inf


@numba.njit(cache=True)
def radial_bin(lnr, ln_rmax, h_r, ln_frac):
    if ln_rmax == NEG_INF:
        return 0
    ln_rmin = ln_rmax + ln_frac
    if lnr < ln_rmin:
        return 0
    b = int(math.floor(h_r * (lnr - ln_rmin) / (ln_rmax - ln_rmin)))
    if b < 0:
        return 0
    if b > h_r - 1:
        return h_r - 1
    return b


@numba.njit(cache=True)
def window_points(gc, col_starts, N, cx, cy, cz, w, h_theta, h_phi):
    """Control points inside the axis-aligned window around (cx, cy, cz).

    Returns (z-offset, log radius, angular bin) arrays in flattened-index order.
    """
    step = N - 1
    lo_x, hi_x = cx - w, cx + w
    lo_y, hi_y = cy - w, cy + w
    lo_z, hi_z = cz - w, cz + w
    ix0 = max(int(math.floor(lo_x * step)) - 1, 0)
    ix1 = min(int(math.ceil(hi_x * step)) + 1, N - 1)
    iy0 = max(int(math.floor(lo_y * step)) - 1, 0)
    iy1 = min(int(math.ceil(hi_y * step)) + 1, N - 1)
    cap = 0
    for ix in range(ix0, ix1 + 1):
        px = ix / step
        if px < lo_x or px >= hi_x:
            continue
        for iy in range(iy0, iy1 + 1):
            py = iy / step
            if py < lo_y or py >= hi_y:
                continue
            col = ix * N + iy
            cap += col_starts[col + 1] - col_starts[col]
    zs = np.empty(cap)
    lnr = np.empty(cap)
    ang = np.empty(cap, dtype=np.int32)
    n = 0
    two_pi = 2.0 * math.pi
    for ix in range(ix0, ix1 + 1):
        px = ix / step
        if px < lo_x or px >= hi_x:
            continue
        x = px - cx
        for iy in range(iy0, iy1 + 1):
            py = iy / step
            if py < lo_y or py >= hi_y:
                continue
            y = py - cy
            col = ix * N + iy
            for k in range(col_starts[col], col_starts[col + 1]):
                pz = gc[k, 2] / step
                if pz < lo_z or pz >= hi_z:
                    continue
                z = pz - cz
                r = math.sqrt(x * x + y * y + z * z)
                if r > 0.0:
                    ct = z / r
                    lnr[n] = math.log(r)
                else:
                    ct = 0.0
                    lnr[n] = NEG_INF
                it = int(math.floor(h_theta * (ct + 1.0) / 2.0))
                if it < 0:
                    it = 0
                elif it > h_theta - 1:
                    it = h_theta - 1
                ia = int(math.floor(h_phi * (math.atan2(y, x) + math.pi) / two_pi)) % h_phi
                ang[n] = it * h_phi + ia
                zs[n] = z
                n += 1
    return zs[:n], lnr[:n], ang[:n]


@numba.njit(cache=True)
def full_histogram(lnr, ang, h_r, ln_frac, n_ang, out):
    ln_rmax = NEG_INF
    for k in range(lnr.shape[0]):
        if lnr[k] > ln_rmax:
            ln_rmax = lnr[k]
    out[:] = 0
    for k in range(lnr.shape[0]):
        out[radial_bin(lnr[k], ln_rmax, h_r, ln_frac) * n_ang + ang[k]] += 1
    return ln_rmax


@numba.njit(cache=True)
def similarity_one(zs, lnr, ang, zmin, zmax, ln_rmax, f_full, lo, hi, f_t, h_r, ln_frac, n_ang, scratch):
    """Distance between the template histogram and the depth-checked candidate.

    The candidate keeps control points with z-offset in [lo, hi]; r_max is
    re-derived from the kept points.
    """
    d = f_t.shape[0]
    if zmin >= lo and zmax <= hi:
        acc = 0.0
        for j in range(d):
            diff = float(f_full[j] - f_t[j])
            acc += diff * diff
        return math.sqrt(acc)
    kept = 0
    kmax = NEG_INF
    for k in range(zs.shape[0]):
        if zs[k] >= lo and zs[k] <= hi:
            kept += 1
            if lnr[k] > kmax:
                kmax = lnr[k]
    if kept == 0:
        acc = 0.0
        for j in range(d):
            acc += float(f_t[j]) * float(f_t[j])
        return math.sqrt(acc)
    if kmax == ln_rmax:
        # farthest point survived: same bins, just drop the removed points
        for j in range(d):
            scratch[j] = f_full[j]
        for k in range(zs.shape[0]):
            if zs[k] < lo or zs[k] > hi:
                scratch[radial_bin(lnr[k], ln_rmax, h_r, ln_frac) * n_ang + ang[k]] -= 1
    else:
        for j in range(d):
            scratch[j] = 0
        for k in range(zs.shape[0]):
            if zs[k] >= lo and zs[k] <= hi:
                scratch[radial_bin(lnr[k], kmax, h_r, ln_frac) * n_ang + ang[k]] += 1
    acc = 0.0
    for j in range(d):
        diff = float(scratch[j] - f_t[j])
        acc += diff * diff
    return math.sqrt(acc)


@numba.njit(cache=True)
def similarity_sorted(zs, lnr, ang, amax, f_full, lo, hi, f_t, h_r, ln_frac, n_ang, scratch):
    """:func:`similarity_one` for points pre-sorted by z-offset.

    ``amax`` is the position of the farthest point. The kept points form the
    contiguous run ``[i0, i1)``, so the cheap paths never scan the patch.
    """
    d = f_t.shape[0]
    n = zs.shape[0]
    if zs[0] >= lo and zs[n - 1] <= hi:
        acc = 0.0
        for j in range(d):
            diff = float(f_full[j] - f_t[j])
            acc += diff * diff
        return math.sqrt(acc)
    i0 = np.searchsorted(zs, lo, side="left")
    i1 = np.searchsorted(zs, hi, side="right")
    if i1 <= i0:
        acc = 0.0
        for j in range(d):
            acc += float(f_t[j]) * float(f_t[j])
        return math.sqrt(acc)
    ln_rmax = lnr[amax]
    if i0 <= amax < i1:
        for j in range(d):
            scratch[j] = f_full[j]
        for k in range(0, i0):
            scratch[radial_bin(lnr[k], ln_rmax, h_r, ln_frac) * n_ang + ang[k]] -= 1
        for k in range(i1, n):
            scratch[radial_bin(lnr[k], ln_rmax, h_r, ln_frac) * n_ang + ang[k]] -= 1
    else:
        kmax = NEG_INF
        for k in range(i0, i1):
            if lnr[k] > kmax:
                kmax = lnr[k]
        for j in range(d):
            scratch[j] = 0
        for k in range(i0, i1):
            scratch[radial_bin(lnr[k], kmax, h_r, ln_frac) * n_ang + ang[k]] += 1
    acc = 0.0
    for j in range(d):
        diff = float(scratch[j] - f_t[j])
        acc += diff * diff
    return math.sqrt(acc)


@numba.njit(cache=True)
def similarity_batch(idx, start, zs, lnr, ang, amax, F, lo, hi, f_t, h_r, ln_frac, n_ang):
    out = np.empty(idx.shape[0])
    scratch = np.empty(F.shape[1], dtype=np.int64)
    for i in range(idx.shape[0]):
        p = idx[i]
        a, b = start[p], start[p + 1]
        out[i] = similarity_sorted(zs[a:b], lnr[a:b], ang[a:b], amax[p], F[p], lo, hi, f_t, h_r, ln_frac, n_ang,
                                   scratch)
    return out


@numba.njit(cache=True)
def route(zs, lnr, ang, zmin, zmax, ln_rmax, f_full, roots, node_tmpl, node_tau, node_left, node_right,
          t_lo, t_hi, t_f, h_r, ln_frac, n_ang, scratch, out):
    """Drop one patch down every tree; writes the reached leaf node ids to ``out``."""
    for t in range(roots.shape[0]):
        node = roots[t]
        while node_tmpl[node] >= 0:
            k = node_tmpl[node]
            s = similarity_one(zs, lnr, ang, zmin, zmax, ln_rmax, f_full, t_lo[k], t_hi[k], t_f[k],
                               h_r, ln_frac, n_ang, scratch)
            if s <= node_tau[node]:
                node = node_left[node]
            else:
                node = node_right[node]
        out[t] = node


@numba.njit(cache=True)
def describe_and_route(gc, col_starts, N, centers, w, h_r, h_theta, h_phi, ln_frac, d,
                       roots, node_tmpl, node_tau, node_left, node_right, t_lo, t_hi, t_f):
    """Build each patch's descriptor in place and route it; no per-point storage kept.

    Returns (leaf ids (P, n_trees), valid flags, control point counts).
    """
    P = centers.shape[0]
    n_ang = h_theta * h_phi
    leaves = np.full((P, roots.shape[0]), -1, dtype=np.int64)
    valid = np.zeros(P, dtype=np.bool_)
    counts = np.zeros(P, dtype=np.int64)
    f = np.empty(d, dtype=np.int64)
    scratch = np.empty(d, dtype=np.int64)
    out = np.empty(roots.shape[0], dtype=np.int64)
    for p in range(P):
        zs, lnr, ang = window_points(gc, col_starts, N, centers[p, 0], centers[p, 1], centers[p, 2], w, h_theta, h_phi)
        counts[p] = zs.shape[0]
        if zs.shape[0] == 0:
            continue
        ln_rmax = full_histogram(lnr, ang, h_r, ln_frac, n_ang, f)
        if ln_rmax == NEG_INF:
            continue
        zmin = zs.min()
        zmax = zs.max()
        route(zs, lnr, ang, zmin, zmax, ln_rmax, f, roots, node_tmpl, node_tau, node_left, node_right,
              t_lo, t_hi, t_f, h_r, ln_frac, n_ang, scratch, out)
        leaves[p] = out
        valid[p] = True
    return leaves, valid, counts
