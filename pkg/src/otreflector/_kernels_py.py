"""Pure NumPy implementations of the hot kernels.

This module is the reference twin of the compiled extension ``_kernels``.
Both expose ``build_stencils`` and ``evaluate_operator`` with identical
semantics; arithmetic is arranged so results agree to the last bit wherever
the operation order can be matched (the extension is compiled without
floating-point contraction for the same reason).

The ``workers`` argument is accepted for interface parity and ignored here.
"""

from __future__ import annotations

import numpy as np

from .optics import COST_FLOOR
from .stencil import DET_GUARD, _rung_params, fd_weights

_CHUNK = 1024
_QUADRANTS = ((True, True), (False, True), (False, False), (True, False))


def build_stencils(points, e1, e2, cap_flat, cap_off, spacing, dtheta,
                   n_pairs, rung_lo, rung_hi, workers=1, subset=None):
    """Select stencil neighbors and weights for rows of a grid.

    cap_flat/cap_off hold candidate point ids in CSR layout, one row per
    output row (row r describes point subset[r], or point r when subset is
    None). Returns (nbr, w2, w1, rad, relax, ok); rows whose relaxation
    rungs rung_lo..rung_hi all fail are left with ok False.
    """
    points = np.asarray(points, dtype=np.float64)
    idx = np.arange(len(points), dtype=np.int64) if subset is None \
        else np.asarray(subset, dtype=np.int64)
    n = len(idx)
    nd = 2 * n_pairs + 1
    sq = float(np.sqrt(spacing))

    nbr = np.zeros((n, nd, 4), dtype=np.int32)
    w2 = np.zeros((n, nd, 4))
    w1 = np.zeros((n, nd, 4))
    rad = np.zeros((n, nd, 4))
    relax = np.zeros((n, nd), dtype=np.int8)
    ok = np.zeros((n, nd), dtype=bool)

    phis = np.arange(nd) * dtheta
    cos_phi, sin_phi = np.cos(phis), np.sin(phis)

    for lo in range(0, n, _CHUNK):
        rows = np.arange(lo, min(lo + _CHUNK, n))
        cand, valid = _pad_rows(cap_flat, cap_off, rows)
        pts = idx[rows]
        r, s, t = _tangent_coords(points, e1[pts], e2[pts], points[pts], cand)
        with np.errstate(invalid="ignore", divide="ignore"):
            st = np.where(valid, s / r, np.nan)
            tt = np.where(valid, t / r, np.nan)
        for k in range(nd):
            # coordinates in the frame rotated by k*dtheta
            rs = tt * cos_phi[k] - st * sin_phi[k]
            rc = st * cos_phi[k] + tt * sin_phi[k]
            todo = np.ones(len(rows), dtype=bool)
            for rung in range(rung_lo, rung_hi + 1):
                if not todo.any():
                    break
                sel, found = _select(r, rs, rc, cand, valid,
                                     *_rung_params(rung, dtheta, spacing, sq))
                rsel = np.take_along_axis(r, sel, axis=1)
                ssel = np.take_along_axis(rs, sel, axis=1)
                csel = np.take_along_axis(rc, sel, axis=1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    qw2, qw1, det = fd_weights(rsel, ssel, csel)
                good = todo & found & _weights_good(qw2, det, rsel)
                if good.any():
                    gsel = np.take_along_axis(cand, sel, axis=1)
                    nbr[rows[good], k] = gsel[good]
                    w2[rows[good], k] = qw2[good]
                    w1[rows[good], k] = qw1[good]
                    rad[rows[good], k] = rsel[good]
                    relax[rows[good], k] = rung
                    ok[rows[good], k] = True
                    todo &= ~good
    return nbr, w2, w1, rad, relax, ok


def _pad_rows(flat, off, rows):
    """Gather CSR rows into a padded (len(rows), maxc) array plus validity."""
    counts = off[rows + 1] - off[rows]
    maxc = int(counts.max()) if len(counts) else 0
    maxc = max(maxc, 1)
    cols = np.arange(maxc)
    take = off[rows][:, None] + cols[None, :]
    valid = cols[None, :] < counts[:, None]
    cand = np.where(valid, flat[np.minimum(take, len(flat) - 1)], -1)
    return cand.astype(np.int64), valid


def _tangent_coords(points, e1c, e2c, x0, cand):
    """Geodesic-projection polar coordinates of candidates around centers."""
    xc = points[np.maximum(cand, 0)]
    dot = np.einsum("cmx,cx->cm", xc, x0)
    cr = np.cross(x0[:, None, :], xc)
    d = np.arctan2(np.sqrt(np.einsum("cmx,cmx->cm", cr, cr)), dot)
    sin_d = np.sin(d)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(d < 1e-5, 1.0 + d * d / 6.0,
                          d / np.where(sin_d == 0.0, 1.0, sin_d))
    s = np.einsum("cmx,cx->cm", xc, e1c) * factor
    t = np.einsum("cmx,cx->cm", xc, e2c) * factor
    return d, s, t


def _select(r, rs, rc, cand, valid, r_floor, sin_floor, r_cap):
    """One candidate per quadrant: argmin |sin| with r then id tie-breaks."""
    nrow, _ = r.shape
    abs_st = np.abs(rs)
    base = valid & (r >= r_floor) & (r <= r_cap) & (abs_st >= sin_floor)
    sel = np.zeros((nrow, 4), dtype=np.int64)
    found = np.ones(nrow, dtype=bool)
    big = np.iinfo(np.int64).max
    for quad, (cpos, spos) in enumerate(_QUADRANTS):
        feas = base & ((rc >= 0.0) == cpos) & ((rs >= 0.0) == spos)
        k1 = np.where(feas, abs_st, np.inf)
        m1 = k1.min(axis=1, keepdims=True)
        k2 = np.where(k1 == m1, r, np.inf)
        m2 = k2.min(axis=1, keepdims=True)
        k3 = np.where(k2 == m2, cand, big)
        sel[:, quad] = k3.argmin(axis=1)
        found &= np.isfinite(m1[:, 0])
    return sel, found


def _weights_good(w2, det, rsel):
    guard = DET_GUARD * rsel.max(axis=1) ** 4
    scale = np.abs(w2).max(axis=1)
    with np.errstate(invalid="ignore"):
        out = (np.isfinite(det) & (np.abs(det) > guard)
               & np.all(np.isfinite(w2), axis=1)
               & np.all(w2 >= -1e-12 * scale[:, None], axis=1))
    return out


def evaluate_operator(points, y, u, nbr, w2, eps1, lap, rhs, n_pairs,
                      workers=1):
    """Monotone operator values at every grid point.

    For each point i and direction k this forms the regularized factor
    S = max(D2_k u + g1_k + eps1[i,k] * lap[i], 0) where g1 is the cost
    curvature term sum_j w2_j (c(x_j, y_i) - c(x_i, y_i)) with logarithmic
    cost c(a, b) = -log(2 - 2 a.b), then returns

        F[i] = min over pairs (k, k+M) of S_k * S_{k+M}  -  rhs[i].

    Also returns the number of cost evaluations that hit the singularity
    floor and the index of the first affected point (-1 if none).
    """
    n = len(u)
    m = n_pairs
    F = np.empty(n)
    sing = 0
    example = -1
    # ~25 MB of gathered coordinates per block
    chunk = max(1, 1_000_000 // max(nbr.shape[1] * 4, 1))
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        nb = nbr[sl]
        xn = points[nb]
        dots = np.einsum("cdjx,cx->cdj", xn, y[sl])
        val = 2.0 - 2.0 * dots
        v0 = 2.0 - 2.0 * np.einsum("cx,cx->c", points[sl], y[sl])
        bad = val < COST_FLOOR
        bad0 = v0 < COST_FLOOR
        if bad.any() or bad0.any():
            sing += int(bad.sum()) + int(bad0.sum())
            if example < 0:
                hit = np.nonzero(bad.any(axis=(1, 2)) | bad0)[0]
                example = lo + int(hit[0])
            val = np.where(bad, COST_FLOOR, val)
            v0 = np.where(bad0, COST_FLOOR, v0)
        cost_n = -np.log(val)
        cost_0 = -np.log(v0)
        g1 = np.einsum("cdj,cdj->cd", w2[sl], cost_n - cost_0[:, None, None])
        du = u[nb] - u[sl, None, None]
        d2 = np.einsum("cdj,cdj->cd", w2[sl], du)
        s = np.maximum(d2 + g1 + eps1[sl] * lap[sl, None], 0.0)
        prod = s[:, 1:m + 1] * s[:, m + 1:2 * m + 1]
        F[sl] = prod.min(axis=1) - rhs[sl]
    return F, sing, example
