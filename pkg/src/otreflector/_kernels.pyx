# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Interface twin of ``_kernels_py``: same functions, same semantics. The
candidate preprocessing (padding, tangent projection) reuses the NumPy
helpers of the twin so both backends feed bit-identical coordinates into
the selection logic; the per-point selection, weight assembly, and operator
evaluation run as C loops. The extension is compiled without floating-point
contraction so arithmetic matches the NumPy expression order.
"""

import numpy as np

from libc.math cimport fabs, fmax, fmin, isfinite, log, sqrt

from . import _kernels_py
from .optics import COST_FLOOR
from .stencil import DET_GUARD, _rung_params

_CHUNK = 1024

cdef enum:
    MAX_DIRS = 256

cdef double INF = float("inf")
cdef double _COST_FLOOR = COST_FLOOR
cdef double _DET_GUARD = DET_GUARD

cdef int _QC[4]
cdef int _QS[4]
_QC[0] = 1; _QS[0] = 1
_QC[1] = 0; _QS[1] = 1
_QC[2] = 0; _QS[2] = 0
_QC[3] = 1; _QS[3] = 0


cdef bint _select_and_weigh(double[:, ::1] r, double[:, ::1] st, double[:, ::1] tt,
                            long long[:, ::1] cand, unsigned char[:, ::1] valid,
                            Py_ssize_t row, double cphi, double sphi,
                            double r_floor, double sin_floor, double r_cap,
                            int* nbr_out, double* w2_out, double* w1_out,
                            double* rad_out) noexcept nogil:
    """One direction, one rung: pick one neighbor per quadrant and solve for
    the weights. Returns False when a quadrant is empty or the system is
    unusable."""
    cdef Py_ssize_t m = r.shape[1]
    cdef Py_ssize_t col, q, j
    cdef Py_ssize_t sel[4]
    cdef double rr, sv, cv, abs_s
    cdef double best_s, best_r
    cdef long long best_id, cid
    cdef bint cpos, spos, feas
    for q in range(4):
        best_s = INF
        best_r = INF
        best_id = 0
        sel[q] = -1
        cpos = _QC[q]
        spos = _QS[q]
        for col in range(m):
            if not valid[row, col]:
                continue
            rr = r[row, col]
            if not (rr >= r_floor and rr <= r_cap):
                continue
            sv = tt[row, col] * cphi - st[row, col] * sphi
            cv = st[row, col] * cphi + tt[row, col] * sphi
            abs_s = fabs(sv)
            if not (abs_s >= sin_floor):
                continue
            feas = ((cv >= 0.0) == cpos) and ((sv >= 0.0) == spos)
            if not feas:
                continue
            cid = cand[row, col]
            if (abs_s < best_s
                    or (abs_s == best_s and rr < best_r)
                    or (abs_s == best_s and rr == best_r and cid < best_id)):
                best_s = abs_s
                best_r = rr
                best_id = cid
                sel[q] = col
        if sel[q] < 0:
            return False

    cdef double r1, r2, r3, r4, s1, s2, s3, s4, c1, c2, c3, c4
    cdef double rv[4]
    cdef double sv4[4]
    cdef double cv4[4]
    for q in range(4):
        col = sel[q]
        rv[q] = r[row, col]
        sv4[q] = tt[row, col] * cphi - st[row, col] * sphi
        cv4[q] = st[row, col] * cphi + tt[row, col] * sphi
    r1 = rv[0]; r2 = rv[1]; r3 = rv[2]; r4 = rv[3]
    s1 = sv4[0]; s2 = sv4[1]; s3 = sv4[2]; s4 = sv4[3]
    c1 = cv4[0]; c2 = cv4[1]; c3 = cv4[2]; c4 = cv4[3]

    cdef double det = (c3 * s2 - c2 * s3) * (r1 * c1 * c1 * s4 - r4 * c4 * c4 * s1) \
        - (c1 * s4 - c4 * s1) * (r3 * c3 * c3 * s2 - r2 * c2 * c2 * s3)
    cdef double w2l[4]
    cdef double w1l[4]
    w2l[0] = 2.0 * s4 * (c3 * s2 - c2 * s3) / (r1 * det)
    w2l[1] = 2.0 * s3 * (c1 * s4 - c4 * s1) / (r2 * det)
    w2l[2] = -2.0 * s2 * (c1 * s4 - c4 * s1) / (r3 * det)
    w2l[3] = -2.0 * s1 * (c3 * s2 - c2 * s3) / (r4 * det)
    w1l[0] = s4 * (r2 * s3 * c2 * c2 - r3 * s2 * c3 * c3) / (r1 * det)
    w1l[1] = -s3 * (r1 * s4 * c1 * c1 - r4 * s1 * c4 * c4) / (r2 * det)
    w1l[2] = s2 * (r1 * s4 * c1 * c1 - r4 * s1 * c4 * c4) / (r3 * det)
    w1l[3] = -s1 * (r2 * s3 * c2 * c2 - r3 * s2 * c3 * c3) / (r4 * det)

    cdef double rmax = fmax(fmax(r1, r2), fmax(r3, r4))
    cdef double guard = _DET_GUARD * rmax * rmax * rmax * rmax
    if not (isfinite(det) and fabs(det) > guard):
        return False
    cdef double scale = 0.0
    for j in range(4):
        if not isfinite(w2l[j]):
            return False
        scale = fmax(scale, fabs(w2l[j]))
    for j in range(4):
        if not (w2l[j] >= -1e-12 * scale):
            return False
    for j in range(4):
        col = sel[j]
        nbr_out[j] = <int> cand[row, col]
        w2_out[j] = w2l[j]
        w1_out[j] = w1l[j]
        rad_out[j] = rv[j]
    return True


def build_stencils(points, e1, e2, cap_flat, cap_off, spacing, dtheta,
                   n_pairs, rung_lo, rung_hi, workers=1, subset=None):
    """See _kernels_py.build_stencils; identical contract."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    e1 = np.ascontiguousarray(e1, dtype=np.float64)
    e2 = np.ascontiguousarray(e2, dtype=np.float64)
    cap_flat = np.ascontiguousarray(cap_flat, dtype=np.int64)
    cap_off = np.ascontiguousarray(cap_off, dtype=np.int64)
    idx = np.arange(len(points), dtype=np.int64) if subset is None \
        else np.asarray(subset, dtype=np.int64)
    cdef Py_ssize_t n = len(idx)
    cdef int npair = n_pairs
    cdef Py_ssize_t nd = 2 * npair + 1
    sq = float(np.sqrt(spacing))

    nbr = np.zeros((n, nd, 4), dtype=np.int32)
    w2 = np.zeros((n, nd, 4))
    w1 = np.zeros((n, nd, 4))
    rad = np.zeros((n, nd, 4))
    relax = np.zeros((n, nd), dtype=np.int8)
    ok = np.zeros((n, nd), dtype=np.uint8)

    phis = np.arange(nd) * float(dtheta)
    cos_phi = np.cos(phis)
    sin_phi = np.sin(phis)
    params = np.array([_rung_params(rg, dtheta, spacing, sq) for rg in range(4)])

    cdef double[::1] cphi_v = cos_phi
    cdef double[::1] sphi_v = sin_phi
    cdef double[:, ::1] par_v = params
    cdef int[:, :, ::1] nbr_v = nbr
    cdef double[:, :, ::1] w2_v = w2
    cdef double[:, :, ::1] w1_v = w1
    cdef double[:, :, ::1] rad_v = rad
    cdef signed char[:, ::1] relax_v = relax
    cdef unsigned char[:, ::1] ok_v = ok

    cdef Py_ssize_t lo, hi, row, g_row, k
    cdef int rung, rlo = rung_lo, rhi = rung_hi
    cdef double[:, ::1] r_v, st_v, tt_v
    cdef long long[:, ::1] cand_v
    cdef unsigned char[:, ::1] valid_v

    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        rows = np.arange(lo, hi)
        cand, valid = _kernels_py._pad_rows(cap_flat, cap_off, rows)
        pts = idx[rows]
        r, s, t = _kernels_py._tangent_coords(points, e1[pts], e2[pts],
                                              points[pts], cand)
        with np.errstate(invalid="ignore", divide="ignore"):
            st = np.where(valid, s / r, np.nan)
            tt = np.where(valid, t / r, np.nan)
        r_v = r
        st_v = st
        tt_v = tt
        cand_v = cand
        valid_v = np.ascontiguousarray(valid, dtype=np.uint8)
        with nogil:
            for row in range(hi - lo):
                g_row = lo + row
                for k in range(nd):
                    for rung in range(rlo, rhi + 1):
                        if _select_and_weigh(
                                r_v, st_v, tt_v, cand_v, valid_v, row,
                                cphi_v[k], sphi_v[k],
                                par_v[rung, 0], par_v[rung, 1], par_v[rung, 2],
                                &nbr_v[g_row, k, 0], &w2_v[g_row, k, 0],
                                &w1_v[g_row, k, 0], &rad_v[g_row, k, 0]):
                            relax_v[g_row, k] = <signed char> rung
                            ok_v[g_row, k] = 1
                            break
    return nbr, w2, w1, rad, relax, ok.view(bool)


def evaluate_operator(points, y, u, nbr, w2, eps1, lap, rhs, n_pairs,
                      workers=1):
    """See _kernels_py.evaluate_operator; identical contract."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    nbr = np.ascontiguousarray(nbr, dtype=np.int32)
    w2 = np.ascontiguousarray(w2, dtype=np.float64)
    eps1 = np.ascontiguousarray(eps1, dtype=np.float64)
    lap = np.ascontiguousarray(lap, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t nd = nbr.shape[1]
    cdef int m = n_pairs
    if nd > MAX_DIRS:
        raise ValueError(f"too many directions for the compiled kernel ({nd})")
    out = np.empty(n)

    cdef double[:, ::1] pts_v = points
    cdef double[:, ::1] y_v = y
    cdef double[::1] u_v = u
    cdef int[:, :, ::1] nbr_v = nbr
    cdef double[:, :, ::1] w2_v = w2
    cdef double[:, ::1] eps1_v = eps1
    cdef double[::1] lap_v = lap
    cdef double[::1] rhs_v = rhs
    cdef double[::1] out_v = out

    cdef Py_ssize_t i, k, j
    cdef int nb
    cdef long long sing = 0
    cdef long long example = -1
    cdef double y0, y1, y2, ui, lapi, v0, c0, val, d2, g1, w, sk, prod, best
    cdef double sbuf[MAX_DIRS]

    with nogil:
        for i in range(n):
            y0 = y_v[i, 0]
            y1 = y_v[i, 1]
            y2 = y_v[i, 2]
            ui = u_v[i]
            lapi = lap_v[i]
            v0 = 2.0 - 2.0 * (pts_v[i, 0] * y0 + pts_v[i, 1] * y1 + pts_v[i, 2] * y2)
            if v0 < _COST_FLOOR:
                sing += 1
                if example < 0:
                    example = i
                v0 = _COST_FLOOR
            c0 = -log(v0)
            for k in range(nd):
                d2 = 0.0
                g1 = 0.0
                for j in range(4):
                    nb = nbr_v[i, k, j]
                    w = w2_v[i, k, j]
                    val = 2.0 - 2.0 * (pts_v[nb, 0] * y0 + pts_v[nb, 1] * y1
                                       + pts_v[nb, 2] * y2)
                    if val < _COST_FLOOR:
                        sing += 1
                        if example < 0:
                            example = i
                        val = _COST_FLOOR
                    d2 = d2 + w * (u_v[nb] - ui)
                    g1 = g1 + w * (-log(val) - c0)
                sk = d2 + g1 + eps1_v[i, k] * lapi
                sbuf[k] = fmax(sk, 0.0)
            best = INF
            for j in range(1, m + 1):
                prod = sbuf[j] * sbuf[j + m]
                best = fmin(best, prod)
            out_v[i] = best - rhs_v[i]
    return out, int(sing), int(example)
