# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, sqrt

cnp.import_array()


def permanent(a):
    """Ryser's formula with Gray-code column toggling, O(2^n n)."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] m = np.ascontiguousarray(a, dtype=np.complex128)
    cdef Py_ssize_t n = m.shape[0]
    if m.shape[1] != n:
        raise ValueError("permanent needs a square matrix")
    if n == 0:
        return 1.0 + 0.0j
    if n > 30:
        raise ValueError("matrix too large for the permanent kernel")
    cdef double[:] re = np.zeros(n)
    cdef double[:] im = np.zeros(n)
    cdef unsigned long long k, gray, prev_gray = 0, diff, total = 1ULL << n
    cdef Py_ssize_t i, j
    cdef int sgn, size = 0
    cdef double pr, pi, tr, acc_r = 0.0, acc_i = 0.0
    for k in range(1, total):
        gray = k ^ (k >> 1)
        diff = gray ^ prev_gray
        j = 0
        while (diff >> j) != 1:
            j += 1
        if gray & diff:
            sgn = 1
            size += 1
        else:
            sgn = -1
            size -= 1
        for i in range(n):
            re[i] += sgn * m[i, j].real
            im[i] += sgn * m[i, j].imag
        pr = 1.0
        pi = 0.0
        for i in range(n):
            tr = pr * re[i] - pi * im[i]
            pi = pr * im[i] + pi * re[i]
            pr = tr
        if (n - size) % 2 == 0:
            acc_r += pr
            acc_i += pi
        else:
            acc_r -= pr
            acc_i -= pi
        prev_gray = gray
    return complex(acc_r, acc_i)


def pmf_sum(dk, z, coeff):
    cdef cnp.ndarray[double, ndim=1] d = np.ascontiguousarray(dk, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] cc = np.ascontiguousarray(coeff, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], nb = zz.shape[0], p, j
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef double zmax = 0.0, m1 = 0.0, m2 = 0.0, m3 = 0.0
    cdef double x, sr, si, ph, zj
    for j in range(nb):
        zj = zz[j]
        if fabs(zj) > zmax:
            zmax = fabs(zj)
        m1 += cc[j] * zj
        m2 += cc[j] * zj * zj
        m3 += cc[j] * zj * zj * zj
    for p in range(n):
        x = d[p]
        if fabs(x) * zmax < 1e-4:
            out[p] = complex(m1 - x * x * m3 / 6.0, 0.5 * x * m2)
            continue
        sr = 0.0
        si = 0.0
        for j in range(nb):
            if cc[j] != 0.0:
                ph = x * zz[j]
                sr += cc[j] * cos(ph)
                si += cc[j] * sin(ph)
        # (sr + i si) / (i x) = si/x - i sr/x
        out[p] = complex(si / x, -sr / x)
    return out


def track_signs(deltas, targets, Py_ssize_t min_run, int start_sign=1):
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] dl = np.ascontiguousarray(deltas, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] tg = np.ascontiguousarray(targets, dtype=np.complex128)
    cdef Py_ssize_t n = dl.shape[0], k, run = min_run
    cdef cnp.ndarray[cnp.int8_t, ndim=1] signs = np.empty(n, dtype=np.int8)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] field = np.empty(n, dtype=np.complex128)
    cdef double ar = 0.0, ai = 0.0, dr, di, tr, ti, keep, flip, xr, xi
    cdef int s = 1 if start_sign >= 0 else -1
    for k in range(n):
        dr = dl[k].real
        di = dl[k].imag
        tr = tg[k].real
        ti = tg[k].imag
        if run >= min_run:
            xr = ar + s * dr - tr
            xi = ai + s * di - ti
            keep = xr * xr + xi * xi
            xr = ar - s * dr - tr
            xi = ai - s * di - ti
            flip = xr * xr + xi * xi
            if flip < keep:
                s = -s
                run = 0
            if k == 0:
                run = 0  # the free first choice still opens a full domain
        ar += s * dr
        ai += s * di
        run += 1
        signs[k] = s
        field[k] = complex(ar, ai)
    return signs, field


def pmf_sum_lattice(dk, double z0, double step, idx, coeff):
    """``pmf_sum`` for boundaries z_j = z0 + idx_j * step with integer idx.

    Phasors are advanced by table lookups of exp(i dk step)^g, so the cost
    per point is one complex multiply per boundary instead of a sincos.
    """
    cdef cnp.ndarray[double, ndim=1] d = np.ascontiguousarray(dk, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.int64_t, ndim=1] mi = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] cc = np.ascontiguousarray(coeff, dtype=np.float64)
    keep = np.flatnonzero(cc != 0.0)
    mi = np.ascontiguousarray(mi[keep])
    cc = np.ascontiguousarray(cc[keep])
    cdef Py_ssize_t n = d.shape[0], nb = mi.shape[0], p, j, g, tsize = 1
    for j in range(1, nb):
        g = mi[j] - mi[j - 1]
        if g > tsize:
            tsize = g
    if tsize > 4096:
        tsize = 4096
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef double[:] tr = np.empty(tsize + 1)
    cdef double[:] ti = np.empty(tsize + 1)
    cdef double zmax = 0.0, m1 = 0.0, m2 = 0.0, m3 = 0.0
    cdef double x, zj, er, ei, wr, wi, t, sr, si, ph
    for j in range(nb):
        zj = z0 + mi[j] * step
        if fabs(zj) > zmax:
            zmax = fabs(zj)
        m1 += cc[j] * zj
        m2 += cc[j] * zj * zj
        m3 += cc[j] * zj * zj * zj
    if nb == 0:
        out[:] = 0
        return out
    for p in range(n):
        x = d[p]
        if fabs(x) * zmax < 1e-4:
            out[p] = complex(m1 - x * x * m3 / 6.0, 0.5 * x * m2)
            continue
        wr = cos(x * step)
        wi = sin(x * step)
        tr[0] = 1.0
        ti[0] = 0.0
        for g in range(1, tsize + 1):
            tr[g] = tr[g - 1] * wr - ti[g - 1] * wi
            ti[g] = tr[g - 1] * wi + ti[g - 1] * wr
        ph = x * (z0 + mi[0] * step)
        er = cos(ph)
        ei = sin(ph)
        sr = cc[0] * er
        si = cc[0] * ei
        for j in range(1, nb):
            g = mi[j] - mi[j - 1]
            if g <= tsize:
                t = er * tr[g] - ei * ti[g]
                ei = er * ti[g] + ei * tr[g]
                er = t
            else:
                ph = x * (z0 + mi[j] * step)
                er = cos(ph)
                ei = sin(ph)
            sr += cc[j] * er
            si += cc[j] * ei
        out[p] = complex(si / x, -sr / x)
    return out
