# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: sampled PSM training step and the dual ascent loop.

Arithmetic follows ``_kernels_py`` step for step; see that module for the
block sampling and lazy target-sync scheme.
"""

import numpy as np
from libc.math cimport pow
from scipy.linalg.cython_blas cimport dgemm, dgemv, dger

BACKEND = "cython"


cdef inline void _sync_block(double[:, :, ::1] x, double[:, :, ::1] t, double[:, ::1] xb,
                             double[:, ::1] tb, long long[::1] last, Py_ssize_t blk,
                             long long upto, double tau) noexcept nogil:
    cdef long long k = upto - last[blk]
    cdef double keep, rest
    cdef Py_ssize_t i, j
    if k <= 0:
        return
    keep = pow(tau, <double>k)
    rest = 1.0 - keep
    for i in range(x.shape[1]):
        for j in range(x.shape[2]):
            t[blk, i, j] = keep * t[blk, i, j] + rest * x[blk, i, j]
        tb[blk, i] = keep * tb[blk, i] + rest * xb[blk, i]
    last[blk] = upto


cdef inline void _sync_w(double[:, ::1] x, double[:, ::1] t, long long[::1] last, Py_ssize_t row,
                         long long upto, double tau) noexcept nogil:
    cdef long long k = upto - last[row]
    cdef double keep, rest
    cdef Py_ssize_t j
    if k <= 0:
        return
    keep = pow(tau, <double>k)
    rest = 1.0 - keep
    for j in range(x.shape[1]):
        t[row, j] = keep * t[row, j] + rest * x[row, j]
    last[row] = upto


def sync_rows(x, t, last, rows, long long upto, double tau):
    """Leading-axis catch-up for 2-D tables (``w``); see ``_kernels_py.sync_rows``."""
    cdef double[:, ::1] xv = x.reshape(x.shape[0], -1)
    cdef double[:, ::1] tv = t.reshape(t.shape[0], -1)
    cdef long long[::1] lv = last
    cdef long long[::1] rv = np.ascontiguousarray(rows, dtype=np.int64)
    cdef Py_ssize_t i
    for i in range(rv.shape[0]):
        _sync_w(xv, tv, lv, rv[i], upto, tau)


def sync_all(double[:, :, ::1] phi, double[:, ::1] bias, double[:, ::1] w,
             double[:, :, ::1] phi_t, double[:, ::1] bias_t, double[:, ::1] w_t,
             long long[::1] last_blk, long long[::1] last_w, long long upto, double tau):
    cdef Py_ssize_t i
    with nogil:
        for i in range(phi.shape[0]):
            _sync_block(phi, phi_t, bias, bias_t, last_blk, i, upto, tau)
        for i in range(w.shape[0]):
            _sync_w(w, w_t, last_w, i, upto, tau)


def sampled_step(double[:, :, ::1] phi, double[:, ::1] bias, double[:, ::1] w,
                 double[:, :, ::1] phi_t, double[:, ::1] bias_t, double[:, ::1] w_t,
                 long long[::1] last_blk, long long[::1] last_w, long long[:, ::1] actions,
                 double[::1] rho_s, long long[::1] sa, long long[::1] s, long long[::1] s_next,
                 long long[::1] z, long long[::1] o_sa, long long[::1] o_sp, long long step,
                 long long n_actions, double gamma, double lr, double lr_w, double tau,
                 double ortho_weight):
    # Row-major (S, d) blocks are column-major (d, S) matrices to BLAS.
    cdef int n_s = phi.shape[1], d = phi.shape[2], one = 1
    cdef Py_ssize_t nb = sa.shape[0], n_o = o_sa.shape[0]
    cdef int no = <int>n_o
    cdef Py_ssize_t i, j, k, p, blk, tbk, zi
    cdef long long prev = step - 1
    cdef double delta, c, loss = 0.0, ortho = 0.0, inv_nb = 1.0 / nb, alpha
    cdef double c0 = (1.0 - gamma) * inv_nb, pairs, diag_sum = 0.0, zero = 0.0, unit = 1.0
    cdef double[:, ::1] coef = np.empty((nb, n_s))
    cdef double[:, ::1] g_w = np.zeros((nb, d))
    cdef double[::1] mv = np.empty(n_s)
    cdef double[::1] tv = np.empty(n_s)
    cdef double[:, ::1] rows
    cdef double[:, ::1] gram
    cdef double[:, ::1] g_o
    cdef bint do_ortho = ortho_weight > 0 and n_o > 1
    cdef char *tr = b"T"
    cdef char *nt = b"N"

    with nogil:
        # reads, all at the pre-step parameters
        for i in range(nb):
            tbk = s_next[i] * n_actions + actions[z[i], s_next[i]]
            _sync_block(phi, phi_t, bias, bias_t, last_blk, tbk, prev, tau)
            _sync_w(w, w_t, last_w, z[i], prev, tau)
        for i in range(nb):
            zi = z[i]
            blk = sa[i]
            tbk = s_next[i] * n_actions + actions[zi, s_next[i]]
            dgemv(tr, &d, &n_s, &unit, &phi[blk, 0, 0], &d, &w[zi, 0], &one, &zero, &mv[0], &one)
            dgemv(tr, &d, &n_s, &unit, &phi_t[tbk, 0, 0], &d, &w_t[zi, 0], &one, &zero, &tv[0], &one)
            for p in range(n_s):
                mv[p] = mv[p] + bias[blk, p]
                delta = mv[p] - gamma * (tv[p] + bias_t[tbk, p])
                loss = loss + (0.5 * delta * delta) * rho_s[p]
                coef[i, p] = (rho_s[p] * delta) * inv_nb
            loss = loss - (1.0 - gamma) * mv[s[i]]
            dgemv(nt, &d, &n_s, &unit, &phi[blk, 0, 0], &d, &coef[i, 0], &one, &zero, &g_w[i, 0], &one)
            for j in range(d):
                g_w[i, j] = g_w[i, j] - c0 * phi[blk, s[i], j]

    if do_ortho:
        rows = np.empty((n_o, d))
        gram = np.empty((n_o, n_o))
        g_o = np.empty((n_o, d))
        pairs = <double>(n_o * (n_o - 1))
        with nogil:
            for i in range(n_o):
                for j in range(d):
                    rows[i, j] = phi[o_sa[i], o_sp[i], j]
            dgemm(tr, nt, &no, &no, &d, &unit, &rows[0, 0], &d, &rows[0, 0], &d, &zero, &gram[0, 0], &no)
            for i in range(n_o):
                diag_sum = diag_sum + gram[i, i]
                gram[i, i] = 0.0
            for i in range(n_o):
                for k in range(n_o):
                    ortho = ortho + gram[i, k] * gram[i, k]
            ortho = ortho / pairs - 2.0 * diag_sum / n_o + d
            dgemm(nt, nt, &d, &no, &no, &unit, &rows[0, 0], &d, &gram[0, 0], &no, &zero, &g_o[0, 0], &d)
            for i in range(n_o):
                for j in range(d):
                    g_o[i, j] = (4.0 / pairs) * g_o[i, j] - (4.0 / n_o) * rows[i, j]

    with nogil:
        # writes, in sample order
        for i in range(nb):
            _sync_block(phi, phi_t, bias, bias_t, last_blk, sa[i], prev, tau)
        for i in range(n_o):
            _sync_block(phi, phi_t, bias, bias_t, last_blk, o_sa[i], prev, tau)
        for i in range(nb):
            _sync_w(w, w_t, last_w, z[i], prev, tau)
        alpha = -lr
        for i in range(nb):
            dger(&d, &n_s, &alpha, &w[z[i], 0], &one, &coef[i, 0], &one, &phi[sa[i], 0, 0], &d)
        for i in range(nb):
            zi = z[i]
            for j in range(d):
                phi[sa[i], s[i], j] = phi[sa[i], s[i], j] + (lr * c0) * w[zi, j]
        if do_ortho:
            for i in range(n_o):
                for j in range(d):
                    phi[o_sa[i], o_sp[i], j] = phi[o_sa[i], o_sp[i], j] + (-lr * ortho_weight) * g_o[i, j]
        for i in range(nb):
            for p in range(n_s):
                bias[sa[i], p] = bias[sa[i], p] + (-lr) * coef[i, p]
        for i in range(nb):
            bias[sa[i], s[i]] = bias[sa[i], s[i]] + lr * c0
        for i in range(nb):
            zi = z[i]
            for j in range(d):
                w[zi, j] = w[zi, j] + (-lr_w) * g_w[i, j]
    return loss * inv_nb, ortho


def dual_gda(double[:, ::1] phi, double[::1] bias, double[::1] c, double[::1] w, double[::1] lam,
             double eta_w, double eta_l, long long iters, double feas_tol):
    cdef Py_ssize_t n = phi.shape[0], d = phi.shape[1], i, j
    cdef long long it
    cdef double v, vmin, viol = 0.0, obj, best_obj = -1e308
    cdef bint found = False
    cdef double[::1] grad = np.empty(d)
    best = np.zeros(d)
    cdef double[::1] bw = best
    with nogil:
        for it in range(iters):
            for j in range(d):
                grad[j] = -c[j]
            viol = 0.0
            vmin = 1e308
            for i in range(n):
                v = bias[i]
                for j in range(d):
                    v = v + phi[i, j] * w[j]
                if v < vmin:
                    vmin = v
                if v < 0.0:
                    viol = viol - v
                    lam[i] = lam[i] + eta_l * (-v)
                if v <= 0.0:
                    for j in range(d):
                        grad[j] = grad[j] - lam[i] * phi[i, j]
            if -vmin <= feas_tol:
                obj = 0.0
                for j in range(d):
                    obj = obj + c[j] * w[j]
                if obj > best_obj:
                    best_obj = obj
                    found = True
                    for j in range(d):
                        bw[j] = w[j]
            for j in range(d):
                w[j] = w[j] - eta_w * grad[j]
    if not found:
        return None, -np.inf, viol, iters
    return best, best_obj, viol, iters
