# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled log-domain Sinkhorn-Knopp kernel.

Same contract as ``psco._sinkhorn_py.sinkhorn_log``; results agree to
rounding. The inner loops are plain pointer loops so the C compiler can
vectorize ``exp`` (built with finite-math flags: nothing here may produce or
compare against an infinity, hence maxima start from the first element).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()


cdef inline double _row_lse(const double* a, const double* g, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t j
    cdef double mx = a[0] + g[0], s = 0.0, v
    for j in range(1, m):
        v = a[j] + g[j]
        mx = v if v > mx else mx
    for j in range(m):
        s += exp(a[j] + g[j] - mx)
    return mx + log(s)


cdef void _col_lse(const double* L, const double* f, Py_ssize_t n, Py_ssize_t m,
                   double* mx, double* out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef const double* a
    cdef double fi, v
    for j in range(m):
        mx[j] = L[j] + f[0]
        out[j] = 0.0
    for i in range(1, n):
        a = L + i * m
        fi = f[i]
        for j in range(m):
            v = a[j] + fi
            mx[j] = v if v > mx[j] else mx[j]
    for i in range(n):
        a = L + i * m
        fi = f[i]
        for j in range(m):
            out[j] += exp(a[j] + fi - mx[j])
    for j in range(m):
        out[j] = mx[j] + log(out[j])


def sinkhorn_log(const double[:, ::1] L, const double[::1] log_r, const double[::1] log_c,
                 long max_iters, double tol):
    """Scale ``exp(L)`` to row marginals ``exp(log_r)`` and column marginals ``exp(log_c)``.

    ``L`` is the similarity matrix already divided by epsilon. Returns
    ``(P, f, g, iterations, violation)``.
    """
    cdef Py_ssize_t n = L.shape[0], m = L.shape[1], i, j
    cdef long it, used = 0
    cdef double viol, d, lse
    f_arr = np.zeros(n)
    g_arr = np.zeros(m)
    lse_r_arr = np.empty(n)
    work_arr = np.empty(m)
    lse_c_arr = np.empty(m)
    P_arr = np.empty((n, m))
    cdef double[::1] f = f_arr, g = g_arr, lse_r = lse_r_arr, work = work_arr, lse_c = lse_c_arr
    cdef double[:, ::1] P = P_arr
    cdef const double* Lp = &L[0, 0]

    with nogil:
        for it in range(max_iters):
            for i in range(n):
                lse_r[i] = _row_lse(Lp + i * m, &g[0], m)
            if it > 0:
                # columns are exact after the previous column pass
                viol = 0.0
                for i in range(n):
                    d = fabs(exp(f[i] + lse_r[i]) - exp(log_r[i]))
                    viol = d if d > viol else viol
                if viol < tol:
                    break
            for i in range(n):
                f[i] = log_r[i] - lse_r[i]
            _col_lse(Lp, &f[0], n, m, &work[0], &lse_c[0])
            for j in range(m):
                g[j] = log_c[j] - lse_c[j]
            used = it + 1

        for i in range(n):
            lse_r[i] = 0.0
        for j in range(m):
            lse_c[j] = 0.0
        for i in range(n):
            for j in range(m):
                d = exp(L[i, j] + f[i] + g[j])
                P[i, j] = d
                lse_r[i] += d
                lse_c[j] += d
        viol = 0.0
        for i in range(n):
            d = fabs(lse_r[i] - exp(log_r[i]))
            viol = d if d > viol else viol
        for j in range(m):
            d = fabs(lse_c[j] - exp(log_c[j]))
            viol = d if d > viol else viol
    return P_arr, f_arr, g_arr, used, viol
