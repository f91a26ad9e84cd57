# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay numerically identical to ``_pykernels``."""
import numpy as np

from libc.math cimport sqrt


cdef inline void _tank_deriv(double p_sp, double tau_p, double tau_in,
                             double tau_out, double tau_m, double area_tank,
                             double k_out, double f_max, double* s,
                             double* d) noexcept nogil:
    cdef double lvl = s[3]
    if lvl < 0.0:
        lvl = 0.0
    d[0] = (p_sp - s[0]) / tau_p
    d[1] = (f_max * s[0] / 100.0 - s[1]) / tau_in
    d[2] = (k_out * sqrt(lvl) - s[2]) / tau_out
    d[3] = (s[1] - s[2]) / area_tank
    d[4] = (s[3] - s[4]) / tau_m


def tank_rk4(double[::1] x, double p_sp, double tau_p, double tau_in,
             double tau_out, double tau_m, double area_tank, double k_out,
             double f_max, double dt, int substeps):
    cdef double h = dt / substeps
    cdef double s[5]
    cdef double tmp[5]
    cdef double k1[5]
    cdef double k2[5]
    cdef double k3[5]
    cdef double k4[5]
    cdef int i, it
    for i in range(5):
        s[i] = x[i]
    with nogil:
        for it in range(substeps):
            _tank_deriv(p_sp, tau_p, tau_in, tau_out, tau_m, area_tank, k_out, f_max, s, k1)
            for i in range(5):
                tmp[i] = s[i] + 0.5 * h * k1[i]
            _tank_deriv(p_sp, tau_p, tau_in, tau_out, tau_m, area_tank, k_out, f_max, tmp, k2)
            for i in range(5):
                tmp[i] = s[i] + 0.5 * h * k2[i]
            _tank_deriv(p_sp, tau_p, tau_in, tau_out, tau_m, area_tank, k_out, f_max, tmp, k3)
            for i in range(5):
                tmp[i] = s[i] + h * k3[i]
            _tank_deriv(p_sp, tau_p, tau_in, tau_out, tau_m, area_tank, k_out, f_max, tmp, k4)
            for i in range(5):
                s[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if s[3] < 0.0:
                s[3] = 0.0
    for i in range(5):
        x[i] = s[i]


def ddsim(const double[::1] g_u, const double[::1] g_y, const double[::1] u_win,
          const double[::1] y_win, const double[::1] u_seq):
    cdef Py_ssize_t L = g_u.shape[0]
    cdef Py_ssize_t T = u_seq.shape[0]
    cdef double[::1] uw = np.array(u_win, dtype=float, copy=True)
    cdef double[::1] yw = np.array(y_win, dtype=float, copy=True)
    out_arr = np.empty(T)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, i, j, head = 0
    cdef double acc
    with nogil:
        for k in range(T):
            acc = 0.0
            for i in range(L):
                j = head + i
                if j >= L:
                    j -= L
                acc = acc + (g_u[i] * uw[j] + g_y[i] * yw[j])
            out[k] = acc
            uw[head] = u_seq[k]
            yw[head] = acc
            head += 1
            if head == L:
                head = 0
    return out_arr


def lti_sim(const double[:, ::1] A, const double[::1] B, const double[::1] C, double D,
            const double[::1] u):
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t T = u.shape[0]
    cdef double[::1] x = np.zeros(n)
    cdef double[::1] xn = np.zeros(n)
    y_arr = np.empty(T)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t t, i, j
    cdef double acc
    with nogil:
        for t in range(T):
            acc = D * u[t]
            for i in range(n):
                acc += C[i] * x[i]
            y[t] = acc
            for i in range(n):
                acc = B[i] * u[t]
                for j in range(n):
                    acc += A[i, j] * x[j]
                xn[i] = acc
            for i in range(n):
                x[i] = xn[i]
    return y_arr
