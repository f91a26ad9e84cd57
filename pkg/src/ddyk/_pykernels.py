"""Pure-Python reference implementations of the hot loops.

These mirror ``_ckernels.pyx`` line for line and are used when the compiled
extension is unavailable (or when ``DDYK_PURE_PYTHON=1``).
"""
import math

import numpy as np


def tank_rk4(x, p_sp, tau_p, tau_in, tau_out, tau_m, area_tank, k_out, f_max,
             dt, substeps):
    """Advance the five tank states ``[p, f_in, f_out, level, m]`` in place."""
    h = dt / substeps
    p, f_in, f_out, lvl, m = (float(v) for v in x)

    def deriv(p, f_in, f_out, lvl, m):
        return (
            (p_sp - p) / tau_p,
            (f_max * p / 100.0 - f_in) / tau_in,
            (k_out * math.sqrt(lvl if lvl > 0.0 else 0.0) - f_out) / tau_out,
            (f_in - f_out) / area_tank,
            (lvl - m) / tau_m,
        )

    for _ in range(substeps):
        k1 = deriv(p, f_in, f_out, lvl, m)
        k2 = deriv(p + 0.5 * h * k1[0], f_in + 0.5 * h * k1[1],
                   f_out + 0.5 * h * k1[2], lvl + 0.5 * h * k1[3],
                   m + 0.5 * h * k1[4])
        k3 = deriv(p + 0.5 * h * k2[0], f_in + 0.5 * h * k2[1],
                   f_out + 0.5 * h * k2[2], lvl + 0.5 * h * k2[3],
                   m + 0.5 * h * k2[4])
        k4 = deriv(p + h * k3[0], f_in + h * k3[1], f_out + h * k3[2],
                   lvl + h * k3[3], m + h * k3[4])
        p += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        f_in += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        f_out += h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        lvl += h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        m += h / 6.0 * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
        if lvl < 0.0:
            lvl = 0.0
    x[0] = p
    x[1] = f_in
    x[2] = f_out
    x[3] = lvl
    x[4] = m


def ddsim(g_u, g_y, u_win, y_win, u_seq):
    """Continue a Hankel-model trajectory driven by ``u_seq``.

    ``g_u`` and ``g_y`` are the halves of the one-step predictor row. Returns
    the predicted outputs; ``y[k]`` pairs with ``u_seq[k]``.
    """
    L = len(g_u)
    uw = [float(v) for v in u_win]
    yw = [float(v) for v in y_win]
    gu = [float(v) for v in g_u]
    gy = [float(v) for v in g_y]
    out = np.empty(len(u_seq))
    head = 0
    for k in range(len(u_seq)):
        acc = 0.0
        for i in range(L):
            j = (head + i) % L
            acc += gu[i] * uw[j] + gy[i] * yw[j]
        out[k] = acc
        uw[head] = float(u_seq[k])
        yw[head] = acc
        head = (head + 1) % L
    return out


def lti_sim(A, B, C, D, u):
    """Zero-initial-state response of ``x+ = Ax + Bu, y = Cx + Du``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(-1)
    C = np.asarray(C, dtype=float).reshape(-1)
    n = A.shape[0]
    x = np.zeros(n)
    y = np.empty(len(u))
    for t, ut in enumerate(u):
        y[t] = C @ x + D * ut
        x = A @ x + B * ut
    return y
