"""Data-driven Youla-Kucera controller and its state-space oracle.

The controller keeps an internal model of the plant in the form of a Hankel
window. At each sample the model predicts the plant output ``y_hat`` caused
by past controller outputs, and the stable parameter ``Q`` is driven with
``r_hat = e + y_hat``, where ``e = r - y`` uses the measured output. For an
exact model ``r_hat = r`` and the loop behaves like ``Q`` in open loop, which
is why any stable ``Q`` yields a stable closed loop for a stable plant.
"""
from __future__ import annotations

import math

import numpy as np

from . import hankel
from .episode import ABORT_PENALTY, EpisodeLog, is_unstable
from .stable_ops import StableLinearOperator, StableNonlinearOperator, q_lti_step, \
    q_nonlinear_step


def q_step(q, r_hat):
    if isinstance(q, StableNonlinearOperator):
        return q_nonlinear_step(q, r_hat)
    if isinstance(q, StableLinearOperator):
        return q_lti_step(q, r_hat)
    return q.step(r_hat)


class YoulaController:
    """Controller state for :func:`yk_step`.

    Args:
        sys: Hankel model from input ``u`` (the Q output) to output ``y``.
        q: stable operator with a ``step``-compatible interface.
        window: initial internal-model window (zeros by default).
        mode: ``"absolute"`` returns Q's output; ``"incremental"`` treats it
            as an increment added to the previous applied input.
        u_min, u_max: actuator limits used in incremental mode.
        check: run the full minimum-norm solve with the consistency check at
            every step instead of the precomputed predictor row.
        q_limit: optional bound on ``|Q output|``. The clamped value is what
            the internal model sees, which keeps the loop through the model
            bounded when the actuator saturates (internal-model anti-windup).
    """

    def __init__(self, sys, q, window=None, mode="absolute", u_min=-math.inf,
                 u_max=math.inf, check=False, q_limit=math.inf):
        if mode not in ("absolute", "incremental"):
            raise ValueError(f"mode must be 'absolute' or 'incremental', got {mode!r}")
        self.sys = sys
        self.q = q
        self.window = window.copy() if window is not None else hankel.Window.zeros(sys.L)
        if self.window.L != sys.L:
            raise hankel.DimensionError(f"window length {self.window.L} != L={sys.L}")
        self.mode = mode
        self.u_min, self.u_max = float(u_min), float(u_max)
        self.check = check
        self.q_limit = float(q_limit)
        self.last_u = 0.0
        self.last_q = 0.0
        self.last_y_hat = 0.0
        self.last_r_hat = 0.0

    def reset(self):
        self.window = hankel.Window.zeros(self.sys.L)
        self.q.reset()
        self.last_u = self.last_q = self.last_y_hat = self.last_r_hat = 0.0

    def predict(self):
        if self.check:
            return hankel.predict_next(self.sys, self.window)
        return self.sys.predict_stacked(self.window.stacked())


def yk_step(ctrl, r_t, y_t, du_pid=0.0):
    """One sample of the data-driven YK controller.

    The window holds past Q outputs and the internal-model predictions that
    went with them; measured outputs only enter through ``e``.

    Returns:
        The applied input. In incremental mode this is
        ``clamp(u_{t-1} + dq + du_pid)`` with ``dq`` the Q output.
    """
    e = r_t - y_t
    y_hat = ctrl.predict()
    r_hat = e + y_hat
    v = q_step(ctrl.q, r_hat)
    if abs(v) > ctrl.q_limit:
        v = math.copysign(ctrl.q_limit, v)
    ctrl.window.push(v, y_hat)
    ctrl.last_q, ctrl.last_y_hat, ctrl.last_r_hat = v, y_hat, r_hat
    if ctrl.mode == "incremental":
        u = min(max(ctrl.last_u + v + du_pid, ctrl.u_min), ctrl.u_max)
    else:
        u = v
    ctrl.last_u = u
    return u


class YkOracle:
    """Explicit state-space interconnection of ``K = Q / (1 - QP)`` and ``P``.

    ``q`` is any object exposing ``A_q, B_q, C_q, D_q``; its matrices are
    copied so the oracle owns its state.
    """

    def __init__(self, plant, q):
        self.A, self.B, self.C = plant.A.copy(), plant.B[:, 0].copy(), plant.C[0].copy()
        self.Aq, self.Bq = np.array(q.A_q, dtype=float), np.asarray(q.B_q, dtype=float).ravel()
        self.Cq, self.Dq = np.asarray(q.C_q, dtype=float).ravel(), float(q.D_q)
        self.x = np.zeros(len(self.B))
        self.x_hat = np.zeros(len(self.B))
        self.z = np.zeros(len(self.Bq))

    def closed_loop_matrix(self):
        """Transition matrix of ``(x, x_hat, z)`` under zero reference."""
        n, m = len(self.x), len(self.z)
        M = np.zeros((2 * n + m, 2 * n + m))
        # r_hat = -C x + C x_hat, u = Cq z + Dq r_hat
        g = np.concatenate([-self.Dq * self.C, self.Dq * self.C, self.Cq])
        M[:n, :n] = self.A
        M[:n] += np.outer(self.B, g)
        M[n:2 * n, n:2 * n] = self.A
        M[n:2 * n] += np.outer(self.B, g)
        M[2 * n:, :n] = -np.outer(self.Bq, self.C)
        M[2 * n:, n:2 * n] = np.outer(self.Bq, self.C)
        M[2 * n:, 2 * n:] = self.Aq
        return M


def yk_oracle_step(oracle, r_t):
    """Advance the interconnection one sample; returns ``(u_t, y_t)``."""
    y = float(oracle.C @ oracle.x)
    y_hat = float(oracle.C @ oracle.x_hat)
    r_hat = r_t - y + y_hat
    u = float(oracle.Cq @ oracle.z) + oracle.Dq * r_hat
    oracle.z = oracle.Aq @ oracle.z + oracle.Bq * r_hat
    oracle.x = oracle.A @ oracle.x + oracle.B * u
    oracle.x_hat = oracle.A @ oracle.x_hat + oracle.B * u
    return u, y


def yk_convolution(q_imp, p_imp, r):
    """``u_t = (q * (e + p * u))_t`` with ``e = r - p * u``, by direct sums.

    ``p_imp[0]`` must be zero (strictly proper plant) so the recursion is causal.
    """
    q_imp, p_imp, r = (np.asarray(a, dtype=float) for a in (q_imp, p_imp, r))
    if p_imp[0] != 0.0:
        raise ValueError("plant impulse response must start with 0")
    T = len(r)
    u = np.zeros(T)
    y = np.zeros(T)
    y_hat = np.zeros(T)
    r_hat = np.zeros(T)
    for t in range(T):
        pu = sum(p_imp[k] * u[t - k] for k in range(1, min(t, len(p_imp) - 1) + 1))
        y[t] = pu
        y_hat[t] = pu
        r_hat[t] = (r[t] - y[t]) + y_hat[t]
        u[t] = sum(q_imp[k] * r_hat[t - k] for k in range(0, min(t, len(q_imp) - 1) + 1))
    return u


def closed_loop_run(plant, ctrl, reference, steps, noise_std=0.0, rng=None, reward=None,
                    gamma_rl=0.99):
    """Run the YK controller against an LTI plant and log every sample.

    Args:
        plant: object with ``output()`` and ``lti_step(u)`` (e.g. ``StateSpaceModel``).
        ctrl: :class:`YoulaController`.
        reference: callable ``t -> r_t``.
        noise_std: additive Gaussian noise on the measured output.
        reward: callable ``(e, du) -> float``; zero reward when omitted.

    Returns:
        Closed :class:`EpisodeLog`; non-finite or huge signals abort the run
        and mark the log with the step index.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    log = EpisodeLog(gamma_rl, getattr(plant, "dt", 1.0))
    for t in range(steps):
        y = plant.output()
        if noise_std > 0:
            y += noise_std * rng.standard_normal()
        r = float(reference(t))
        u_prev = ctrl.last_u
        u = yk_step(ctrl, r, y)
        e = r - y
        if is_unstable(y) or is_unstable(u):
            log.append(r, y, u, e, ABORT_PENALTY)
            log.abort(t)
            break
        log.append(r, y, u, e, reward(e, u - u_prev) if reward else 0.0)
        plant.lti_step(u)
    return log.close()
