"""Ground-truth environments: discretized LTI plants, PID loops and a
nonlinear two-tank level process."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from . import kernels


def discretize_zoh(A_c, B_c, dt):
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float).reshape(A_c.shape[0], -1)
    n, m = B_c.shape
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = A_c
    blk[:n, n:] = B_c
    E = linalg.expm(blk * dt)
    return E[:n, :n], E[:n, n:]


@dataclass
class StateSpaceModel:
    """Strictly proper SISO plant ``x+ = Ax + Bu``, ``y = Cx``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float = 1.0
    x: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        self.B = np.asarray(self.B, dtype=float).reshape(n, 1)
        self.C = np.asarray(self.C, dtype=float).reshape(1, n)
        self.x = np.zeros(n) if self.x is None else np.asarray(self.x, dtype=float).reshape(n)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def reset(self, x0=None):
        self.x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float).reshape(self.n)

    def output(self):
        return float(self.C[0] @ self.x)

    def lti_step(self, u):
        """Return ``y = Cx`` then advance ``x <- Ax + Bu``."""
        y = float(self.C[0] @ self.x)
        self.x = self.A @ self.x + self.B[:, 0] * u
        return y

    def simulate(self, u, x0=None):
        """Output sequence for an input sequence from ``x0`` (default zero)."""
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float)
        if x0 is None:
            return kernels.lti_sim(self.A, self.B, self.C, 0.0, u)
        ys = np.empty(len(u))
        for t, ut in enumerate(u):
            ys[t] = self.C[0] @ x
            x = self.A @ x + self.B[:, 0] * ut
        return ys

    def markov(self, T):
        """Impulse response ``p_0..p_{T-1}`` with ``p_0 = 0``, ``p_k = C A^{k-1} B``."""
        u = np.zeros(T)
        u[0] = 1.0
        return kernels.lti_sim(self.A, self.B, self.C, 0.0, u)

    def copy(self):
        return StateSpaceModel(self.A.copy(), self.B.copy(), self.C.copy(), self.dt, self.x.copy())

    @classmethod
    def from_continuous_tf(cls, num, den, dt):
        A, B, C, D = signal.tf2ss(num, den)
        if np.any(np.abs(D) > 0):
            raise ValueError("transfer function must be strictly proper")
        Ad, Bd = discretize_zoh(A, B, dt)
        return cls(Ad, Bd, C, dt)

    @classmethod
    def random_stable(cls, n, rng, rho_max=0.95, rho_min=0.1, dt=1.0):
        """Random controllable/observable stable plant with a well-spread spectrum.

        Eigenvalues are drawn as real poles or complex pairs with modulus in
        ``[rho_min, rho_max]``; the realization is then mixed by a random
        well-conditioned similarity transform.
        """
        eigs = []
        while len(eigs) < n:
            r = rng.uniform(rho_min, rho_max)
            if n - len(eigs) >= 2 and rng.random() < 0.5:
                th = rng.uniform(0.2, 2.8)
                eigs.append(("c", r, th))
                eigs.append(None)
            else:
                eigs.append(("r", r * rng.choice([-1.0, 1.0]), 0.0))
        J = np.zeros((n, n))
        i = 0
        while i < n:
            kind, r, th = eigs[i]
            if kind == "c":
                J[i:i + 2, i:i + 2] = r * np.array([[math.cos(th), -math.sin(th)],
                                                    [math.sin(th), math.cos(th)]])
                i += 2
            else:
                J[i, i] = r
                i += 1
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        S = Q @ np.diag(rng.uniform(0.5, 2.0, n))
        A = S @ J @ np.linalg.inv(S)
        B = rng.standard_normal(n)
        C = rng.standard_normal(n)
        B /= np.linalg.norm(B)
        C /= np.linalg.norm(C)
        return cls(A, B, C, dt)


def benchmark_plant(dt=0.1):
    """``P(s) = (1 - s) / (s + 1)^3`` discretized with a zero-order hold."""
    return StateSpaceModel.from_continuous_tf([-1.0, 1.0], [1.0, 3.0, 3.0, 1.0], dt)


def is_controllable(A, B, tol=1e-9):
    n = A.shape[0]
    K = np.hstack([np.linalg.matrix_power(A, k) @ B.reshape(n, 1) for k in range(n)])
    s = np.linalg.svd(K, compute_uv=False)
    return s[-1] > tol * s[0]


def is_observable(A, C, tol=1e-9):
    return is_controllable(A.T, C.reshape(1, -1).T, tol)


@dataclass
class PidController:
    """Velocity-form PID with output clamping.

    ``u_t = u_{t-1} + kp (e_t - e_{t-1}) + ki e_t dt + kd (e_t - 2 e_{t-1} + e_{t-2}) / dt``.
    Storing the clamped output doubles as anti-windup.
    """

    kp: float
    ki: float
    kd: float = 0.0
    dt: float = 1.0
    u_min: float = -math.inf
    u_max: float = math.inf
    e_prev: float = 0.0
    e_prev2: float = 0.0
    u_prev: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be below u_max")

    def reset(self, u0=0.0, e0=0.0):
        self.u_prev = float(u0)
        self.e_prev = self.e_prev2 = float(e0)

    def increment(self, e):
        """Unclamped ``delta u`` for error ``e`` (no state change)."""
        d = self.kp * (e - self.e_prev) + self.ki * e * self.dt
        if self.kd:
            d += self.kd * (e - 2.0 * self.e_prev + self.e_prev2) / self.dt
        return d

    def commit(self, e, u):
        self.e_prev2 = self.e_prev
        self.e_prev = e
        self.u_prev = u


def pid_step(pid, e, extra=0.0):
    """Advance the PID by one sample; ``extra`` is added to the increment."""
    u = pid.u_prev + pid.increment(e) + extra
    u = min(max(u, pid.u_min), pid.u_max)
    pid.commit(e, u)
    return u


# -- two-tank process --------------------------------------------------------

@dataclass
class TankParams:
    tau_p: float = 2.0
    tau_in: float = 3.0
    tau_out: float = 5.0
    tau_m: float = 1.0
    r_tank: float = 0.25
    r_pipe: float = 0.015
    f_c: float = 0.6
    f_max: float = 4e-3
    g: float = 9.81
    noise_var: float = 0.015
    dt: float = 0.5
    substeps: int = 5

    def __post_init__(self):
        for name in ("tau_p", "tau_in", "tau_out", "tau_m", "r_tank", "r_pipe", "f_c",
                     "f_max", "g", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tank parameter {name} must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def area_tank(self):
        return math.pi * self.r_tank**2

    @property
    def k_out(self):
        """Outflow coefficient: ``f_out = k_out * sqrt(level)`` at equilibrium."""
        return math.pi * self.r_pipe**2 * self.f_c * math.sqrt(2.0 * self.g)

    def equilibrium_inflow(self, level):
        return self.k_out * math.sqrt(max(level, 0.0))


@dataclass
class TankState:
    p: float
    f_in: float
    f_out: float
    level: float
    m_meas: float

    def as_array(self):
        return np.array([self.p, self.f_in, self.f_out, self.level, self.m_meas])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))

    @classmethod
    def steady(cls, params, level):
        f = params.equilibrium_inflow(level)
        return cls(100.0 * f / params.f_max, f, f, level, level)


@dataclass
class TankGains:
    """Default PID gains for the cascade (hand tuned, see README)."""

    level_kp: float = 1e-2
    level_ki: float = 2e-4
    flow_kp: float = 1.5e4
    flow_ki: float = 2.5e4


class TankEnv:
    """Two-tank level process with cascaded level/flow PID controllers.

    The level PID runs in incremental form and accepts an additive increment
    ``delta_u_q`` on its output (the requested inflow, m^3/s). Measurement noise
    is additive Gaussian on the reported level.
    """

    def __init__(self, params=None, gains=None, seed=None):
        self.params = params or TankParams()
        self.gains = gains or TankGains()
        self.rng = np.random.default_rng(seed)
        p = self.params
        self.level_pid = PidController(self.gains.level_kp, self.gains.level_ki, 0.0, p.dt,
                                       0.0, p.f_max)
        self.flow_pid = PidController(self.gains.flow_kp, self.gains.flow_ki, 0.0, p.dt,
                                      0.0, 100.0)
        self.x = np.zeros(5)
        self.last_measurement = 0.0
        self.reset(0.5)

    def reset(self, level0=0.5, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        st = TankState.steady(self.params, level0)
        self.x = st.as_array()
        self.level_pid.reset(st.f_in, 0.0)
        self.flow_pid.reset(st.p, 0.0)
        self.last_measurement = self._measure()
        return self.last_measurement

    @property
    def state(self):
        return TankState.from_array(self.x)

    def _measure(self):
        noise = math.sqrt(self.params.noise_var) * self.rng.standard_normal() \
            if self.params.noise_var > 0 else 0.0
        return float(self.x[4] + noise)

    def step(self, level_sp, delta_u_q=0.0):
        """Advance one sample; see :func:`tank_step`."""
        return tank_step(self, level_sp, delta_u_q)


def tank_step(env, level_sp, delta_u_q=0.0):
    """One ``dt`` step of the cascade.

    The level PID acts on the last noisy measurement, the flow PID on the
    (filtered, noise-free) inflow, and the ODEs are integrated with RK4 at a
    fixed sub-step while the pump setpoint is held.

    Returns:
        ``(state, measured_level)`` after the step.
    """
    p = env.params
    e_level = level_sp - env.last_measurement
    f_in_sp = pid_step(env.level_pid, e_level, delta_u_q)
    p_sp = pid_step(env.flow_pid, f_in_sp - env.x[1])
    kernels.tank_rk4(env.x, p_sp, p.tau_p, p.tau_in, p.tau_out, p.tau_m, p.area_tank,
                     p.k_out, p.f_max, p.dt, p.substeps)
    np.clip(env.x[0:1], 0.0, 100.0, out=env.x[0:1])
    if not np.all(np.isfinite(env.x)):
        raise FloatingPointError("tank state became non-finite")
    env.last_measurement = env._measure()
    return env.state, env.last_measurement


# -- rewards -----------------------------------------------------------------

@dataclass
class RewardConfig:
    delta: float = 0.05
    effort_weight: float = 0.1


def make_reward(kind, cfg=None):
    """Reward callback ``r(e, du)``.

    ``"sparse"``: 1 when ``|e| < delta`` else 0. ``"tank"``:
    ``-|e| - effort_weight * |du|``.
    """
    cfg = cfg or RewardConfig()
    if kind == "sparse":
        if not cfg.delta > 0:
            raise ValueError("sparse reward needs delta > 0")
        delta = cfg.delta
        return lambda e, du=0.0: 1.0 if abs(e) < delta else 0.0
    if kind == "tank":
        if cfg.effort_weight < 0:
            raise ValueError("effort_weight must be nonnegative")
        lam = cfg.effort_weight
        return lambda e, du=0.0: -abs(e) - lam * abs(du)
    raise ValueError(f"unknown reward kind {kind!r}")


def integrate_open_loop(params, x0, p_sp, horizon, substeps):
    """Integrate the tank ODEs for ``horizon`` seconds at a fixed pump setpoint.

    Used for the step-size convergence study; no controllers are involved.
    """
    x = np.array(x0, dtype=float)
    kernels.tank_rk4(x, p_sp, params.tau_p, params.tau_in, params.tau_out, params.tau_m,
                     params.area_tank, params.k_out, params.f_max, horizon, substeps)
    return x


def rk4_convergence_ratio(params=None, level0=0.3, p_sp=80.0, horizon=20.0, substeps=80):
    """``|x_h - x_{h/2}| / |x_{h/2} - x_{h/4}|``, about 16 for a fourth-order method."""
    params = params or TankParams()
    x0 = TankState(0.0, 0.0, 0.0, level0, level0).as_array()
    a, b, c = (integrate_open_loop(params, x0, p_sp, horizon, substeps * m) for m in (1, 2, 4))
    return float(np.linalg.norm(a - b) / np.linalg.norm(b - c))


def drain_trajectory(params=None, level0=0.8, steps=200):
    """Noise-free level samples with the pump switched off from steady state."""
    params = params or TankParams()
    x = TankState.steady(params, level0).as_array()
    out = np.empty(steps + 1)
    out[0] = x[3]
    for t in range(steps):
        kernels.tank_rk4(x, 0.0, params.tau_p, params.tau_in, params.tau_out, params.tau_m,
                         params.area_tank, params.k_out, params.f_max, params.dt,
                         params.substeps)
        out[t + 1] = x[3]
    return out
