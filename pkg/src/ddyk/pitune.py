"""Fixed-structure PI tuning under a data-driven stability certificate.

For a PI gain pair the closed-loop maps ``S = 1/(1+PK)``, ``KS`` and ``PS`` are
simulated through the Hankel model; stable realizations ``X, Y, W`` are fitted
to them and the affine conditions ``X + PY = 1``, ``W - PX = 0`` are checked
on the data. A gain pair is certified when every residual is small and every
fitted transition matrix has spectral radius within the requested margin.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import hankel
from .episode import ABORT_PENALTY, EpisodeLog, is_unstable
from .rl import Policy, train
from .stable_ops import ParameterizationError, StableLinearOperator

log = logging.getLogger(__name__)

TOL_FEAS = 1e-3
ERA_RTOL = 1e-8
ERA_ATOL = 1e-10
RHO_CLIP = 0.999


@dataclass
class PiParams:
    kp: float
    ki: float
    dt: float = 1.0

    def __post_init__(self):
        self.kp, self.ki, self.dt = float(self.kp), float(self.ki), float(self.dt)
        if not (math.isfinite(self.kp) and math.isfinite(self.ki)):
            raise ValueError("PI gains must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def to_vector(self):
        return np.array([self.kp, self.ki])

    def from_vector(self, v):
        return PiParams(v[0], v[1], self.dt)

    def impulse_response(self, T):
        """``K(z) = kp + ki dt z / (z - 1)``: ``k_0 = kp + ki dt``, ``k_t = ki dt``."""
        h = np.full(T, self.ki * self.dt)
        h[0] += self.kp
        return h

    def filter(self, e):
        """Apply ``K`` to a sequence from rest (velocity form)."""
        u = np.empty(len(e))
        e_prev = u_prev = 0.0
        for t, et in enumerate(e):
            u_prev = pi_policy_step(self, et, e_prev, u_prev)
            e_prev = et
            u[t] = u_prev
        return u


def pi_policy_step(pi, e_t, e_prev, u_prev):
    """``u_t = kp (e_t - e_{t-1}) + ki e_t dt + u_{t-1}``."""
    return pi.kp * (e_t - e_prev) + pi.ki * e_t * pi.dt + u_prev


def closed_loop_matrix(pi, plant):
    """Transition matrix of plant plus PI (integrator state dropped when ``ki = 0``).

    With ``w+ = w + e`` the PI output is ``u = ki dt w + (kp + ki dt) e`` and
    ``e = -C x`` under zero reference.
    """
    A, B, C = plant.A, plant.B, plant.C
    g = pi.kp + pi.ki * pi.dt
    top = A - g * (B @ C)
    if pi.ki == 0.0:
        return top
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = top
    M[:n, n] = pi.ki * pi.dt * B[:, 0]
    M[n, :n] = -C[0]
    M[n, n] = 1.0
    return M


def model_stability_oracle(pi, plant):
    """Ground truth: ``{"stable": rho < 1, "rho_cl": rho}`` from the exact model."""
    rho = float(np.max(np.abs(np.linalg.eigvals(closed_loop_matrix(pi, plant)))))
    return {"stable": rho < 1.0, "rho_cl": rho}


# -- certificate -----------------------------------------------------------------

def apply_plant(sys, u):
    """Response of the data-driven model to ``u`` from rest."""
    T = len(u)
    return hankel.data_driven_simulate(sys, hankel.Window.zeros(sys.L), u, T,
                                       check=False).outputs


def closed_loop_responses(pi, sys, T):
    """Impulse responses of ``S``, ``KS`` and ``PS`` through the data-driven model.

    ``S`` and ``KS`` are the error and input responses to a reference impulse;
    ``PS`` is the data-driven model applied to ``S``.

    Returns ``(x, y, w)`` or ``None`` when the loop overflows within ``T``.
    """
    e_log = np.zeros(T)
    state = {"e_prev": 0.0, "u_prev": 0.0}

    def source(t, y_t):
        e = (1.0 if t == 0 else 0.0) - y_t
        u = pi_policy_step(pi, e, state["e_prev"], state["u_prev"])
        state["e_prev"], state["u_prev"] = e, u
        e_log[t] = e
        return u

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            traj = hankel.data_driven_simulate(sys, hankel.Window.zeros(sys.L), source, T,
                                               check=False, feedback=True)
    except hankel.SimulationDivergedError:
        return None
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            w = apply_plant(sys, e_log)
        except hankel.SimulationDivergedError:
            return None
    out = (e_log, traj.inputs, w)
    if not all(np.all(np.isfinite(a)) for a in out):
        return None
    return out


def era(h, order_max, rtol=ERA_RTOL, atol=ERA_ATOL):
    """Eigensystem realization of an impulse response ``h_0, h_1, ...``.

    Returns ``(A, B, C, D)`` of order ``order_max``, zero-padded when the
    numerical rank of the Markov-parameter Hankel matrix is lower. Singular
    values below ``max(rtol * s_0, atol)`` are treated as zero.
    """
    h = np.asarray(h, dtype=float)
    D = float(h[0])
    m = h[1:]
    r = (len(m) - 1) // 2
    A = np.zeros((order_max, order_max))
    B = np.zeros(order_max)
    C = np.zeros(order_max)
    if r < 1 or not np.any(m):
        return A, B, C, D
    H0 = np.array([m[i:i + r] for i in range(r)])
    H1 = np.array([m[i + 1:i + 1 + r] for i in range(r)])
    U, s, Vt = np.linalg.svd(H0)
    k = int(min(order_max, np.sum(s > max(rtol * s[0], atol))))
    if k == 0:
        return A, B, C, D
    sq = np.sqrt(s[:k])
    Uk, Vk = U[:, :k] / sq, Vt[:k].T / sq
    A[:k, :k] = Uk.T @ H1 @ Vk
    B[:k] = (Vt[:k, 0] * sq)
    C[:k] = (U[0, :k] * sq)
    return A, B, C, D


def _spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def _stable_fit(h, order):
    """ERA fit, pulled inside the unit disc if needed, as a stable operator.

    The output matrices are refit by least squares after any pull-in.

    Returns:
        ``(operator, rho_raw)`` with ``rho_raw`` the spectral radius of the
        identified dynamics before the pull-in.
    """
    A, B, C, D = era(h, order)
    rho = raw = _spectral_radius(A)
    if rho >= RHO_CLIP:
        A = A * (RHO_CLIP / rho)
        T = len(h)
        # regress h_t (t >= 1) on A^{t-1} B columns to refit C
        Phi = np.empty((T - 1, order))
        x = B.copy()
        for t in range(T - 1):
            Phi[t] = x
            x = A @ x
        C = np.linalg.lstsq(Phi, h[1:], rcond=None)[0]
    try:
        return StableLinearOperator.from_realization(A, B, C, D), raw
    except ParameterizationError:
        A = A * (0.99 * RHO_CLIP / max(_spectral_radius(A), 1e-300))
        return StableLinearOperator.from_realization(A, B, C, D), raw


@dataclass
class AffineCertificate:
    X: StableLinearOperator
    Y: StableLinearOperator
    W: StableLinearOperator
    residual_primary: float
    residual_secondary: float
    residual_structure: float
    eig_margin: float
    horizon: int
    converged: bool = True
    rho_raw: float = math.nan

    def feasible(self, margin=0.0, tol=TOL_FEAS):
        return (self.residual_primary < tol and self.residual_secondary < tol
                and self.residual_structure < tol and self.eig_margin <= 1.0 - margin
                and self.eig_margin < 1.0)

    @property
    def max_residual(self):
        return max(self.residual_primary, self.residual_secondary, self.residual_structure)


def certificate_residuals(pi, sys, X, Y, W, T):
    """``(|X + PY - 1|, |W - PX|, |Y - KX|)`` over ``T`` samples of impulse response."""
    x, y, w = X.impulse_response(T), Y.impulse_response(T), W.impulse_response(T)
    delta = np.zeros(T)
    delta[0] = 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        r1 = float(np.linalg.norm(x + apply_plant(sys, y) - delta))
        r2 = float(np.linalg.norm(w - apply_plant(sys, x)))
        r3 = float(np.linalg.norm(y - pi.filter(x)))
    return tuple(v if math.isfinite(v) else math.inf for v in (r1, r2, r3))


def fit_certificate(pi, sys, horizon=80, order=6, budget=500, tol=TOL_FEAS):
    """Fit stable ``X, Y, W`` and evaluate the affine stability conditions.

    The closed-loop maps are realized by ERA (a stable pull-in is applied when
    the identified dynamics are unstable). If the result does not meet the
    tolerance, the stacked parameters of the three realizations are refined
    with Nelder-Mead on the summed residuals for at most ``budget`` function
    evaluations.
    """
    resp = closed_loop_responses(pi, sys, horizon)
    if resp is None:
        z = StableLinearOperator.zero(order)
        return AffineCertificate(z, z.copy(), z.copy(), math.inf, math.inf, math.inf, 1.0,
                                 horizon, converged=False, rho_raw=math.inf)
    fits = [_stable_fit(h, order) for h in resp]
    ops = [f[0] for f in fits]
    rho_raw = max(f[1] for f in fits)
    res = certificate_residuals(pi, sys, *ops, horizon)
    if max(res) >= tol and budget > 0:
        sizes = [op.to_vector().size for op in ops]
        x0 = np.concatenate([op.to_vector() for op in ops])

        def unpack(v):
            out, i = [], 0
            for op, k in zip(ops, sizes):
                out.append(op.from_vector(v[i:i + k]))
                i += k
            return out

        def cost(v):
            try:
                r = certificate_residuals(pi, sys, *unpack(v), horizon)
            except (ParameterizationError, np.linalg.LinAlgError):
                return math.inf
            return sum(r)

        sol = optimize.minimize(cost, x0, method="Nelder-Mead",
                                options={"maxfev": budget, "xatol": 1e-10, "fatol": 1e-12})
        if sol.fun < sum(res):
            ops = unpack(sol.x)
            res = certificate_residuals(pi, sys, *ops, horizon)
    rho = max(_spectral_radius(op.A_q) for op in ops)
    return AffineCertificate(*ops, *res, rho, horizon, converged=max(res) < tol,
                             rho_raw=rho_raw)


# -- projection ------------------------------------------------------------------

class ProjectionError(RuntimeError):
    def __init__(self, best):
        super().__init__("no certified PI parameters found within the budget")
        self.best = best


@dataclass
class ProjectionConfig:
    margin: float = 0.05
    horizon: int = 80
    order: int = 6
    fit_budget: int = 0
    penalty: float = 100.0
    maxfev: int = 200
    bisect_iters: int = 30


def _violation(cert, margin, tol=TOL_FEAS):
    """Continuous infeasibility measure driving the penalty search."""
    rho = cert.rho_raw if math.isfinite(cert.rho_raw) else 10.0
    return (max(0.0, min(rho, 10.0) - (1.0 - margin))
            + sum(max(0.0, min(r, 1e3) - tol) for r in
                  (cert.residual_primary, cert.residual_secondary, cert.residual_structure)))


def project_pi(theta_hat, sys, margin=0.05, anchor=None, cfg=None):
    """Nearest certified PI gains to ``theta_hat``.

    Already-certified input is returned unchanged. Otherwise the segment from
    ``anchor`` (a certified point, by default ``kp = ki = 0``) to ``theta_hat``
    is bisected to the certificate boundary, and a penalty-method Nelder-Mead
    search on ``|theta - theta_hat| + penalty * violation`` is run from that
    point and from ``theta_hat``. The P-only axis ``ki = 0`` is bisected
    separately because the certified set is disconnected there. The answer is the certified point closest
    to ``theta_hat`` among everything evaluated, after a final bisection from
    it toward each search result.

    Raises:
        ProjectionError: if not even the anchor is certified.
    """
    cfg = cfg or ProjectionConfig(margin=margin)
    dt = theta_hat.dt
    target = theta_hat.to_vector()
    cache = {}

    def cert(v):
        key = (float(v[0]), float(v[1]))
        if key not in cache:
            cache[key] = fit_certificate(PiParams(v[0], v[1], dt), sys, cfg.horizon, cfg.order,
                                         cfg.fit_budget)
        return cache[key]

    def ok(v):
        return cert(v).feasible(margin)

    if ok(target):
        return theta_hat
    a = np.zeros(2) if anchor is None else anchor.to_vector()
    if not ok(a):
        a = np.zeros(2)
        if not ok(a):
            raise ProjectionError(PiParams(*target, dt))

    def bisect(good, bad):
        lo, hi = 0.0, 1.0
        for _ in range(cfg.bisect_iters):
            mid = 0.5 * (lo + hi)
            if ok(good + mid * (bad - good)):
                lo = mid
            else:
                hi = mid
        return good + lo * (bad - good)

    def objective(v):
        return float(np.linalg.norm(v - target)) + cfg.penalty * _violation(cert(v), margin)

    v_b = bisect(a, target)
    # ki = 0 removes the integrator state, so the P-only axis is a separate
    # branch of the certified set; search it directly from the origin
    if ok(np.zeros(2)):
        bisect(np.zeros(2), np.array([target[0], 0.0]))
    ends = []
    for start in (v_b, target):
        step = np.array([0.05, 0.02])
        simplex = np.array([start, start + [step[0], 0.0], start + [0.0, step[1]]])
        sol = optimize.minimize(objective, start, method="Nelder-Mead",
                                options={"maxfev": cfg.maxfev, "xatol": 1e-5, "fatol": 1e-7,
                                         "initial_simplex": simplex})
        ends.append(sol.x)

    def nearest_feasible():
        pts = [np.array(k) for k, c in cache.items() if c.feasible(margin)]
        return min(pts, key=lambda p: float(np.linalg.norm(p - target)))

    best = nearest_feasible()
    for v in ends:
        if not ok(v):
            bisect(best, v)
    best = nearest_feasible()
    return PiParams(best[0], best[1], dt)


# -- training --------------------------------------------------------------------

class PiTask:
    """Setpoint step on an LTI plant under a PI policy."""

    def __init__(self, plant, reward, reference=1.0, gamma_rl=0.99):
        self.plant, self.reward = plant, reward
        self.reference, self.gamma_rl = float(reference), gamma_rl

    def run(self, pi, steps, reward=None, seed=0):
        reward = reward or self.reward
        plant = self.plant.copy()
        plant.reset()
        ep = EpisodeLog(self.gamma_rl, pi.dt)
        e_prev = u_prev = 0.0
        r = self.reference
        for t in range(steps):
            y = plant.output()
            e = r - y
            u = pi_policy_step(pi, e, e_prev, u_prev)
            if is_unstable(y) or is_unstable(u):
                ep.append(r, y, u, e, ABORT_PENALTY)
                ep.abort(t)
                break
            ep.append(r, y, u, e, reward(e, u - u_prev))
            e_prev, u_prev = e, u
            plant.lti_step(u)
        return ep.close()


@dataclass
class PiRunResult:
    result: object
    constrained: bool
    oracle_rho: list

    @property
    def unstable_visits(self):
        return sum(1 for r in self.oracle_rho if r >= 1.0)


def constrained_training_run(task, sys, theta0, cfg, constrained=True, proj_cfg=None,
                             plant=None):
    """Train PI gains with random search, optionally projecting every iterate.

    Args:
        task: :class:`PiTask`.
        sys: Hankel model used by the certificate.
        theta0: initial :class:`PiParams` (shared by all sessions).
        cfg: :class:`TrainConfig`.
        plant: optional exact model; when given, every iterate is audited with
            :func:`model_stability_oracle`.
    """
    proj_cfg = proj_cfg or ProjectionConfig()
    policy = Policy(theta0)
    last = {"v": None}

    def project(v):
        anchor = last["v"]
        out = project_pi(PiParams(v[0], v[1], theta0.dt), sys, proj_cfg.margin,
                         anchor=None if anchor is None else PiParams(*anchor, theta0.dt),
                         cfg=proj_cfg)
        last["v"] = out.to_vector()
        return last["v"]

    res = train(lambda s: task, policy, cfg, project=project if constrained else None,
                eval_seed=0)
    rho = []
    if plant is not None:
        for trace in res.thetas:
            for v in trace[1:]:
                rho.append(model_stability_oracle(PiParams(v[0], v[1], theta0.dt), plant)["rho_cl"])
    return PiRunResult(res, constrained, rho)


# -- grids and CSV -------------------------------------------------------------

def oracle_grid(plant, kp_values, ki_values, dt):
    return np.array([[model_stability_oracle(PiParams(kp, ki, dt), plant)["rho_cl"]
                      for kp in kp_values] for ki in ki_values])


def stability_boundary(plant, ki_values, dt, kp_lo=0.0, kp_hi=10.0, iters=50):
    """Upper branch of ``rho_cl = 1``: for each ``ki`` the smallest ``kp >= kp_lo``
    where the loop turns unstable, by bisection. Samples with no crossing in
    ``[kp_lo, kp_hi]`` (or unstable already at ``kp_lo``) are skipped."""
    pts = []
    for ki in ki_values:
        def rho(kp):
            return model_stability_oracle(PiParams(kp, ki, dt), plant)["rho_cl"]
        if rho(kp_lo) >= 1.0 or rho(kp_hi) < 1.0:
            continue
        # march to the first crossing, then bisect
        grid = np.linspace(kp_lo, kp_hi, 201)
        k = next(i for i, g in enumerate(grid) if rho(g) >= 1.0)
        lo, hi = grid[k - 1], grid[k]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if rho(mid) < 1.0 else (lo, mid)
        pts.append((0.5 * (lo + hi), float(ki)))
    return pts


def grid_projection(plant, theta_hat, kp_values, ki_values, margin):
    """Nearest grid point whose oracle ``rho_cl <= 1 - margin``."""
    best, dist = None, math.inf
    for ki in ki_values:
        for kp in kp_values:
            if model_stability_oracle(PiParams(kp, ki, theta_hat.dt), plant)["rho_cl"] <= 1 - margin:
                d = math.hypot(kp - theta_hat.kp, ki - theta_hat.ki)
                if d < dist:
                    best, dist = (kp, ki), d
    return best, dist


def write_heatmap(path, projections):
    """Rows ``kp,ki,phase,session`` for every pre/post projection pair."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kp", "ki", "phase", "session"])
        for s, _e, pre, post in projections:
            w.writerow([repr(float(pre[0])), repr(float(pre[1])), "pre", s])
            w.writerow([repr(float(post[0])), repr(float(post[1])), "post", s])


def write_boundary(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kp", "ki"])
        for kp, ki in points:
            w.writerow([repr(float(kp)), repr(float(ki))])


def pi_plant(dt=0.5):
    from .envs import benchmark_plant

    return benchmark_plant(dt)


def pi_hankel(plant, samples=200, L=6, seed=0):
    """Noise-free Hankel model of the PI benchmark plant from a Gaussian probe."""
    u = np.random.default_rng(seed).standard_normal(samples + 1)
    y = plant.copy().simulate(u)
    return hankel.HankelSystem.from_data(u, y, L, order_bound=plant.n, require_pe=True)
