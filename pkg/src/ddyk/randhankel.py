"""Monte Carlo checks of the spectral theory of random Hankel matrices.

For an i.i.d. standard-normal sequence, ``H`` and ``H'`` are the first and
last ``N`` columns of the ``L x (N + 1)`` Hankel matrix. The smallest singular
value of ``H`` grows like ``sqrt(N)`` and the spectral radius of ``H^+ H'``
concentrates near one. Every trial draws from its own counter-based stream, so
trial ``i`` is reproducible on its own.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import hankel


class BoundaryError(ValueError):
    """The sample size is too small for the lower bound to exist."""


def trial_rng(seed, *counter):
    """Generator for one trial: Philox keyed by ``seed`` and the trial coordinates."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *counter])))


def r_N(L, N):
    """``sqrt(N / (L + 1) - L (L - 1) / (L + 1))``.

    Raises:
        BoundaryError: if the radicand is negative.
    """
    rad = N / (L + 1) - L * (L - 1) / (L + 1)
    if rad < 0:
        raise BoundaryError(f"N={N} too small for L={L}: radicand {rad:.3g} < 0")
    return math.sqrt(rad)


def eps_surrogate(L, N):
    """``sqrt(1 + L^2 / (delta_N r_N^2)) - 1`` with ``delta_N = N^{-1/4}``."""
    r = r_N(L, N)
    if r == 0:
        return math.inf
    return math.sqrt(1.0 + L * L / (N ** -0.25 * r * r)) - 1.0


def hankel_pair(w, L):
    """``(H, H')``: first and last ``len(w) - L`` columns of the order-``L`` Hankel matrix."""
    Hb = hankel.build_hankel(w, L)
    return Hb[:, :-1], Hb[:, 1:]


@dataclass
class TrialStats:
    sigma_min: float
    rho: float
    lambda_min: float
    wall: float
    wall_ok: bool


def trial_stats(w, L):
    """Spectral quantities of one draw.

    ``rho`` is computed from the ``L x L`` matrix ``H' H^+``, whose nonzero
    spectrum equals that of ``H^+ H'``. ``wall`` is
    ``1 + |w'|^2 / lambda_min(H H^T)`` with ``w'`` the last column of ``H'``,
    which bounds ``rho^2``.
    """
    H, Hs = hankel_pair(w, L)
    s = np.linalg.svd(H, compute_uv=False)
    lam = float(s[-1] ** 2)
    rho = float(np.max(np.abs(np.linalg.eigvals(Hs @ np.linalg.pinv(H)))))
    wall = 1.0 + float(Hs[:, -1] @ Hs[:, -1]) / lam
    return TrialStats(float(s[-1]), rho, lam, wall, rho * rho <= wall * (1 + 1e-12))


@dataclass
class McConfig:
    L: int = 2
    N_list: list = field(default_factory=lambda: [100, 400, 1600])
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.N_list:
            raise ValueError("N list is empty")
        if any(N < self.L for N in self.N_list):
            raise ValueError("every N must be >= L")


@dataclass
class McRow:
    L: int
    N: int
    trials: int
    pr_sigma_gt_rN: float
    rho_q50: float
    rho_q90: float
    rho_q99: float
    lambda_min_mean: float
    sigma_median: float
    r_N: float
    eps_N: float
    wall_all: bool


@dataclass
class McReport:
    rows: list

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["L", "N", "trials", "pr_sigma_gt_rN", "rho_q50", "rho_q90", "rho_q99",
                        "lambda_min_mean"])
            for r in self.rows:
                w.writerow([r.L, r.N, r.trials, repr(r.pr_sigma_gt_rN), repr(r.rho_q50),
                            repr(r.rho_q90), repr(r.rho_q99), repr(r.lambda_min_mean)])

    def for_L(self, L):
        return [r for r in self.rows if r.L == L]


def sample_spectra(cfg):
    """Monte Carlo over ``cfg.N_list`` for window length ``cfg.L``."""
    rows = []
    L = cfg.L
    for N in cfg.N_list:
        rn = r_N(L, N)
        st = [trial_stats(trial_rng(cfg.seed, L, N, i).standard_normal(N + L), L)
              for i in range(cfg.trials)]
        sig = np.array([s.sigma_min for s in st])
        rho = np.array([s.rho for s in st])
        q50, q90, q99 = np.quantile(rho, [0.5, 0.9, 0.99])
        rows.append(McRow(L, N, cfg.trials, float(np.mean(sig > rn)), float(q50), float(q90),
                          float(q99), float(np.mean([s.lambda_min for s in st])),
                          float(np.median(sig)), rn, eps_surrogate(L, N),
                          all(s.wall_ok for s in st)))
    return McReport(rows)


def sigma_growth_slope(report, L):
    """Log-log slope of median ``sigma_min`` against ``N``."""
    rows = report.for_L(L)
    x = np.log([r.N for r in rows])
    y = np.log([r.sigma_median for r in rows])
    return float(np.polyfit(x, y, 1)[0])


def verify_hw_corollary(n_list, alpha, trials, seed=0):
    """Empirical ``Pr{|sum X^2 - n| < alpha n}`` and ``Pr{|sum X_k X_{k+1}| < alpha n}``.

    The cross sum uses the cyclic shift, a permutation without fixed points.

    Returns:
        list of ``(n, p_square, p_cross)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    out = []
    for n in n_list:
        hit_a = hit_b = 0
        for i in range(trials):
            x = trial_rng(seed, n, i).standard_normal(n)
            hit_a += abs(float(x @ x) - n) < alpha * n
            hit_b += abs(float(x @ np.roll(x, -1))) < alpha * n
        out.append((n, hit_a / trials, hit_b / trials))
    return out


# -- noisy data-driven models ---------------------------------------------------

def truncated_gaussian(rng, size, bound=3.0):
    """Standard normal truncated to ``[-bound, bound]`` (exact inverse-CDF sampling)."""
    return stats.truncnorm.rvs(-bound, bound, size=size, random_state=rng)


@dataclass
class RolloutConfig:
    L: int = 25
    N_list: list = field(default_factory=lambda: [100, 400, 1600, 4000])
    noise_std: float = 0.1
    seeds: int = 20
    probe_seed: int = 0
    truncate_above: int = 100
    rollout_steps: int = 500
    divergence_factor: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not self.N_list:
            raise ValueError("N list is empty")
        if self.seeds < 1 or self.rollout_steps < 1:
            raise ValueError("seeds and rollout_steps must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


@dataclass
class RolloutRecord:
    N: int
    seed: int
    rho_noisy: float
    rho_noisefree: float
    diverged: bool
    growth: float
    norms: np.ndarray = field(repr=False)


def _rollout_growth(sys, steps):
    alpha0 = sys.H_pinv @ sys.H[:, -1]
    try:
        fr = hankel.free_response_rollout(sys, alpha0, steps)
    except hankel.SimulationDivergedError:
        return math.inf, np.array([])
    norms = fr.window_norms
    return float(np.max(norms) / max(norms[0], 1e-300)), norms


def noisy_rollout_experiment(plant, cfg):
    """Spectral radius of noisy Hankel models and their free-response rollouts.

    One probing input per ``N`` (standard normal; truncated at three standard
    deviations when ``N > cfg.truncate_above``) is shared by all noise seeds,
    so the seeds differ only in the measurement noise. A rollout counts as
    diverged when the window norm grows beyond ``divergence_factor`` times
    its initial value or overflows.
    """
    recs = []
    for N in cfg.N_list:
        prng = trial_rng(cfg.probe_seed, 1, N)
        u = (truncated_gaussian(prng, N + 1) if N > cfg.truncate_above
             else prng.standard_normal(N + 1))
        y = plant.copy().simulate(u)
        rho0 = hankel.stability_radius(hankel.HankelSystem.from_data(u, y, cfg.L))
        for s in range(cfg.seeds):
            yn = y + cfg.noise_std * trial_rng(cfg.seed, 2, N, s).standard_normal(N + 1)
            sys = hankel.HankelSystem.from_data(u, yn, cfg.L, noisy=True)
            growth, norms = _rollout_growth(sys, cfg.rollout_steps)
            recs.append(RolloutRecord(N, s, hankel.stability_radius(sys), rho0,
                                      growth > cfg.divergence_factor, growth, norms))
    return recs


def write_rollouts(path, recs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "seed", "rho_noisy", "rho_noisefree", "diverged", "growth"])
        for r in recs:
            w.writerow([r.N, r.seed, repr(r.rho_noisy), repr(r.rho_noisefree), int(r.diverged),
                        repr(r.growth)])
