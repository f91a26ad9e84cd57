"""Episode-based policy training with a gradient-free default optimizer.

The policy is the Q parameter itself (or PI gains in :mod:`ddyk.pitune`),
seen through a flat parameter vector. Any finite vector produces a stable
operator, so the optimizer needs no constraint handling to keep the loop
stable.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import hankel
from .envs import RewardConfig, TankEnv, TankGains, TankParams, make_reward
from .episode import ABORT_PENALTY, EpisodeLog, is_unstable
from .stable_ops import (LyapunovNet, Mlp, ParameterizationError, StableLinearOperator,
                         StableNonlinearOperator)
from .youla import YoulaController, yk_step

log = logging.getLogger(__name__)


# -- policies ------------------------------------------------------------------

class Policy:
    """Flat-vector view of an operator.

    Args:
        template: operator exposing ``to_vector()`` and ``from_vector(v)``.
        mask: optional boolean mask of trainable entries; the others stay at
            the template's values.
    """

    def __init__(self, template, mask=None):
        self.template = template
        self._full = np.asarray(template.to_vector(), dtype=float)
        self.mask = np.ones(self._full.size, bool) if mask is None else np.asarray(mask, bool)
        if self.mask.shape != self._full.shape:
            raise ValueError("mask does not match the parameter vector")

    @property
    def dim(self):
        return int(self.mask.sum())

    @property
    def theta0(self):
        return self._full[self.mask].copy()

    def flatten(self, op):
        return np.asarray(op.to_vector(), dtype=float)[self.mask]

    def unflatten(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got shape {theta.shape}")
        full = self._full.copy()
        full[self.mask] = theta
        return self.template.from_vector(full)

    build = unflatten


def nonlinear_q_policy(n, rng, width=4, v_width=16, beta=0.99, io_scale=0.1,
                       train_v=False):
    """Nonlinear Q policy; the Lyapunov network is frozen unless ``train_v``."""
    op = StableNonlinearOperator(Mlp(n, width, rng=rng), LyapunovNet(n, v_width, rng=rng),
                                 io_scale * rng.standard_normal(n),
                                 io_scale * rng.standard_normal(n),
                                 io_scale * rng.standard_normal(), beta)
    mask = np.ones(op.to_vector().size, bool)
    if not train_v:
        mask[-op.V.to_vector().size:] = False
    return Policy(op, mask)


def linear_q_policy(n, rng, io_scale=0.1):
    return Policy(StableLinearOperator.random(n, rng, scale=0.5, io_scale=io_scale))


# -- optimizer -------------------------------------------------------------------

@dataclass
class RandomSearch:
    """Antithetic random-search gradient estimator.

    ``grad = 1/(2 sigma k) sum_i (J(theta + sigma d_i) - J(theta - sigma d_i)) d_i``.
    With ``normalize`` the estimate is divided by the standard deviation of
    the collected returns (as in augmented random search), which makes the
    step size insensitive to the reward scale.
    """

    k: int = 8
    sigma: float = 0.05
    eta: float = 0.02
    normalize: bool = False
    dropped: int = 0

    def __post_init__(self):
        if self.k < 1 or not self.sigma > 0 or self.eta < 0:
            raise ValueError("need k >= 1, sigma > 0 and eta >= 0")


def optimizer_step(opt, theta, evaluate, rng):
    """One ascent step ``theta + eta * grad``; non-finite pairs are dropped."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    used = []
    for _ in range(opt.k):
        d = rng.standard_normal(theta.size)
        jp = evaluate(theta + opt.sigma * d)
        jm = evaluate(theta - opt.sigma * d)
        if not (math.isfinite(jp) and math.isfinite(jm)):
            opt.dropped += 1
            continue
        grad += (jp - jm) * d
        used.extend((jp, jm))
    if not used:
        return theta.copy()
    grad /= 2.0 * opt.sigma * (len(used) // 2)
    if opt.normalize:
        s = float(np.std(used))
        if s > 0:
            grad /= s
    return theta + opt.eta * grad


# -- rollouts --------------------------------------------------------------------

def rollout(env, op, steps, reward=None, seed=0):
    """Run one episode of ``op`` on ``env`` (an object with ``run``)."""
    return env.run(op, steps, reward, seed)


@dataclass
class TrainConfig:
    sessions: int = 20
    episodes: int = 100
    steps: int = 200
    gamma_rl: float = 0.99
    k: int = 8
    sigma: float = 0.05
    eta: float = 0.02
    normalize: bool = False
    rollouts_per_eval: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.sessions, self.episodes, self.steps, self.rollouts_per_eval) < 1:
            raise ValueError("sessions, episodes, steps and rollouts_per_eval must be positive")
        if not 0.0 < self.gamma_rl < 1.0:
            raise ValueError("gamma_rl must lie in (0, 1)")

    def optimizer(self):
        return RandomSearch(self.k, self.sigma, self.eta, self.normalize)


@dataclass
class TrainResult:
    returns: np.ndarray
    thetas: list
    aborts: int = 0
    rollouts: int = 0
    max_abs_y: float = 0.0
    dropped: int = 0
    projections: list = field(default_factory=list)

    def median_curve(self):
        return np.median(self.returns, axis=0)


def train(env_factory, policy, cfg, project=None, eval_seed=None):
    """Multi-session training.

    Args:
        env_factory: ``session -> env``.
        policy: a :class:`Policy`, or ``rng -> Policy`` for per-session
            initialization.
        cfg: :class:`TrainConfig`.
        project: optional ``theta -> theta`` applied after every optimizer
            step; each ``(session, episode, pre, post)`` pair is recorded.
        eval_seed: seed, or sequence of seeds, of the fixed scenarios used to
            score each episode (the score is their mean return); defaults to
            one seed per session.

    Returns:
        :class:`TrainResult` whose ``returns[s, e]`` is the discounted return
        of the parameters after episode ``e`` of session ``s``.
    """
    S, E = cfg.sessions, cfg.episodes
    res = TrainResult(np.zeros((S, E)), [])
    for s in range(S):
        rng = np.random.default_rng([cfg.seed, s])
        pol = policy(rng) if callable(policy) else policy
        env = env_factory(s)
        opt = cfg.optimizer()
        if eval_seed is None:
            score_seeds = [int(rng.integers(2**31))]
        else:
            score_seeds = [int(v) for v in np.atleast_1d(eval_seed)]

        def evaluate(th, seeds):
            try:
                op = pol.unflatten(th)
            except ParameterizationError:
                return math.nan
            total = 0.0
            for sd in seeds:
                ep = rollout(env, op, cfg.steps, None, int(sd))
                res.rollouts += 1
                if ep.aborted:
                    res.aborts += 1
                res.max_abs_y = max(res.max_abs_y, ep.max_abs_y)
                total += ep.discounted_return
            return total / len(seeds)

        theta = pol.theta0
        trace = [theta.copy()]
        for e in range(E):
            seeds = rng.integers(2**31, size=cfg.rollouts_per_eval)
            theta_new = optimizer_step(opt, theta, lambda th: evaluate(th, seeds), rng)
            try:
                pol.unflatten(theta_new)
            except ParameterizationError:
                theta_new = theta.copy()
            if project is not None:
                post = np.asarray(project(theta_new), dtype=float)
                res.projections.append((s, e, theta_new.copy(), post.copy()))
                theta_new = post
            theta = theta_new
            trace.append(theta.copy())
            res.returns[s, e] = evaluate(theta, score_seeds)
        res.dropped += opt.dropped
        res.thetas.append(np.array(trace))
        log.info("session %d done: final return %.4f", s, res.returns[s, -1])
    return res


def write_reward_curves(path, returns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["session", "episode", "return"])
        for s, row in enumerate(returns):
            for e, v in enumerate(row):
                w.writerow([s, e + 1, repr(float(v))])


def reward_summary(returns):
    """Per-episode ``(median, q25, q75)`` across sessions."""
    q25, med, q75 = np.percentile(np.asarray(returns), [25, 50, 75], axis=0)
    return med, q25, q75


def write_summary(path, returns):
    med, q25, q75 = reward_summary(returns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "median", "q25", "q75"])
        for e in range(len(med)):
            w.writerow([e + 1, repr(float(med[e])), repr(float(q25[e])), repr(float(q75[e]))])


def plateau_check(median_curve, last_frac=0.2, tol=0.05):
    """Whether the mean of the last ``last_frac`` of the median curve is
    within ``tol * |max|`` of the curve's maximum.

    Works for either sign of the returns; for positive returns it reads as
    ``final >= (1 - tol) * max``.

    Returns:
        ``(ok, final, best)``.
    """
    c = np.asarray(median_curve, dtype=float)
    k = max(1, int(round(last_frac * len(c))))
    final = float(np.median(c[-k:]))
    best = float(np.max(c))
    return final >= best - tol * abs(best), final, best


# -- LTI task ------------------------------------------------------------------

class LtiYkTask:
    """YK loop on an LTI plant tracking a seeded random step reference."""

    def __init__(self, plant, sys, reward=None, noise_std=0.0, gamma_rl=0.99,
                 ref_amplitude=1.0, ref_period=50):
        self.plant, self.sys = plant, sys
        self.reward = reward
        self.noise_std, self.gamma_rl = noise_std, gamma_rl
        self.ref_amplitude, self.ref_period = ref_amplitude, ref_period

    def run(self, op, steps, reward=None, seed=0):
        from .youla import closed_loop_run

        rng = np.random.default_rng(seed)
        levels = self.ref_amplitude * rng.uniform(-1, 1, steps // self.ref_period + 1)
        plant = self.plant.copy()
        plant.reset()
        op.reset()
        ctrl = YoulaController(self.sys, op)
        return closed_loop_run(plant, ctrl, lambda t: levels[t // self.ref_period], steps,
                               self.noise_std, rng, reward or self.reward, self.gamma_rl)


# -- two-tank task ---------------------------------------------------------------

def identify_tank_model(params=None, gains=None, samples=2000, L=11, action_scale=1e-4,
                        level=0.5, seed=0):
    """Hankel model from the normalized Q action to the level deviation.

    The cascade runs at a fixed setpoint while a standard-normal probe is
    added (scaled by ``action_scale``) to the level controller's output.
    """
    env = TankEnv(params, gains, seed)
    env.reset(level)
    a = np.random.default_rng([seed, 1]).standard_normal(samples + 1)
    y = np.empty(samples + 1)
    for t in range(samples + 1):
        y[t] = env.last_measurement - level
        env.step(level, action_scale * a[t])
    return hankel.HankelSystem.from_data(a, y, L, noisy=True)


@dataclass
class TankTaskConfig:
    level0: float = 0.5
    sp_low: float = 0.35
    sp_high: float = 0.65
    hold: int = 10
    action_scale: float = 1e-4
    q_limit: float = 5.0
    effort_weight: float = 0.01
    gamma_rl: float = 0.99
    reward_on_true_level: bool = True


class TankTask:
    """YK-augmented level loop: Q's output is added to the level PID increment.

    Each seeded episode starts at steady state at ``level0``, holds the
    setpoint for ``hold`` samples, then steps to a random setpoint and, halfway
    through the remaining horizon, to another.
    """

    def __init__(self, sys, params=None, gains=None, cfg=None):
        self.sys = sys
        self.params = params or TankParams()
        self.gains = gains or TankGains()
        self.cfg = cfg or TankTaskConfig()
        self.reward = make_reward("tank", RewardConfig(effort_weight=self.cfg.effort_weight))

    def setpoints(self, steps, seed):
        c = self.cfg
        rng = np.random.default_rng([seed, 7])
        s1, s2 = rng.uniform(c.sp_low, c.sp_high, 2)
        sp = np.full(steps, c.level0)
        mid = c.hold + (steps - c.hold) // 2
        sp[c.hold:mid] = s1
        sp[mid:] = s2
        return sp

    def run(self, op, steps, reward=None, seed=0):
        c = self.cfg
        reward = reward or self.reward
        env = TankEnv(self.params, self.gains, seed)
        env.reset(c.level0)
        op.reset()
        ctrl = YoulaController(self.sys, op, q_limit=c.q_limit)
        sp = self.setpoints(steps, seed)
        ep = EpisodeLog(c.gamma_rl, self.params.dt)
        levels = np.empty(steps)
        for t in range(steps):
            y = env.last_measurement
            a = yk_step(ctrl, sp[t], y)
            try:
                state, _ = env.step(sp[t], c.action_scale * a)
            except FloatingPointError:
                ep.append(sp[t], y, a, sp[t] - y, ABORT_PENALTY)
                ep.abort(t)
                break
            levels[t] = state.level
            e_r = sp[t] - (state.level if c.reward_on_true_level else env.last_measurement)
            if is_unstable(y) or is_unstable(a):
                ep.append(sp[t], y, a, sp[t] - y, ABORT_PENALTY)
                ep.abort(t)
                break
            ep.append(sp[t], y, a, sp[t] - y, reward(e_r, a))
        ep.extra["level"] = levels[:len(ep)]
        return ep.close()
