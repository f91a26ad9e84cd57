import csv
import math

import numpy as np
import pytest

from ddyk import rl
from ddyk.envs import StateSpaceModel, make_reward
from ddyk.episode import EpisodeLog, discounted_return, is_unstable
from ddyk.hankel import HankelSystem
from ddyk.rl import (Policy, RandomSearch, TrainConfig, linear_q_policy, nonlinear_q_policy,
                     optimizer_step, plateau_check, rollout, train)
from ddyk.stable_ops import StableLinearOperator


@pytest.fixture(scope="module")
def tank_task():
    sys = rl.identify_tank_model(samples=1000, seed=0)
    return rl.TankTask(sys)


def _lti_task(rng, reward=None):
    plant = StateSpaceModel.random_stable(2, rng)
    u = rng.standard_normal(100)
    sys = HankelSystem.from_data(u, plant.copy().simulate(u), 2)
    return rl.LtiYkTask(plant, sys, reward)


# -- episode log -------------------------------------------------------------------------

def test_discounted_return():
    assert discounted_return([1.0, 1.0, 1.0], 0.5) == 1.75
    log = EpisodeLog(0.9)
    for r in [0.3, -1.0, 2.0]:
        log.append(0, 0, 0, 0, r)
    assert log.close().discounted_return == pytest.approx(0.3 - 0.9 + 2 * 0.81, abs=1e-12)


def test_episode_log_validates_gamma():
    with pytest.raises(ValueError):
        EpisodeLog(0.0)


def test_is_unstable():
    assert is_unstable(math.nan) and is_unstable(2e6) and not is_unstable(-5.0)


# -- policy -----------------------------------------------------------------------------------

def test_policy_roundtrip(rng):
    pol = linear_q_policy(3, rng)
    th = pol.theta0 + 0.1 * rng.standard_normal(pol.dim)
    np.testing.assert_array_equal(pol.flatten(pol.unflatten(th)), th)


def test_nonlinear_policy_freezes_lyapunov(rng):
    pol = nonlinear_q_policy(2, rng)
    assert pol.dim <= 50
    op = pol.unflatten(pol.theta0 + 1.0)
    np.testing.assert_array_equal(op.V.to_vector(), pol.template.V.to_vector())


def test_policy_shape_checked(rng):
    pol = linear_q_policy(2, rng)
    with pytest.raises(ValueError):
        pol.unflatten(np.zeros(pol.dim + 1))
    with pytest.raises(ValueError):
        Policy(pol.template, np.ones(3, bool))


# -- optimizer --------------------------------------------------------------------------------

def test_equal_returns_no_step(rng):
    th = rng.standard_normal(4)
    out = optimizer_step(RandomSearch(), th, lambda t: 3.0, rng)
    np.testing.assert_array_equal(out, th)


def test_zero_step_size(rng):
    th = rng.standard_normal(4)
    out = optimizer_step(RandomSearch(eta=0.0), th, lambda t: -float(t @ t), rng)
    np.testing.assert_array_equal(out, th)


def test_quadratic_bandit(rng):
    target = np.array([0.5, -1.0, 2.0])
    opt = RandomSearch(k=8, sigma=0.05, eta=0.02)
    th = np.zeros(3)
    for _ in range(200):
        th = optimizer_step(opt, th, lambda t: -float(np.sum((t - target) ** 2)), rng)
    assert np.linalg.norm(th - target) < 0.05


def test_nonfinite_returns_dropped(rng):
    opt = RandomSearch(k=4)
    th = np.zeros(2)
    out = optimizer_step(opt, th, lambda t: math.nan, rng)
    assert opt.dropped == 4
    np.testing.assert_array_equal(out, th)


def test_optimizer_validation():
    with pytest.raises(ValueError):
        RandomSearch(k=0)
    with pytest.raises(ValueError):
        TrainConfig(gamma_rl=1.0)
    with pytest.raises(ValueError):
        TrainConfig(sessions=0)


# -- rollouts and training ----------------------------------------------------------------------

def test_zero_reward_rollout(rng):
    task = _lti_task(rng, reward=lambda e, du: 0.0)
    ep = rollout(task, linear_q_policy(2, rng).template, 50)
    assert ep.discounted_return == 0.0


def test_rollout_deterministic(tank_task, rng):
    op = nonlinear_q_policy(2, rng).template
    a = rollout(tank_task, op, 60, seed=3)
    b = rollout(tank_task, op, 60, seed=3)
    assert a._rows == b._rows


def test_tank_random_policies_bounded(tank_task):
    for seed in range(100):
        pol = nonlinear_q_policy(2, np.random.default_rng(seed))
        ep = rollout(tank_task, pol.unflatten(pol.theta0), 100, seed=seed)
        assert not ep.aborted
        assert ep.max_abs_y < 10.0


def test_return_recomputed_from_log(tank_task, rng):
    ep = rollout(tank_task, nonlinear_q_policy(2, rng).template, 80, seed=1)
    assert ep.discounted_return == pytest.approx(
        discounted_return(ep.column("reward"), ep.gamma_rl), abs=1e-12)


def test_tank_setpoint_schedule(tank_task):
    sp = tank_task.setpoints(200, 5)
    assert np.all(sp[:10] == 0.5)
    assert len(set(sp[10:])) == 2
    assert np.all((sp[10:] >= 0.35) & (sp[10:] <= 0.65))


def test_single_episode_train_matches_rollout(rng):
    task = _lti_task(rng, reward=make_reward("tank"))
    pol = linear_q_policy(2, np.random.default_rng(0))
    cfg = TrainConfig(sessions=1, episodes=1, steps=40, k=2)
    res = train(lambda s: task, pol, cfg, eval_seed=9)
    ep = rollout(task, pol.unflatten(res.thetas[0][-1]), 40, seed=9)
    assert res.returns.shape == (1, 1)
    assert res.returns[0, 0] == ep.discounted_return


def test_train_reproducible(tank_task):
    cfg = TrainConfig(sessions=2, episodes=3, steps=40, k=2, seed=4)

    def factory(r):
        return nonlinear_q_policy(2, r)

    a = train(lambda s: tank_task, factory, cfg)
    b = train(lambda s: tank_task, factory, cfg)
    np.testing.assert_array_equal(a.returns, b.returns)
    assert a.aborts == 0


def test_train_projection_recorded(rng):
    task = _lti_task(rng, reward=make_reward("tank"))
    pol = linear_q_policy(2, rng)
    res = train(lambda s: task, pol, TrainConfig(sessions=1, episodes=2, steps=20, k=1),
                project=lambda th: 0.5 * th)
    assert len(res.projections) == 2
    s, e, pre, post = res.projections[0]
    np.testing.assert_allclose(post, 0.5 * pre)


def test_reward_csv_formats(tmp_path):
    R = np.array([[1.0, 2.0], [3.0, 5.0]])
    rl.write_reward_curves(tmp_path / "r.csv", R)
    rl.write_summary(tmp_path / "s.csv", R)
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["session", "episode", "return"] and len(rows) == 5
    summ = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert float(summ[1]["median"]) == 3.5


# -- plateau ------------------------------------------------------------------------------------

def test_plateau_positive_curve():
    c = np.concatenate([np.linspace(0, 10, 40), np.full(60, 10.0)])
    ok, final, best = plateau_check(c)
    assert ok and final == best == 10.0


def test_plateau_detects_collapse():
    c = np.concatenate([np.linspace(0, 10, 50), np.linspace(10, 5, 50)])
    assert not plateau_check(c)[0]


def test_plateau_negative_returns():
    c = np.concatenate([np.linspace(-20, -10, 40), np.full(60, -10.2)])
    assert plateau_check(c)[0]
    assert not plateau_check(np.concatenate([c[:80], np.full(20, -12.0)]))[0]


def test_score_averages_fixed_scenarios(rng):
    task = _lti_task(rng, reward=make_reward("tank"))
    pol = linear_q_policy(2, np.random.default_rng(0))
    cfg = TrainConfig(sessions=2, episodes=1, steps=40, k=2)
    res = train(lambda s: task, pol, cfg, eval_seed=[3, 4])
    for s in range(2):
        op = pol.unflatten(res.thetas[s][-1])
        want = np.mean([rollout(task, op, 40, seed=v).discounted_return for v in (3, 4)])
        assert res.returns[s, 0] == pytest.approx(want, abs=1e-12)
