import numpy as np
import pytest

from ddyk import hankel
from ddyk.cli import yk_case
from ddyk.envs import StateSpaceModel, make_reward
from ddyk.hankel import HankelSystem
from ddyk.stable_ops import StableLinearOperator, StableNonlinearOperator
from ddyk.youla import (YkOracle, YoulaController, closed_loop_run, yk_convolution,
                        yk_oracle_step, yk_step)


def _setup(rng, n=3):
    plant = StateSpaceModel.random_stable(n, rng)
    u = rng.standard_normal(200)
    return plant, HankelSystem.from_data(u, plant.copy().simulate(u), n, order_bound=n)


def test_zero_q_gives_zero_input(rng):
    plant, sys = _setup(rng)
    ctrl = YoulaController(sys, StableLinearOperator.zero(2))
    assert all(yk_step(ctrl, r, y) == 0.0 for r, y in rng.standard_normal((30, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    assert yk_case(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4))) < 1e-6


def test_window_bookkeeping(rng):
    _, sys = _setup(rng)
    ctrl = YoulaController(sys, StableLinearOperator.random(2, rng))
    for r in rng.standard_normal(10):
        u = yk_step(ctrl, r, 0.3)
        assert ctrl.last_u == u
        assert ctrl.window.u[-1] == ctrl.last_q
        assert ctrl.window.y[-1] == ctrl.last_y_hat


def test_incremental_mode_adds_pid(rng):
    _, sys = _setup(rng)
    q = StableLinearOperator.random(2, rng)
    inc = YoulaController(sys, q.copy(), mode="incremental")
    ab = YoulaController(sys, q.copy())
    u_prev = 0.0
    for r, du in rng.standard_normal((20, 2)):
        dq = yk_step(ab, r, 0.1)
        u = yk_step(inc, r, 0.1, du_pid=du)
        assert u == pytest.approx(u_prev + dq + du, abs=1e-12)
        u_prev = u


def test_incremental_clamps(rng):
    _, sys = _setup(rng)
    q = StableLinearOperator(StableLinearOperator.zero(1).params, [0.0], [0.0], 1.0)
    ctrl = YoulaController(sys, q, mode="incremental", u_min=-0.5, u_max=0.5)
    for _ in range(5):
        u = yk_step(ctrl, 1.0, 0.0)
    assert u == 0.5


def test_q_limit_clamps_model_input(rng):
    _, sys = _setup(rng)
    q = StableLinearOperator(StableLinearOperator.zero(1).params, [0.0], [0.0], 100.0)
    ctrl = YoulaController(sys, q, q_limit=2.0)
    assert yk_step(ctrl, 1.0, 0.0) == 2.0
    assert ctrl.window.u[-1] == 2.0


def test_bad_mode_and_window(rng):
    _, sys = _setup(rng)
    q = StableLinearOperator.zero(1)
    with pytest.raises(ValueError):
        YoulaController(sys, q, mode="velocity")
    with pytest.raises(hankel.DimensionError):
        YoulaController(sys, q, window=hankel.Window.zeros(sys.L + 1))


def test_checked_mode_agrees(rng):
    plant, sys = _setup(rng)
    q = StableLinearOperator.random(2, rng)
    a = YoulaController(sys, q.copy())
    b = YoulaController(sys, q.copy(), check=True)
    p = plant.copy()
    for r in rng.standard_normal(40):
        y = p.output()
        ua, ub = yk_step(a, r, y), yk_step(b, r, y)
        assert ua == pytest.approx(ub, abs=1e-9)
        p.lti_step(ua)


# -- oracle ---------------------------------------------------------------------------

def test_oracle_zero_reference(rng):
    plant, _ = _setup(rng)
    o = YkOracle(plant, StableLinearOperator.random(2, rng))
    assert all(yk_oracle_step(o, 0.0) == (0.0, 0.0) for _ in range(20))


def test_oracle_small_gain_scalar_plant():
    plant = StateSpaceModel([[0.5]], [1.0], [1.0])
    q = StableLinearOperator(StableLinearOperator.zero(1).params, [0.0], [0.0], 0.3)
    o = YkOracle(plant, q)
    assert np.max(np.abs(np.linalg.eigvals(o.closed_loop_matrix()))) < 1
    ys = [yk_oracle_step(o, 1.0)[1] for _ in range(200)]
    # K = Q/(1-QP) with constant Q: y -> Q P(1) = 0.3 * 2
    assert ys[-1] == pytest.approx(0.6, abs=1e-9)


def test_oracle_impulse_matches_convolution(rng):
    plant, _ = _setup(rng)
    q = StableLinearOperator.random(3, rng)
    o = YkOracle(plant, q)
    r = np.zeros(51)
    r[0] = 1.0
    u_or = [yk_oracle_step(o, v)[0] for v in r]
    u_conv = yk_convolution(q.impulse_response(51), plant.markov(51), r)
    np.testing.assert_allclose(u_or, u_conv, atol=1e-10)


def test_convolution_needs_strictly_proper():
    with pytest.raises(ValueError):
        yk_convolution([1.0], [1.0, 0.5], [1.0])


# -- closed-loop runs --------------------------------------------------------------------

def test_closed_loop_zero_everything(rng):
    plant, sys = _setup(rng)
    ctrl = YoulaController(sys, StableLinearOperator.random(2, rng))
    log = closed_loop_run(plant.copy(), ctrl, lambda t: 0.0, 50)
    assert not np.any(log.column("y")) and not np.any(log.column("u"))
    assert not log.aborted


def test_closed_loop_random_q_bounded(rng):
    # exact internal model; measurement noise enters the loop as a bounded input
    plant, sys = _setup(rng)
    reward = make_reward("sparse")
    for i in range(100):
        q = (StableLinearOperator.random(3, rng) if i % 2
             else StableNonlinearOperator.random(2, rng, width=8, v_width=8))
        ctrl = YoulaController(sys, q)
        log = closed_loop_run(plant.copy(), ctrl, lambda t: np.sign(np.sin(t / 20)), 300,
                              noise_std=0.01, rng=rng, reward=reward)
        assert not log.aborted
        assert log.max_abs_y <= 1e3


def test_closed_loop_log_csv(tmp_path, rng):
    plant, sys = _setup(rng)
    log = closed_loop_run(plant.copy(), YoulaController(sys, StableLinearOperator.random(2, rng)),
                          lambda t: 1.0, 10)
    log.to_csv(tmp_path / "ep.csv")
    head = (tmp_path / "ep.csv").read_text().splitlines()
    assert head[0] == "t,r,y,u,e,reward" and len(head) == 11
