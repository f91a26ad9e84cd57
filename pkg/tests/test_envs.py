import math

import numpy as np
import pytest
from scipy import integrate, signal

from ddyk import envs
from ddyk.envs import (PidController, StateSpaceModel, TankEnv, TankParams, TankState,
                       benchmark_plant, discretize_zoh, make_reward, pid_step)


# -- discretization -----------------------------------------------------------------

def test_zoh_zero_matrix():
    Ad, Bd = discretize_zoh(np.zeros((2, 2)), [1.0, 2.0], 0.3)
    np.testing.assert_allclose(Ad, np.eye(2))
    np.testing.assert_allclose(Bd[:, 0], [0.3, 0.6])


def test_zoh_scalar():
    Ad, _ = discretize_zoh([[-1.0]], [1.0], 0.25)
    assert Ad[0, 0] == pytest.approx(math.exp(-0.25), rel=1e-14)


def test_zoh_matches_rk4(rng):
    A = rng.standard_normal((4, 4))
    Ad, _ = discretize_zoh(A, np.zeros(4), 0.1)
    h = 0.01
    X = np.eye(4)
    for _ in range(10):
        k1 = A @ X
        k2 = A @ (X + 0.5 * h * k1)
        k3 = A @ (X + 0.5 * h * k2)
        k4 = A @ (X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(Ad, X, atol=1e-8)


def test_zoh_eigenvalues(rng):
    A = rng.standard_normal((5, 5))
    Ad, _ = discretize_zoh(A, np.ones(5), 0.2)
    lam = np.sort_complex(np.exp(0.2 * np.linalg.eigvals(A)))
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(Ad)), lam, atol=1e-10)


def test_zoh_rejects_bad_dt():
    with pytest.raises(ValueError):
        discretize_zoh(np.eye(2), np.ones(2), 0.0)


# -- LTI plants -----------------------------------------------------------------------

def test_lti_step_zero():
    p = benchmark_plant()
    assert p.lti_step(0.0) == 0.0 and not np.any(p.x)


def test_markov_parameters(rng):
    p = StateSpaceModel.random_stable(3, rng)
    h = p.markov(10)
    assert h[0] == 0.0
    for k in range(1, 10):
        expect = p.C[0] @ np.linalg.matrix_power(p.A, k - 1) @ p.B[:, 0]
        assert h[k] == pytest.approx(expect, abs=1e-12)


def test_benchmark_step_response_matches_continuous():
    p = benchmark_plant(0.1)
    y = p.simulate(np.ones(101))
    t = np.arange(101) * 0.1
    _, y_c = signal.step(([-1.0, 1.0], [1.0, 3.0, 3.0, 1.0]), T=t)
    # sample k sees the input held since t = 0, i.e. the response at t_k
    assert np.max(np.abs(y - y_c)) < 2e-3


def test_simulate_from_initial_state(rng):
    p = StateSpaceModel.random_stable(2, rng)
    x0 = rng.standard_normal(2)
    u = rng.standard_normal(20)
    y = p.simulate(u, x0)
    q = p.copy()
    q.reset(x0)
    np.testing.assert_allclose(y, [q.lti_step(v) for v in u], atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_random_stable_plant(n, rng):
    for _ in range(20):
        p = StateSpaceModel.random_stable(n, rng)
        assert p.spectral_radius <= 0.95 + 1e-12
        assert envs.is_controllable(p.A, p.B) and envs.is_observable(p.A, p.C)


def test_improper_tf_rejected():
    with pytest.raises(ValueError):
        StateSpaceModel.from_continuous_tf([1.0, 1.0], [1.0, 2.0], 0.1)


# -- PID -----------------------------------------------------------------------------------

def test_pid_zero_error_holds_output():
    pid = PidController(1.0, 0.5, dt=0.1)
    pid.reset(u0=2.0)
    assert all(pid_step(pid, 0.0) == 2.0 for _ in range(5))


def test_pid_proportional_jump():
    pid = PidController(1.0, 0.0)
    assert pid_step(pid, 1.0) == 1.0


def test_pid_clamp_is_antiwindup():
    pid = PidController(0.0, 1.0, u_min=-1.0, u_max=1.0)
    for _ in range(10):
        pid_step(pid, 1.0)
    assert pid.u_prev == 1.0
    assert pid_step(pid, -1.0) == 0.0


def test_pid_first_order_plant_no_steady_error():
    tau, dt = 2.0, 0.1
    a = math.exp(-dt / tau)
    pid = PidController(1.0, 0.5, dt=dt)
    y = 0.0
    for _ in range(int(50 * tau / dt)):
        u = pid_step(pid, 1.0 - y)
        y = a * y + (1 - a) * u
    assert abs(1.0 - y) < 1e-3


def test_pid_validation():
    with pytest.raises(ValueError):
        PidController(1.0, 1.0, dt=0.0)
    with pytest.raises(ValueError):
        PidController(1.0, 1.0, u_min=1.0, u_max=0.0)


# -- tank -----------------------------------------------------------------------------------

def _quiet():
    return TankParams(noise_var=0.0)


def test_tank_equilibrium_is_fixed():
    p = _quiet()
    env = TankEnv(p, seed=0)
    env.reset(0.5)
    x0 = env.x.copy()
    for _ in range(50):
        env.step(0.5)
    np.testing.assert_allclose(env.x, x0, rtol=1e-9, atol=1e-12)


def test_tank_drain_monotone():
    lv = envs.drain_trajectory(_quiet(), 0.8, 400)
    assert np.all(np.diff(lv) <= 0)
    assert lv[-1] < 0.5 * lv[0]


def test_tank_pid_step_settles():
    env = TankEnv(_quiet(), seed=0)
    env.reset(0.4)
    for _ in range(2000):
        st, _ = env.step(0.55)
    assert st.level == pytest.approx(0.55, abs=5e-3)


def test_tank_mass_balance_convergence():
    r = envs.rk4_convergence_ratio()
    assert 12.0 <= r <= 20.0


def test_tank_noise_variance():
    env = TankEnv(TankParams(), seed=1)
    env.reset(0.5)
    d = []
    for _ in range(10_000):
        env.step(0.5)
        d.append(env.last_measurement - env.x[4])
    assert 0.013 <= np.var(d, ddof=1) <= 0.017


def test_tank_pump_clamped():
    env = TankEnv(_quiet(), seed=0)
    env.reset(0.5)
    for _ in range(20):
        env.step(0.5, 1.0)
    assert 0.0 <= env.x[0] <= 100.0


def test_tank_seed_determinism():
    a, b = TankEnv(seed=4), TankEnv(seed=4)
    ya = [a.step(0.6)[1] for _ in range(30)]
    yb = [b.step(0.6)[1] for _ in range(30)]
    assert ya == yb


def test_tank_params_validated():
    with pytest.raises(ValueError):
        TankParams(r_tank=0.0)
    with pytest.raises(ValueError):
        TankParams(noise_var=-1.0)


def test_tank_steady_state_inflow():
    p = TankParams()
    st = TankState.steady(p, 0.5)
    assert st.f_in == pytest.approx(p.k_out * math.sqrt(0.5))
    assert 0.0 < st.p < 100.0


def test_tank_rk4_against_scipy():
    p = _quiet()
    x0 = TankState(0.0, 0.0, 0.0, 0.3, 0.3).as_array()
    x = envs.integrate_open_loop(p, x0, 80.0, 20.0, 400)

    def rhs(_t, s):
        pp, fi, fo, lv, m = s
        return [(80.0 - pp) / p.tau_p, (p.f_max * pp / 100 - fi) / p.tau_in,
                (p.k_out * math.sqrt(max(lv, 0.0)) - fo) / p.tau_out,
                (fi - fo) / p.area_tank, (lv - m) / p.tau_m]

    sol = integrate.solve_ivp(rhs, (0, 20.0), x0, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(x, sol.y[:, -1], rtol=1e-7, atol=1e-10)


# -- rewards ----------------------------------------------------------------------------------

def test_sparse_reward():
    r = make_reward("sparse", envs.RewardConfig(delta=0.05))
    assert r(0.0) == 1.0
    assert r(0.05) == 0.0 and r(-0.05) == 0.0


def test_tank_reward():
    r = make_reward("tank", envs.RewardConfig(effort_weight=0.1))
    assert r(0.0, 0.0) == 0.0
    assert r(0.2, -1.0) == pytest.approx(-0.3)


def test_unknown_reward():
    with pytest.raises(ValueError):
        make_reward("dense")
