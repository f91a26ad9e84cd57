"""Experiment runner: ``ddyk <subcommand> [--config INI] [--out DIR] ...``.

Exit codes: 0 success, 1 runtime failure (or a failed check in ``sim-check``),
2 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time

import numpy as np

from . import config as config_mod
from . import envs, hankel, pitune, randhankel, rl, svgplot
from .config import ConfigError
from .stable_ops import StableLinearOperator
from .youla import YkOracle, YoulaController, yk_oracle_step, yk_step

log = logging.getLogger("ddyk")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


# -- sim-check -------------------------------------------------------------------

def simulation_case(rng, n, steps=200, input_factor=10, L=None):
    """Max deviation between data-driven and state-space simulation of a random plant.

    The recorded data, the initial window and the continuation all come from
    one long run of the plant under Gaussian input, so the initial window is a
    genuine trajectory of the system.
    """
    L = n if L is None else L
    plant = envs.StateSpaceModel.random_stable(n, rng)
    n_data = input_factor * (L + n) + 1
    u = rng.standard_normal(n_data + L + steps)
    y = plant.copy().simulate(u)
    sys_ = hankel.HankelSystem.from_data(u[:n_data], y[:n_data], L, order_bound=n)
    init = hankel.Window(u[n_data:n_data + L], y[n_data:n_data + L])
    u_test = u[n_data + L:]
    try:
        traj = hankel.data_driven_simulate(sys_, init, u_test, steps, check=False)
    except hankel.SimulationDivergedError:
        return math.inf
    return float(np.max(np.abs(traj.outputs - y[n_data + L:])))


def yk_case(rng, n, q_order, steps=100, input_factor=10):
    """``max |u_alg - u_oracle|`` for a random (plant, linear Q) pair."""
    plant = envs.StateSpaceModel.random_stable(n, rng)
    u = rng.standard_normal(input_factor * 2 * n + 1)
    sys_ = hankel.HankelSystem.from_data(u, plant.copy().simulate(u), n, order_bound=n)
    q = StableLinearOperator.random(q_order, rng, io_scale=0.5)
    oracle = YkOracle(plant, q)
    ctrl = YoulaController(sys_, q.copy())
    ctrl.reset()
    p = plant.copy()
    p.reset()
    ref = rng.standard_normal(steps)
    err = 0.0
    for t in range(steps):
        u_alg = yk_step(ctrl, ref[t], p.output())
        u_or, _ = yk_oracle_step(oracle, ref[t])
        err = max(err, abs(u_alg - u_or))
        p.lti_step(u_alg)
    return err if math.isfinite(err) else math.inf


def cmd_sim_check(cfg):
    config_mod.validate_positive(cfg, "plants", "max_order", "steps", "input_factor",
                                 "yk_pairs", "yk_steps", "max_q_order", "tol")
    rng = np.random.default_rng([cfg["seed"], 11])
    rows = []
    for i in range(cfg["plants"]):
        n = int(rng.integers(1, cfg["max_order"] + 1))
        err = simulation_case(rng, n, cfg["steps"], cfg["input_factor"])
        rows.append(("simulate", i, n, n, err))
    for i in range(cfg["yk_pairs"]):
        n = int(rng.integers(1, cfg["max_order"] + 1))
        m = int(rng.integers(1, cfg["max_q_order"] + 1))
        rows.append(("youla", i, n, m, yk_case(rng, n, m, cfg["yk_steps"], cfg["input_factor"])))
    if cfg["force_short_window"]:
        # window shorter than the state: predictions are no longer unique
        n = max(2, cfg["max_order"])
        try:
            err = simulation_case(rng, n, cfg["steps"], cfg["input_factor"], L=n - 1)
        except hankel.InconsistentTrajectoryError:
            err = math.inf
        rows.append(("short_window", 0, n, n - 1, err))
    os.makedirs(cfg["out"], exist_ok=True)
    rows_out = [(kind, i, n, m, err, int(err < cfg["tol"])) for kind, i, n, m, err in rows]
    _write_rows(os.path.join(cfg["out"], "sim_check.csv"),
                ["suite", "case", "n", "param", "max_error", "pass"], rows_out)
    failed = [r for r in rows_out if not r[5]]
    worst = max((r[4] for r in rows_out), default=0.0)
    print(f"sim-check: {len(rows_out) - len(failed)}/{len(rows_out)} cases under "
          f"{cfg['tol']:g} (worst {worst:.3e})")
    for kind, i, n, m, err, _ in failed:
        print(f"  FAIL {kind} case {i}: n={n} param={m} max_error={err:.3e}", file=sys.stderr)
    if cfg["plots"]:
        svgplot.chart(os.path.join(cfg["out"], "sim_check.svg"),
                      points=[(k, [r[1] for r in rows_out if r[0] == k],
                               [max(r[4], 1e-18) for r in rows_out if r[0] == k])
                              for k in ("simulate", "youla", "short_window")],
                      title="oracle equivalence", xlabel="case", ylabel="max error", logy=True)
    return 1 if failed else 0


# -- rand-hankel -------------------------------------------------------------------

def cmd_rand_hankel(cfg):
    config_mod.validate_positive(cfg, "L_list", "N_list", "trials", "hw_n", "hw_trials",
                                 "rollout_L", "rollout_N", "seeds", "dt", "rollout_steps",
                                 "divergence_factor")
    if not 0 < cfg["hw_alpha"] < 1:
        raise ConfigError("hw_alpha must lie in (0, 1)")
    if cfg["noise_std"] < 0:
        raise ConfigError("noise_std must be nonnegative")
    for L in cfg["L_list"]:
        for N in cfg["N_list"]:
            if N < L:
                raise ConfigError(f"N={N} is smaller than L={L}")
            try:
                randhankel.r_N(L, N)
            except randhankel.BoundaryError as exc:
                raise ConfigError(str(exc)) from exc
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    seed = cfg["seed"]
    rows = []
    for L in cfg["L_list"]:
        rep = randhankel.sample_spectra(randhankel.McConfig(L, list(cfg["N_list"]),
                                                            cfg["trials"], seed))
        rows.extend(rep.rows)
        slope = randhankel.sigma_growth_slope(rep, L) if len(rep.rows) > 1 else math.nan
        for r in rep.rows:
            print(f"L={L} N={r.N}: Pr(sigma_min > r_N)={r.pr_sigma_gt_rN:.3f} "
                  f"median rho={r.rho_q50:.3f} wall ok={r.wall_all}")
        print(f"L={L}: sigma_min growth slope {slope:.3f}")
    report = randhankel.McReport(rows)
    report.to_csv(os.path.join(out, "mc_report.csv"))
    _write_rows(os.path.join(out, "mc_bounds.csv"),
                ["L", "N", "sigma_median", "r_N", "eps_N", "wall_all"],
                [(r.L, r.N, r.sigma_median, r.r_N, r.eps_N, int(r.wall_all)) for r in rows])
    hw = randhankel.verify_hw_corollary(cfg["hw_n"], cfg["hw_alpha"], cfg["hw_trials"], seed)
    _write_rows(os.path.join(out, "hw.csv"), ["n", "alpha", "p_square", "p_cross"],
                [(n, cfg["hw_alpha"], a, b) for n, a, b in hw])
    rcfg = randhankel.RolloutConfig(L=cfg["rollout_L"], N_list=list(cfg["rollout_N"]),
                                    noise_std=cfg["noise_std"], seeds=cfg["seeds"],
                                    rollout_steps=cfg["rollout_steps"],
                                    divergence_factor=cfg["divergence_factor"], seed=seed)
    if any(N <= rcfg.L for N in rcfg.N_list):
        raise ConfigError("every rollout N must exceed rollout_L")
    recs = randhankel.noisy_rollout_experiment(envs.benchmark_plant(cfg["dt"]), rcfg)
    randhankel.write_rollouts(os.path.join(out, "rollouts.csv"), recs)
    _write_rows(os.path.join(out, "rollout_traces.csv"), ["N", "seed", "step", "window_norm"],
                [(r.N, r.seed, t, float(v)) for r in recs for t, v in enumerate(r.norms)])
    for N in rcfg.N_list:
        sel = [r for r in recs if r.N == N]
        print(f"rollout N={N}: diverged {sum(r.diverged for r in sel)}/{len(sel)}, "
              f"rho<1.05 in {sum(r.rho_noisy < 1.05 for r in sel)}/{len(sel)}, "
              f"noise-free rho {sel[0].rho_noisefree:.6f}")
    if cfg["plots"]:
        svgplot.chart(os.path.join(out, "rho_quantiles.svg"),
                      lines=[(f"L={L} median", [r.N for r in report.for_L(L)],
                              [r.rho_q50 for r in report.for_L(L)]) for L in cfg["L_list"]],
                      title="median spectral radius", xlabel="N", ylabel="rho", logx=True)
        svgplot.chart(os.path.join(out, "sigma_min.svg"),
                      lines=[(f"L={L}", [r.N for r in report.for_L(L)],
                              [r.sigma_median for r in report.for_L(L)]) for L in cfg["L_list"]]
                      + [(f"r_N L={L}", [r.N for r in report.for_L(L)],
                          [r.r_N for r in report.for_L(L)]) for L in cfg["L_list"]],
                      title="smallest singular value", xlabel="N", ylabel="sigma_min",
                      logx=True, logy=True)
        for N in rcfg.N_list:
            sel = [r for r in recs if r.N == N and len(r.norms)]
            svgplot.chart(os.path.join(out, f"rollout_N{N}.svg"),
                          lines=[(f"seed {r.seed}", list(range(len(r.norms))), list(r.norms))
                                 for r in sel],
                          title=f"free-response window norm, N={N}", xlabel="step",
                          ylabel="norm", logy=True)
    return 0


# -- train-tank --------------------------------------------------------------------

def tank_setup(cfg):
    """Task, policy factory, training config and scoring seeds for ``train-tank``.

    Every session is scored on the same ``score_scenarios`` seeded scenarios,
    so the per-episode median across sessions compares like with like.
    """
    params = envs.TankParams(noise_var=cfg["noise_var"])
    sys_ = rl.identify_tank_model(params, samples=cfg["id_samples"], L=cfg["L"],
                                  action_scale=cfg["action_scale"], seed=cfg["seed"])
    task = rl.TankTask(sys_, params, cfg=rl.TankTaskConfig(
        action_scale=cfg["action_scale"], q_limit=cfg["q_limit"],
        effort_weight=cfg["effort_weight"], gamma_rl=cfg["gamma_rl"]))
    if cfg["policy"] == "nonlinear":
        def factory(rng):
            return rl.nonlinear_q_policy(cfg["q_order"], rng, width=cfg["q_width"],
                                         beta=cfg["beta"])
    else:
        def factory(rng):
            return rl.linear_q_policy(cfg["q_order"], rng)
    tcfg = rl.TrainConfig(sessions=cfg["sessions"], episodes=cfg["episodes"],
                          steps=cfg["steps"], gamma_rl=cfg["gamma_rl"], k=cfg["k"],
                          sigma=cfg["sigma"], eta=cfg["eta"], normalize=cfg["normalize"],
                          seed=cfg["seed"])
    score = np.random.default_rng([cfg["seed"], 99]).integers(2**31, size=cfg["score_scenarios"])
    return task, factory, tcfg, [int(v) for v in score]


def cmd_train_tank(cfg):
    config_mod.validate_positive(cfg, "sessions", "episodes", "steps", "k", "sigma", "eta",
                                 "q_order", "q_width", "id_samples", "L", "action_scale",
                                 "q_limit", "score_scenarios")
    if cfg["policy"] not in ("nonlinear", "linear"):
        raise ConfigError(f"policy must be 'nonlinear' or 'linear', got {cfg['policy']!r}")
    if not 0 < cfg["beta"] < 1 or not 0 < cfg["gamma_rl"] < 1:
        raise ConfigError("beta and gamma_rl must lie in (0, 1)")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    task, factory, tcfg, score = tank_setup(cfg)
    dim = factory(np.random.default_rng(0)).dim
    t0 = time.time()
    res = rl.train(lambda s: task, factory, tcfg, eval_seed=score)
    elapsed = time.time() - t0
    rl.write_reward_curves(os.path.join(out, "rewards.csv"), res.returns)
    rl.write_summary(os.path.join(out, "rewards_summary.csv"), res.returns)
    med = res.median_curve()
    ok, final, best = rl.plateau_check(med)
    # sample rollout: final parameters of session 0 on a fresh scenario
    pol = factory(np.random.default_rng([cfg["seed"], 0]))
    ep = task.run(pol.unflatten(res.thetas[0][-1]), cfg["steps"], seed=cfg["seed"] + 1)
    ep.to_csv(os.path.join(out, "sample_rollout.csv"))
    _write_rows(os.path.join(out, "training_summary.csv"),
                ["sessions", "episodes", "policy_dim", "rollouts", "aborts", "max_abs_y",
                 "plateau_ok", "final_median", "best_median"],
                [(tcfg.sessions, tcfg.episodes, dim, res.rollouts, res.aborts,
                  res.max_abs_y, int(ok), final, best)])
    print(f"train-tank: {tcfg.sessions}x{tcfg.episodes} episodes, policy dim {dim}, "
          f"{res.rollouts} rollouts, aborts {res.aborts}, max |y| {res.max_abs_y:.3f}, "
          f"plateau {'ok' if ok else 'not reached'} (final {final:.3f}, best {best:.3f}), "
          f"{elapsed:.1f} s")
    if cfg["plots"]:
        m, q25, q75 = rl.reward_summary(res.returns)
        ep_ax = list(range(1, len(m) + 1))
        svgplot.chart(os.path.join(out, "rewards.svg"),
                      lines=[("median", ep_ax, m), ("q25", ep_ax, q25), ("q75", ep_ax, q75)],
                      title="tank training return", xlabel="episode", ylabel="return")
        t_ax = list(ep.column("t"))
        svgplot.chart(os.path.join(out, "input_output.svg"),
                      lines=[("setpoint", t_ax, ep.column("r")),
                             ("measured level", t_ax, ep.column("y"))],
                      title="sample rollout", xlabel="time [s]", ylabel="level [m]")
    return 0


# -- pi-tune -------------------------------------------------------------------------

def cmd_pi_tune(cfg):
    config_mod.validate_positive(cfg, "dt", "sessions", "episodes", "steps", "k", "sigma",
                                 "eta", "hankel_samples", "L", "horizon", "order",
                                 "boundary_points")
    if not 0 <= cfg["margin"] < 1:
        raise ConfigError("margin must lie in [0, 1)")
    if cfg["kp_min"] >= cfg["kp_max"] or cfg["ki_min"] >= cfg["ki_max"]:
        raise ConfigError("grid bounds must satisfy min < max")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    dt = cfg["dt"]
    plant = pitune.pi_plant(dt)
    sys_ = pitune.pi_hankel(plant, cfg["hankel_samples"], cfg["L"], seed=cfg["seed"])
    task = pitune.PiTask(plant, envs.make_reward("sparse", envs.RewardConfig(delta=cfg["delta"])),
                         gamma_rl=cfg["gamma_rl"])
    tcfg = rl.TrainConfig(sessions=cfg["sessions"], episodes=cfg["episodes"],
                          steps=cfg["steps"], gamma_rl=cfg["gamma_rl"], k=cfg["k"],
                          sigma=cfg["sigma"], eta=cfg["eta"], normalize=True, seed=cfg["seed"])
    pcfg = pitune.ProjectionConfig(margin=cfg["margin"], horizon=cfg["horizon"],
                                   order=cfg["order"])
    theta0 = pitune.PiParams(cfg["kp0"], cfg["ki0"], dt)
    runs = {}
    for name, con in (("unconstrained", False), ("constrained", True)):
        t0 = time.time()
        runs[name] = pitune.constrained_training_run(task, sys_, theta0, tcfg, con, pcfg, plant)
        r = runs[name]
        rl.write_reward_curves(os.path.join(out, f"rewards_{name}.csv"), r.result.returns)
        rl.write_summary(os.path.join(out, f"rewards_{name}_summary.csv"), r.result.returns)
        print(f"pi-tune {name}: unstable visits {r.unstable_visits}, "
              f"max rho_cl {max(r.oracle_rho):.4f}, {time.time() - t0:.1f} s")
    visits = []
    for name, r in runs.items():
        i = 0
        for s, trace in enumerate(r.result.thetas):
            for e, v in enumerate(trace[1:]):
                visits.append((name, s, e + 1, float(v[0]), float(v[1]), r.oracle_rho[i],
                               int(r.oracle_rho[i] >= 1.0)))
                i += 1
    _write_rows(os.path.join(out, "visits.csv"),
                ["run", "session", "episode", "kp", "ki", "rho_cl", "unstable"], visits)
    pitune.write_heatmap(os.path.join(out, "heatmap.csv"), runs["constrained"].result.projections)
    ki_b = np.linspace(cfg["ki_min"], cfg["ki_max"], cfg["boundary_points"])
    boundary = pitune.stability_boundary(plant, ki_b, dt)
    pitune.write_boundary(os.path.join(out, "boundary.csv"), boundary)
    kps = np.linspace(cfg["kp_min"], cfg["kp_max"], 20)
    kis = np.linspace(cfg["ki_min"], cfg["ki_max"], 20)
    grid = []
    for ki in kis:
        for kp in kps:
            pi = pitune.PiParams(kp, ki, dt)
            rho = pitune.model_stability_oracle(pi, plant)["rho_cl"]
            cert = pitune.fit_certificate(pi, sys_, cfg["horizon"], cfg["order"], budget=0)
            grid.append((float(kp), float(ki), rho, int(rho < 1.0), int(cert.feasible(0.0)),
                         int(abs(rho - 1.0) < 0.02)))
    _write_rows(os.path.join(out, "grid.csv"),
                ["kp", "ki", "rho_cl", "oracle_stable", "certified", "in_band"], grid)
    disagree = sum(1 for g in grid if not g[5] and g[3] != g[4])
    print(f"pi-tune grid: {disagree} disagreements outside the band, "
          f"{len(boundary)} boundary points")
    if cfg["plots"]:
        post = [p for _s, _e, _pre, p in runs["constrained"].result.projections]
        pre = [p for _s, _e, p, _post in runs["constrained"].result.projections]
        unc = [v for tr in runs["unconstrained"].result.thetas for v in tr]
        svgplot.chart(os.path.join(out, "pi_params.svg"),
                      lines=[("oracle boundary", [b[0] for b in boundary],
                              [b[1] for b in boundary])],
                      points=[("pre-projection", [p[0] for p in pre], [p[1] for p in pre]),
                              ("post-projection", [p[0] for p in post], [p[1] for p in post]),
                              ("unconstrained", [p[0] for p in unc], [p[1] for p in unc])],
                      title="PI parameters", xlabel="kp", ylabel="ki")
        lines = []
        for name, r in runs.items():
            m = r.result.median_curve()
            lines.append((name, list(range(1, len(m) + 1)), m))
        svgplot.chart(os.path.join(out, "rewards_pi.svg"), lines=lines,
                      title="PI training return (median)", xlabel="episode", ylabel="return")
    return 0


# -- entry point ---------------------------------------------------------------------

COMMANDS = {
    "sim-check": (cmd_sim_check, "data-driven simulation and YK oracle equivalence"),
    "rand-hankel": (cmd_rand_hankel, "random-Hankel Monte Carlo and noisy rollouts"),
    "train-tank": (cmd_train_tank, "train a YK policy on the two-tank process"),
    "pi-tune": (cmd_pi_tune, "stability-projected PI tuning"),
}


def build_parser():
    p = argparse.ArgumentParser(prog="ddyk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="INI file with [global] and [%s] sections" % name)
        s.add_argument("--out", help="output directory (default: out)")
        s.add_argument("--seed", type=int, help="base seed (nonnegative)")
        s.add_argument("--plots", action="store_true", help="also write SVG charts")
        s.add_argument("--quick", action="store_true", help="smoke-scale settings")
    return p


def resolve_config(args):
    cfg = config_mod.load(args.command, args.config, quick=args.quick)
    if args.out is not None:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.plots:
        cfg["plots"] = True
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg['seed']}")
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
