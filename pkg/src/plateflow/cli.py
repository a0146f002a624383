"""Batch entry point: simulate / verify / probe.

Exit codes: 0 success (all requested audits pass), 1 audit threshold
failed, 2 config error, 3 solver failure, 4 unknown suite or probe.
"""

import argparse
import json
import os
import sys
import numpy as np

from . import diagnostics as diag
from .attractor import (stationary_solve, dissipativity_probe,
                        separation_probe, state_distance)
from .config import ConfigError, load_config, _with_dt
from .coupling import System, CoupledState
from .errors import SolverConvergenceError
from .grid import build_grids, discrete_div
from .mms import ManufacturedStokes, convergence_order
from .plate import (SymTensorField2D, stress_C, plate_energy,
                    vonkarman_forces, strain_P, tensor_dot,
                    elastic_gradient)
from .snapshot import save_state
from .stokes import StokesWorkspace, lifting_N0, traction_Tf


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plateflow",
        description="coupled flow-plate simulations and analytic audits")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, extra in (("simulate", {}),
                        ("verify", {"--suite": True}),
                        ("probe", {"--kind": True})):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=1234)
        if "--suite" in extra:
            p.add_argument("--suite", required=True)
        if "--kind" in extra:
            p.add_argument("--kind", required=True)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "verify":
            return cmd_verify(cfg, args)
        return cmd_probe(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SolverConvergenceError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3


def _outdir(cfg, args):
    out = cfg.output_dir(args.output_dir)
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, args):
    params = cfg.params()
    system = System(params)
    forcing = cfg.forcing(system.plate_grid)
    state0 = cfg.initial_state(system)
    out = _outdir(cfg, args)

    recorder = diag.DiagnosticsRecorder(system, forcing)
    recorder.start(state0)
    traj = system.run(state0, forcing=forcing, t_end=cfg.t_end,
                      observers=(recorder,))
    if traj.stride == 1:
        recorder.attach_derived(traj)
    diag.write_diagnostics_csv(os.path.join(out, "diagnostics.csv"),
                               recorder.rows)
    save_state(os.path.join(out, "final.snap"), traj.final_state, params)

    E = np.array([r["E_total"] for r in recorder.rows])
    t = np.array([r["t"] for r in recorder.rows])
    summary = {
        "version": 1,
        "steps": len(traj.times),
        "t_end": traj.final_state.time,
        "E_initial": float(E[0]),
        "E_final": float(E[-1]),
        "max_balance_residual": float(np.max(np.abs(
            [r["balance_residual"] for r in recorder.rows]))),
        "mean_w_drift": float(np.max(np.abs(
            [r["mean_w"] - recorder.rows[0]["mean_w"]
             for r in recorder.rows]))),
        "max_interface_residual": float(np.max(
            [r["interface_residual"] for r in recorder.rows])),
    }
    if np.all(E > 0) and len(E) >= 10:
        try:
            rate, offset = diag.decay_fit(t, E, tail=1.0)
            summary["fitted_decay_rate"] = rate
            summary["fitted_offset"] = offset
        except ValueError:
            pass
    diag.write_json_summary(os.path.join(out, "summary.json"), summary)
    print(f"simulate: {summary['steps']} steps, E {E[0]:.6e} -> {E[-1]:.6e}")
    print(f"artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(cfg, args):
    suites = {"stokes": _verify_stokes, "plate": _verify_plate,
              "energy": _verify_energy, "ball": _verify_ball}
    fn = suites.get(args.suite)
    if fn is None:
        print(f"unknown suite '{args.suite}' (choose from "
              f"{sorted(suites)})", file=sys.stderr)
        return 4
    out = _outdir(cfg, args)
    report = fn(cfg, np.random.default_rng(args.seed))
    path = os.path.join(out, f"verify_{args.suite}.json")
    diag.write_json_summary(path, report)
    ok = report["pass"]
    for line in report["log"]:
        print(line)
    print(f"verify[{args.suite}]: {'PASS' if ok else 'FAIL'} ({path})")
    return 0 if ok else 1


def _verify_stokes(cfg, rng):
    params = cfg.params()
    geo = params.geometry
    grids = cfg.verify_grids()
    log, errs, hs, divs = [], [], [], []
    for n in grids:
        from .grid import BoxGeometry
        g = BoxGeometry(geo.lx, geo.ly, geo.depth, n, n, n)
        fg, pg = build_grids(g)
        ws = StokesWorkspace(fg, pg, params.nu, tol=params.tol_linear)
        m = ManufacturedStokes(geo.lx, geo.ly, geo.depth, params.nu,
                               "interior")
        vf = ws.steady_solve(m.forcing(), None)
        err, nrm = m.velocity_error(fg, vf)
        dmax = float(np.max(np.abs(discrete_div(fg, vf))))
        errs.append(err / nrm)
        hs.append(g.spacings[0])
        divs.append(dmax)
        log.append(f"stokes MMS n={n}: rel L2 err {err/nrm:.4e}, "
                   f"max div {dmax:.2e}")
    order = convergence_order(hs, errs)
    log.append(f"measured velocity convergence order: {order:.3f}")

    # N0 linearity on the configured grid
    fg, pg = build_grids(geo)
    ws = StokesWorkspace(fg, pg, params.nu, tol=params.tol_linear)
    z = np.zeros((pg.nx, pg.ny))

    def rand_psi():
        w = rng.standard_normal((pg.nx, pg.ny))
        w[pg.ring_mask] = 0
        w[pg.interior_mask] -= w.sum() / pg.interior_mask.sum()
        b1 = rng.standard_normal((pg.nx, pg.ny)); b1[pg.ring_mask] = 0
        b2 = rng.standard_normal((pg.nx, pg.ny)); b2[pg.ring_mask] = 0
        return (b1, b2, w)

    pa, pb = rand_psi(), rand_psi()
    a_c, b_c = 0.7, -1.3
    va = lifting_N0(ws, pa)
    vb = lifting_N0(ws, pb)
    vc = lifting_N0(ws, tuple(a_c * x + b_c * y for x, y in zip(pa, pb)))
    lin_err = 0.0
    scale = 0.0
    for comp in ("v1", "v2", "v3"):
        diff = (getattr(vc, comp) - a_c * getattr(va, comp)
                - b_c * getattr(vb, comp))
        lin_err = max(lin_err, float(np.max(np.abs(diff))))
        scale = max(scale, float(np.max(np.abs(getattr(vc, comp)))))
    lin_rel = lin_err / max(scale, 1e-300)
    log.append(f"N0 linearity relative error: {lin_rel:.2e}")

    # traction sampling convergence on the shear solution
    terrs, ths = [], []
    for n in grids[:2]:
        from .grid import BoxGeometry
        g = BoxGeometry(geo.lx, geo.ly, geo.depth, n, n, n)
        fg2, pg2 = build_grids(g)
        ws2 = StokesWorkspace(fg2, pg2, params.nu, tol=params.tol_linear)
        m2 = ManufacturedStokes(geo.lx, geo.ly, geo.depth, params.nu, "shear")
        vf2 = ws2.steady_solve(m2.forcing(), m2.boundary_psi(pg2))
        tr = traction_Tf(fg2, vf2, params.nu)
        ex = m2.exact_traction(pg2)
        inner = pg2.interior_mask
        e = max(float(np.max(np.abs(tr[i][inner] - ex[i][inner])))
                for i in range(3))
        terrs.append(e)
        ths.append(g.spacings[0])
        log.append(f"traction n={n}: max interior err {e:.4e}")
    t_order = convergence_order(ths, terrs)
    log.append(f"traction convergence order: {t_order:.3f}")

    report = {
        "suite": "stokes", "grids": grids, "rel_errors": errs,
        "velocity_order": order, "max_divergence": max(divs),
        "n0_linearity": lin_rel, "traction_order": t_order,
        "checks": {
            "velocity_order>=1.8": order >= 1.8,
            "divergence<=1e-10": max(divs) <= 1e-10,
            "n0_linear<=1e-8": lin_rel <= 1e-8,
            "traction_order>=1": t_order >= 1.0,
        }, "log": log,
    }
    report["pass"] = all(report["checks"].values())
    return report


def _verify_plate(cfg, rng):
    params = cfg.params()
    fg, pg = build_grids(params.geometry)
    mu = params.mu
    log = []

    # stress positivity
    eps = [SymTensorField2D(*(rng.standard_normal((1, 1)) for _ in range(3)))
           for _ in range(1000)]
    vals = [float(tensor_dot(stress_C(e, mu), e)) for e in eps]
    pos_ok = all(v > 0 for v in vals)
    log.append(f"(C(eps),eps) > 0 on 1000 random tensors: {pos_ok}")

    # discrete gradient of the elastic energy, central differences
    from .grid import PlateField
    def rand_field(amp=1e-2):
        f = rng.standard_normal((pg.nx, pg.ny)) * amp
        f[pg.ring_mask] = 0.0
        return f
    z = np.zeros((pg.nx, pg.ny))
    u = PlateField(rand_field(), rand_field(), rand_field(), z, z, z)
    gw, g1, g2 = elastic_gradient(pg, u, mu)
    a = pg.node_area
    worst = 0.0
    for _ in range(100):
        dw, d1, d2 = rand_field(), rand_field(), rand_field()
        h = 1e-5
        up = PlateField(u.w + h * dw, u.u1 + h * d1, u.u2 + h * d2, z, z, z)
        um = PlateField(u.w - h * dw, u.u1 - h * d1, u.u2 - h * d2, z, z, z)
        fd = (plate_energy(pg, up, mu) - plate_energy(pg, um, mu)) / (2 * h)
        an = a * float(np.sum(gw * dw + g1 * d1 + g2 * d2))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-300))
    log.append(f"discrete-gradient test worst relative error: {worst:.2e}")

    # flux-form adjointness
    u2f = PlateField(rand_field(1.0), rand_field(1.0), rand_field(1.0),
                     z, z, z)
    f_w, _ = vonkarman_forces(pg, u2f, mu)
    d = rand_field(1.0)
    N = stress_C(strain_P(pg, u2f), mu)
    wx, wy = pg.ops.grad_w(u2f.w)
    dx, dy = pg.ops.grad_w(d)
    lhs = a * float(np.sum(f_w * d))
    rhs = -a * float(np.sum((N.e11 * wx + N.e12 * wy) * dx
                            + (N.e12 * wx + N.e22 * wy) * dy))
    adj = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    log.append(f"flux-form adjointness relative error: {adj:.2e}")

    report = {
        "suite": "plate", "gradient_worst": worst, "adjointness": adj,
        "checks": {
            "stress_positive": pos_ok,
            "gradient<=1e-6": worst <= 1e-6,
            "adjointness<=1e-10": adj <= 1e-10,
        }, "log": log,
    }
    report["pass"] = all(report["checks"].values())
    return report


def _run_balance(cfg, params, dt, forcing, state0):
    system = System(_with_dt(params, dt))
    traj = system.run(state0.copy(), forcing=forcing, t_end=cfg.t_end,
                      snapshot_stride=1)
    times, resid, _ = diag.energy_balance_audit(system, traj, forcing)
    return times, resid


def _verify_energy(cfg, rng):
    params = cfg.params()
    system = System(params)
    forcing = cfg.forcing(system.plate_grid)
    state0 = cfg.initial_state(system)
    log = []
    dt = params.dt
    _, r1 = _run_balance(cfg, params, dt, forcing, state0)
    _, r2 = _run_balance(cfg, params, dt / 2, forcing, state0)
    m1, m2 = float(np.max(np.abs(r1))), float(np.max(np.abs(r2)))
    ratio = m1 / m2 if m2 > 0 else np.inf
    log.append(f"balance residual max: dt={dt}: {m1:.4e}, "
               f"dt/2: {m2:.4e}, ratio {ratio:.2f}")
    zero_load = forcing["G_fl"] is None and forcing["G_pl"] is None
    nonneg = bool(np.min(r1) >= -1e-12 * max(1.0, m1)
                  and np.min(r2) >= -1e-12 * max(1.0, m2))
    if zero_load:
        log.append(f"zero-load residual nonnegative at every step: {nonneg}")
    report = {
        "suite": "energy", "residual_dt": m1, "residual_dt_half": m2,
        "ratio": ratio,
        "checks": {"ratio_in_[1.6,2.4]": 1.6 <= ratio <= 2.4},
        "log": log,
    }
    if zero_load:
        report["checks"]["zero_load_nonnegative"] = nonneg
    report["pass"] = all(report["checks"].values())
    return report


def _verify_ball(cfg, rng):
    params = cfg.params()
    system = System(params)
    forcing = cfg.forcing(system.plate_grid)
    state0 = cfg.initial_state(system)
    omegas = params.omega[:2] if len(params.omega) >= 2 else \
        (params.omega[0], 5 * params.omega[0])
    log = []
    results = {}
    for dt in (params.dt, params.dt / 2):
        sysd = System(_with_dt(params, dt))
        traj = sysd.run(state0.copy(), forcing=forcing, t_end=cfg.t_end,
                        snapshot_stride=1)
        for om in omegas:
            out = diag.ball_identity_audit(sysd, traj, om)
            results[(dt, om)] = out["max_residual"]
            log.append(f"ball dt={dt} omega={om}: residual "
                       f"{out['max_residual']:.4e} (scale {out['scale']:.3e})")
    dt0 = params.dt
    trend_c = results[(dt0, omegas[0])] / dt0
    checks = {}
    for om in omegas:
        ratio = results[(dt0, om)] / max(results[(dt0 / 2, om)], 1e-300)
        checks[f"omega={om}_ratio>=1.4"] = ratio >= 1.4
        for dt in (dt0, dt0 / 2):
            checks[f"omega={om}_dt={dt}_within_5x_trend"] = \
                results[(dt, om)] <= 5 * trend_c * dt
    report = {"suite": "ball",
              "residuals": {f"dt={k[0]},omega={k[1]}": v
                            for k, v in results.items()},
              "checks": checks, "log": log}
    report["pass"] = all(checks.values())
    return report


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

def cmd_probe(cfg, args):
    kinds = {"stationary": _probe_stationary,
             "dissipativity": _probe_dissipativity,
             "separation": _probe_separation}
    fn = kinds.get(args.kind)
    if fn is None:
        print(f"unknown probe '{args.kind}' (choose from {sorted(kinds)})",
              file=sys.stderr)
        return 4
    out = _outdir(cfg, args)
    report = fn(cfg, out)
    path = os.path.join(out, f"probe_{args.kind}.json")
    diag.write_json_summary(path, report)
    for line in report.get("log", []):
        print(line)
    print(f"probe[{args.kind}]: {'OK' if report['pass'] else 'FAIL'} ({path})")
    return 0 if report["pass"] else 1


def _probe_stationary(cfg, out):
    params = cfg.params()
    system = System(params)
    forcing = cfg.forcing(system.plate_grid)
    st = stationary_solve(system, forcing["G_fl"], forcing["G_pl"])
    s0 = CoupledState(st.fluid, st.plate, 0.0, st.traction)
    s1, rep = system.advance(s0, forcing["G_fl"], forcing["G_pl"])
    moved = state_distance(system, s0, s1)
    E = diag.energy_total(system, s0).E_total
    ok = (st.residuals["plate_w"] <= 1e-9
          and st.residuals["plate_inplane"] <= 1e-9
          and moved <= 10 * params.tol_couple)
    return {
        "probe": "stationary", "residuals": st.residuals,
        "energy": E, "volume_multiplier": st.volume_multiplier,
        "fixed_point_distance": moved, "pass": bool(ok),
        "log": [f"stationary residuals {st.residuals}",
                f"one coupled step moves it by {moved:.3e} "
                f"(10*tol={10*params.tol_couple:.1e})"],
    }


def _probe_dissipativity(cfg, out):
    params = cfg.params()
    system = System(params)
    forcing = cfg.forcing(system.plate_grid)
    base = cfg.initial_state(system)
    # second trajectory: ten times the amplitude (energy x100)
    pg = system.plate_grid
    big = CoupledState(base.fluid.copy(), base.plate.copy(), 0.0)
    for f in ("v1", "v2", "v3", "p"):
        setattr(big.fluid, f, 10 * getattr(big.fluid, f))
    big.fluid.trace = tuple(10 * t for t in big.fluid.trace)
    for f in ("w", "u1", "u2", "wt", "u1t", "u2t"):
        setattr(big.plate, f, 10 * getattr(big.plate, f))
    rep = dissipativity_probe(system, [base, big], forcing, t_end=cfg.t_end)
    ok = all(t is not None for t in rep.entry_times) \
        and not any(rep.details["escaped_after_entry"])
    series_path = os.path.join(out, "dissipativity_energies.csv")
    with open(series_path, "w") as fh:
        fh.write("t,E_small,E_big\n")
        for (t, e1), (_, e2) in zip(zip(*rep.energies[0]),
                                    zip(*rep.energies[1])):
            fh.write(f"{t:.17g},{e1:.17g},{e2:.17g}\n")
    return {
        "probe": "dissipativity", "radius": rep.radius,
        "entry_times": rep.entry_times,
        "sup_energy_after_entry": rep.sup_energy_after_entry,
        "fitted_rates": rep.fitted_rates,
        "energy_series": series_path, "pass": bool(ok),
        "log": [f"R0={rep.radius:.4e} entry times {rep.entry_times}"],
    }


def _probe_separation(cfg, out):
    params = cfg.params()
    system = System(params)
    forcing = cfg.forcing(system.plate_grid)
    sa = cfg.initial_state(system)
    scale = cfg.get("diagnostics", "separation_scale", 0.5)
    sb = CoupledState(sa.fluid.copy(), sa.plate.copy(), 0.0)
    for f in ("v1", "v2", "v3", "p"):
        setattr(sb.fluid, f, scale * getattr(sb.fluid, f))
    sb.fluid.trace = tuple(scale * t for t in sb.fluid.trace)
    for f in ("w", "u1", "u2", "wt", "u1t", "u2t"):
        setattr(sb.plate, f, scale * getattr(sb.plate, f))
    times, dist = separation_probe(system, sa, sb, forcing, t_end=cfg.t_end)
    path = os.path.join(out, "separation_distances.csv")
    with open(path, "w") as fh:
        fh.write("t,distance\n")
        for t, d in zip(times, dist):
            fh.write(f"{t:.17g},{d:.17g}\n")
    shrunk = dist[-1] <= dist[0] * 1.0 + 1e-300
    return {
        "probe": "separation", "initial_distance": float(dist[0]),
        "final_distance": float(dist[-1]), "series": path,
        "pass": bool(shrunk),
        "log": [f"distance {dist[0]:.4e} -> {dist[-1]:.4e}"],
    }
