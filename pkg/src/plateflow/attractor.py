"""Long-time experiments: stationary states, absorbing sets, trajectory
separation under small in-plane loads."""

import numpy as np
from dataclasses import dataclass, field
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import PicardDivergenceError
from .grid import PlateField, plate_norms
from .plate import vonkarman_forces, elastic_gradient, _broadcast_load
from .diagnostics import energy_total, decay_fit

SMALL_LOAD_DEFAULT = 0.01  # advisory threshold on ||G1||, ||G2||


@dataclass
class StationaryState:
    """Equilibrium: plate at rest, fluid from the steady problem with zero
    interface velocity (identically zero for gradient or vanishing volume
    forces).  residuals: max-norm equation residuals by block."""
    plate: PlateField
    fluid: object
    traction: tuple
    volume_multiplier: float
    residuals: dict = field(default_factory=dict)


@dataclass
class ProbeReport:
    entry_times: list
    sup_energy_after_entry: list
    radius: float
    energies: list          # one (times, E) series per trajectory
    fitted_rates: list
    details: dict = field(default_factory=dict)


def stationary_solve(system, G_fl=None, G_pl=None, mean_w=0.0, tol=1e-9,
                     max_iter=200):
    """Stationary point of the coupled system at the given loads.

    At equilibrium the plate velocities vanish, so the fluid solves the
    steady problem with zero interface data and the plate balances the
    elastic forces against G_pl minus the steady traction, with mean(w)
    pinned by the volume multiplier.  Picard-lags the von Karman terms;
    raises PicardDivergenceError when the load is too large for this
    regime.
    """
    pg = system.plate_grid
    ws = system.plate_ws
    a = pg.node_area
    m = pg.n_interior
    s = (pg.nx, pg.ny)
    n = pg.nx * pg.ny
    fluid = system.stokes.steady_solve(G_fl, None)
    t1, t2, t3 = system.stokes.reaction_traction(fluid, G_fl)
    g1, g2, g3 = _broadcast_load(pg, G_pl)
    R, R2 = ws.R_w, ws.R_in

    c = sparse.csr_matrix(np.full((m, 1), a))
    Aw = sparse.bmat([[ws.B_w_int, c], [c.T, None]], format="csc")
    lu_w = spla.splu(Aw)
    lu_u = spla.splu(ws.K_in_int.tocsc())

    u = PlateField.zeros(pg)
    lam = 0.0
    history = []
    for it in range(max_iter):
        if ws.nonlinear:
            f_w, (f_u1, f_u2) = vonkarman_forces(pg, u, ws.mu)
            lin = ws.K_in @ np.concatenate([u.u1.ravel(), u.u2.ravel()])
            f_u1_nl = f_u1 + lin[:n].reshape(s) / a
            f_u2_nl = f_u2 + lin[n:].reshape(s) / a
        else:
            f_w = f_u1_nl = f_u2_nl = np.zeros(s)
        rhs_w = np.concatenate([R @ (a * (g3 - t3 + f_w).ravel()),
                                [mean_w * pg.area]])
        sol = lu_w.solve(rhs_w)
        w_new = (R.T @ sol[:m]).reshape(s)
        lam = sol[m]
        rhs_u = R2 @ (a * np.concatenate([(g1 - t1 + f_u1_nl).ravel(),
                                          (g2 - t2 + f_u2_nl).ravel()]))
        sol_u = R2.T @ lu_u.solve(rhs_u)
        u1_new = sol_u[:n].reshape(s)
        u2_new = sol_u[n:].reshape(s)
        delta = max(np.max(np.abs(w_new - u.w)),
                    np.max(np.abs(u1_new - u.u1)),
                    np.max(np.abs(u2_new - u.u2)))
        u = PlateField(w_new, u1_new, u2_new,
                       np.zeros(s), np.zeros(s), np.zeros(s))
        history.append(delta)
        if delta <= tol:
            break
        if it >= 5 and delta > 100 * (history[0] + 1e-14):
            raise PicardDivergenceError(
                "static Picard iteration diverging: in-plane load too large "
                "for the small-load regime", residual=delta, history=history)
    else:
        raise PicardDivergenceError(
            f"static Picard did not reach {tol:.1e} in {max_iter} iterations",
            residual=history[-1], history=history)

    # lam multiplies the a-weighted ones column, so it is already the
    # uniform force density enforcing the volume constraint
    if ws.nonlinear:
        gw, gu1, gu2 = elastic_gradient(pg, u, ws.mu)
    else:
        gw = (ws.B_w @ u.w.ravel()).reshape(s) / a
        lin = ws.K_in @ np.concatenate([u.u1.ravel(), u.u2.ravel()])
        gu1 = lin[:n].reshape(s) / a
        gu2 = lin[n:].reshape(s) / a
    res_w = gw - (g3 - t3) + lam
    res_u1 = gu1 - (g1 - t1)
    res_u2 = gu2 - (g2 - t2)
    inter = pg.interior_mask
    residuals = {
        "plate_w": float(np.max(np.abs(res_w[inter]))),
        "plate_inplane": float(max(np.max(np.abs(res_u1[inter])),
                                   np.max(np.abs(res_u2[inter])))),
        "picard_update": history[-1],
        "iterations": len(history),
    }
    return StationaryState(plate=u, fluid=fluid, traction=(t1, t2, t3),
                           volume_multiplier=float(lam), residuals=residuals)


def state_distance(system, sa, sb):
    """Discrete phase-space distance: fluid L2 + plate H2 x H1 + velocity L2."""
    ws, pg = system.stokes, system.plate_grid
    dz = ws.slots_of(sa.fluid) - ws.slots_of(sb.fluid)
    d2 = float(np.dot(dz * ws.M_diag, dz))
    d2 += plate_norms(pg, sa.plate.w - sb.plate.w)[2] ** 2
    d2 += plate_norms(pg, sa.plate.u1 - sb.plate.u1)[1] ** 2
    d2 += plate_norms(pg, sa.plate.u2 - sb.plate.u2)[1] ** 2
    a = pg.node_area
    d2 += a * float(np.sum((sa.plate.wt - sb.plate.wt) ** 2
                           + (sa.plate.u1t - sb.plate.u1t) ** 2
                           + (sa.plate.u2t - sb.plate.u2t) ** 2))
    return np.sqrt(d2)


def absorbing_radius(system, forcing=None, C_probe=1.0):
    """Candidate absorbing level 2*E(stationary) + C_probe."""
    st = stationary_solve(system, (forcing or {}).get("G_fl"),
                          (forcing or {}).get("G_pl"))
    from .coupling import CoupledState
    E_st = energy_total(system, CoupledState(st.fluid, st.plate, 0.0)).E_total
    return 2.0 * E_st + C_probe, st


def dissipativity_probe(system, initial_states, forcing=None, t_end=2.0,
                        R0=None, C_probe=1.0):
    """Run the given initial states and record when each trajectory enters
    the energy ball {E <= R0} and whether it stays inside."""
    if len(initial_states) < 2:
        raise ValueError("need at least two initial states")
    if R0 is None:
        R0, _ = absorbing_radius(system, forcing, C_probe)
    G_fl = (forcing or {}).get("G_fl")
    G_pl = (forcing or {}).get("G_pl")
    n_steps = max(1, int(round(t_end / system.params.dt)))
    entry, sup_after, all_E, rates = [], [], [], []
    escaped = []
    for s0 in initial_states:
        state = s0.copy()
        times = [state.time]
        energies = [energy_total(system, state).E_total]
        t_in = 0.0 if energies[0] <= R0 else None
        sup_e = energies[0] if t_in is not None else -np.inf
        left = False
        for k in range(n_steps):
            state, _ = system.advance(state, G_fl, G_pl)
            E = energy_total(system, state).E_total
            times.append(state.time)
            energies.append(E)
            if t_in is None and E <= R0:
                t_in = state.time
                sup_e = E
            elif t_in is not None:
                sup_e = max(sup_e, E)
                if E > R0:
                    left = True
        entry.append(t_in)
        sup_after.append(sup_e if t_in is not None else None)
        escaped.append(left)
        all_E.append((np.array(times), np.array(energies)))
        try:
            rate, _ = decay_fit(times, energies)
        except ValueError:
            rate = np.nan
        rates.append(rate)
    return ProbeReport(entry_times=entry, sup_energy_after_entry=sup_after,
                       radius=R0, energies=all_E, fitted_rates=rates,
                       details={"escaped_after_entry": escaped,
                                "t_end": t_end})


def separation_probe(system, state_a, state_b, forcing=None, t_end=2.0):
    """Distance series between two trajectories in the discrete phase norm."""
    G_fl = (forcing or {}).get("G_fl")
    G_pl = (forcing or {}).get("G_pl")
    n_steps = max(1, int(round(t_end / system.params.dt)))
    sa, sb = state_a.copy(), state_b.copy()
    times = [sa.time]
    dist = [state_distance(system, sa, sb)]
    for k in range(n_steps):
        sa, _ = system.advance(sa, G_fl, G_pl)
        sb, _ = system.advance(sb, G_fl, G_pl)
        times.append(sa.time)
        dist.append(state_distance(system, sa, sb))
    return np.array(times), np.array(dist)
