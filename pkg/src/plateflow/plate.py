"""Full von Karman plate: stress law, strains, nonlinear forces, substep.

Strains use node-centered differences (odd reflection ghosts for the
in-plane components, mirror ghosts for the transversal displacement, both
encoded in the assembled gradient matrices).  Elastic forces are the exact
discrete gradients of the elastic energy built from those same matrices, so
the directional-derivative identity holds to roundoff; the substep conserves
the discrete energy budget up to implicit-Euler dissipation.
"""

import numpy as np
from dataclasses import dataclass
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import PicardDivergenceError
from .grid import PlateField


@dataclass
class SymTensorField2D:
    """Symmetric 2x2 tensor field at plate nodes (three stored components)."""
    e11: np.ndarray
    e12: np.ndarray
    e22: np.ndarray

    def trace(self):
        return self.e11 + self.e22


def _check_mu(mu):
    if not 0.0 < mu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (0, 1/2), got {mu}")


def stress_C(eps, mu):
    """Plane-stress law C(eps) = 2(1-mu)^-1 [mu tr(eps) I + (1-mu) eps]."""
    _check_mu(mu)
    k = 2.0 / (1.0 - mu)
    tr = eps.trace()
    return SymTensorField2D(k * (mu * tr + (1 - mu) * eps.e11),
                            k * (1 - mu) * eps.e12,
                            k * (mu * tr + (1 - mu) * eps.e22))


def tensor_dot(a, b):
    """Pointwise full contraction a:b of symmetric tensors (e12 counts twice)."""
    return a.e11 * b.e11 + a.e22 * b.e22 + 2.0 * a.e12 * b.e12


def strain_P(plate, u):
    """Von Karman strain P(u) = eps0(ubar) + 0.5 grad w (x) grad w."""
    ops = plate.ops
    u1x, u1y = ops.grad_u(u.u1)
    u2x, u2y = ops.grad_u(u.u2)
    wx, wy = ops.grad_w(u.w)
    return SymTensorField2D(u1x + 0.5 * wx * wx,
                            0.5 * (u1y + u2x) + 0.5 * wx * wy,
                            u2y + 0.5 * wy * wy)


def strain_rate_P(plate, u, ut):
    """P(u, ut) = d/dt P(u): eps0 of the in-plane velocity plus the
    symmetrized grad w (x) grad wt term.  `ut` may be a PlateField (its
    velocity slots are used) or a (u1t, u2t, wt) triple."""
    ops = plate.ops
    if isinstance(ut, PlateField):
        v1, v2, wt = ut.u1t, ut.u2t, ut.wt
    else:
        v1, v2, wt = ut
    v1x, v1y = ops.grad_u(v1)
    v2x, v2y = ops.grad_u(v2)
    wx, wy = ops.grad_w(u.w)
    wtx, wty = ops.grad_w(wt)
    return SymTensorField2D(v1x + wx * wtx,
                            0.5 * (v1y + v2x) + 0.5 * (wx * wty + wtx * wy),
                            v2y + wy * wty)


def membrane_energy(plate, u, mu):
    P = strain_P(plate, u)
    N = stress_C(P, mu)
    return 0.5 * plate.node_area * float(np.sum(tensor_dot(N, P)))


def bending_energy(plate, w):
    lap = plate.ops.lap_c @ np.asarray(w).ravel()
    return 0.5 * plate.node_area * float(lap @ lap)


def plate_energy(plate, u, mu):
    """0.5 [ ||Lap w||^2 + (C(P(u)), P(u)) ], the elastic energy."""
    return bending_energy(plate, u.w) + membrane_energy(plate, u, mu)


def vonkarman_forces(plate, u, mu):
    """(div{C(P(u)) grad w}, div C(P(u))): the nonlinear force densities.

    Built as exact discrete gradients of the membrane energy, which lands in
    conservative (flux) form through the transposed gradient matrices.
    """
    _check_mu(mu)
    ops = plate.ops
    s = (plate.nx, plate.ny)
    P = strain_P(plate, u)
    N = stress_C(P, mu)
    wx, wy = ops.grad_w(u.w)
    q1 = (N.e11 * wx + N.e12 * wy).ravel()
    q2 = (N.e12 * wx + N.e22 * wy).ravel()
    f_w = -(ops.gw_x.T @ q1 + ops.gw_y.T @ q2)
    f_u1 = -(ops.gu_x.T @ N.e11.ravel() + ops.gu_y.T @ N.e12.ravel())
    f_u2 = -(ops.gu_x.T @ N.e12.ravel() + ops.gu_y.T @ N.e22.ravel())
    return (f_w.reshape(s),
            (f_u1.reshape(s), f_u2.reshape(s)))


def elastic_gradient(plate, u, mu):
    """Gradient densities of plate_energy wrt (w, u1, u2); the plate momentum
    equations read  (velocity)_t + gradient = load."""
    ops = plate.ops
    s = (plate.nx, plate.ny)
    f_w, (f_u1, f_u2) = vonkarman_forces(plate, u, mu)
    bend = (ops.bending_form @ u.w.ravel()).reshape(s) / plate.node_area
    return bend - f_w, -f_u1, -f_u2


def coercivity_probe(plate, u, G_pl, mu):
    """All terms of the lower-bound inequality for the elastic energy, so
    callers can monitor the empirical constants."""
    from .grid import plate_norms
    bend = 2.0 * bending_energy(plate, u.w)
    memb = 2.0 * membrane_energy(plate, u, mu)
    a = plate.node_area
    if G_pl is None:
        load = 0.0
    else:
        g1, g2, g3 = _broadcast_load(plate, G_pl)
        load = a * float(np.sum(g1 * u.u1 + g2 * u.u2 + g3 * u.w))
    n1 = plate_norms(plate, u.u1)[1]
    n2 = plate_norms(plate, u.u2)[1]
    nw = plate_norms(plate, u.w)[2]
    w_norm_sq = n1 ** 2 + n2 ** 2 + nw ** 2
    quad = bend + memb
    return {"bending_sq": bend, "membrane_sq": memb, "load_term": load,
            "lhs": quad + load, "u_W_norm_sq": w_norm_sq,
            "ratio": w_norm_sq / quad if quad > 0 else np.inf}


# ---------------------------------------------------------------------------
# implicit substep
# ---------------------------------------------------------------------------

class PlateWorkspace:
    """Assembled stiffness blocks and cached factorizations for one grid/mu.

    nonlinear=False drops the von Karman coupling terms (pure linear plate),
    used by the linear-regime oracles.
    """

    def __init__(self, plate, mu, picard_tol=1e-9, picard_max=50,
                 nonlinear=True):
        _check_mu(mu)
        self.plate = plate
        self.mu = float(mu)
        self.picard_tol = float(picard_tol)
        self.picard_max = int(picard_max)
        self.nonlinear = bool(nonlinear)
        ops = plate.ops
        n = plate.nx * plate.ny
        a = plate.node_area
        k = 2.0 / (1.0 - mu)
        # in-plane linear stiffness over stacked [u1; u2]
        Bx, By = ops.gu_x, ops.gu_y
        Z = sparse.csr_matrix(Bx.shape)
        Be11 = sparse.hstack([Bx, Z]).tocsr()
        Be22 = sparse.hstack([Z, By]).tocsr()
        Be12 = sparse.hstack([0.5 * By, 0.5 * Bx]).tocsr()
        W = sparse.diags(np.full(n, a))
        self.K_in = (k * (Be11.T @ W @ Be11 + Be22.T @ W @ Be22
                          + mu * (Be11.T @ W @ Be22 + Be22.T @ W @ Be11)
                          + 2 * (1 - mu) * (Be12.T @ W @ Be12))).tocsr()
        self.B_w = ops.bending_form
        self._lu = {}

        R = plate.ops.restrict
        self.R_w = R
        self.R_in = sparse.block_diag([R, R]).tocsr()
        self.B_w_int = (R @ self.B_w @ R.T).tocsr()
        self.K_in_int = (self.R_in @ self.K_in @ self.R_in.T).tocsr()

    def _factor(self, dt, mean_constraint):
        """Implicit blocks on the interior DOFs (ring stays clamped at 0)."""
        key = (float(dt), bool(mean_constraint))
        if key in self._lu:
            return self._lu[key]
        plate = self.plate
        m = plate.n_interior
        a = plate.node_area
        Aw = (a / dt) * sparse.eye(m) + dt * self.B_w_int
        if mean_constraint:
            c = sparse.csr_matrix(np.full((m, 1), a))
            Aw = sparse.bmat([[Aw, c], [c.T, None]], format="csc")
        lu_w = spla.splu(Aw.tocsc())
        Au = (a / dt) * sparse.eye(2 * m) + dt * self.K_in_int
        lu_u = spla.splu(Au.tocsc())
        self._lu[key] = (lu_w, lu_u)
        return self._lu[key]


def _broadcast_load(plate, G):
    s = (plate.nx, plate.ny)
    if G is None:
        z = np.zeros(s)
        return z, z.copy(), z.copy()
    out = []
    for c in G:
        if callable(c):
            X, Y = plate.meshgrid()
            out.append(np.asarray(c(X, Y), dtype=float) * np.ones(s))
        else:
            out.append(np.broadcast_to(np.asarray(c, dtype=float), s).copy())
    return tuple(out)


def plate_substep(ws, u_old, traction, G_pl, dt, mean_constraint=False):
    """One implicit-Euler step of the plate driven by G_pl - traction.

    The linear stiffness (bending, linearized in-plane) is implicit; the von
    Karman coupling terms are lagged and iterated to the Picard tolerance.
    With mean_constraint=True the transversal velocity is confined to the
    zero-mean space through a multiplier row (the volume-preservation
    projection).  Returns (new PlateField, info dict).
    """
    plate = ws.plate
    a = plate.node_area
    n = plate.nx * plate.ny
    m = plate.n_interior
    s = (plate.nx, plate.ny)
    g1, g2, g3 = _broadcast_load(plate, G_pl)
    if traction is None:
        t1 = t2 = t3 = np.zeros(s)
    else:
        t1, t2, t3 = (np.asarray(c, dtype=float) for c in traction)
    lu_w, lu_u = ws._factor(dt, mean_constraint)
    R, R2 = ws.R_w, ws.R_in

    lag = u_old.copy()
    wt = u_old.wt.copy()
    u1t = u_old.u1t.copy()
    u2t = u_old.u2t.copy()
    lam = 0.0
    history = []
    for it in range(ws.picard_max):
        if ws.nonlinear:
            f_w, (f_u1, f_u2) = vonkarman_forces(plate, lag, ws.mu)
            # in-plane split: the eps0 part of div C(P) is inside K_in
            # (implicit); subtract it from the lagged total to keep only the
            # f(grad w) part.
            lin = ws.K_in @ np.concatenate([lag.u1.ravel(), lag.u2.ravel()])
            f_u1_nl = f_u1 + lin[:n].reshape(s) / a
            f_u2_nl = f_u2 + lin[n:].reshape(s) / a
        else:
            f_w = f_u1_nl = f_u2_nl = np.zeros(s)

        rhs_w = R @ ((a / dt) * u_old.wt.ravel()
                     - ws.B_w @ u_old.w.ravel()
                     + a * (g3 - t3 + f_w).ravel())
        if mean_constraint:
            sol = lu_w.solve(np.concatenate([rhs_w, [0.0]]))
            wt_new = (R.T @ sol[:m]).reshape(s)
            lam = sol[m]
        else:
            wt_new = (R.T @ lu_w.solve(rhs_w)).reshape(s)

        rhs_u = R2 @ ((a / dt) * np.concatenate([u_old.u1t.ravel(),
                                                 u_old.u2t.ravel()])
                      - ws.K_in @ np.concatenate([u_old.u1.ravel(),
                                                  u_old.u2.ravel()])
                      + a * np.concatenate([(g1 - t1 + f_u1_nl).ravel(),
                                            (g2 - t2 + f_u2_nl).ravel()]))
        sol_u = R2.T @ lu_u.solve(rhs_u)
        u1t_new = sol_u[:n].reshape(s)
        u2t_new = sol_u[n:].reshape(s)

        delta = max(np.max(np.abs(wt_new - wt)),
                    np.max(np.abs(u1t_new - u1t)),
                    np.max(np.abs(u2t_new - u2t)))
        wt, u1t, u2t = wt_new, u1t_new, u2t_new
        lag = PlateField(u_old.w + dt * wt, u_old.u1 + dt * u1t,
                         u_old.u2 + dt * u2t, wt, u1t, u2t)
        history.append(delta)
        if delta <= ws.picard_tol:
            break
        if it >= 5 and delta > 100 * (history[0] + 1e-14):
            raise PicardDivergenceError(
                "plate Picard iteration diverging (load too large for the "
                "lagged-coefficient scheme)", residual=delta, history=history)
    else:
        raise PicardDivergenceError(
            f"plate Picard iteration did not reach {ws.picard_tol:.1e} "
            f"in {ws.picard_max} iterations", residual=history[-1],
            history=history)
    info = {"picard_iterations": len(history), "picard_residual": history[-1],
            "lambda": lam}
    return lag, info
