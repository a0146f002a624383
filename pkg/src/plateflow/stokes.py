"""Stokes boundary-value solve, lifting operator, traction, fluid substep.

The discrete momentum operator is the symmetric-stress form assembled in
grid.FluidOperators, so the viscous energy of every solve is exactly the
symmetric-gradient dissipation form the diagnostics integrate.  Saddle
systems are solved by a sparse direct factorization at desk scale and by
preconditioned MINRES (pyamg V-cycle on the viscous block) on grids where
3D LU fill is prohibitive.
"""

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import CompatibilityError, SolverConvergenceError
from .grid import (FluidField, _u_to_xedge, _u_to_yedge,
                   _xedge_to_u_adjoint, _yedge_to_u_adjoint)

_DIRECT_LIMIT = 60_000  # unknown count above which the iterative path is used


def _as_plate_triplet(plate, psi):
    if psi is None:
        z = np.zeros((plate.nx, plate.ny))
        return z, z.copy(), z.copy()
    p1, p2, p3 = (np.asarray(c, dtype=float) for c in psi)
    for c in (p1, p2, p3):
        if c.shape != (plate.nx, plate.ny):
            raise ValueError("plate boundary field has wrong shape")
    return p1, p2, p3


class StokesWorkspace:
    """Factorized/preconditioned operators for one grid and viscosity.

    Reusable across solves; rebuild when the grid or nu changes.  One
    workspace serves one in-flight solve at a time (factorizations are
    shared read-only, so distinct workspaces may run concurrently).
    """

    def __init__(self, fluid_grid, plate_grid, nu, tol=1e-10, method="auto"):
        if nu <= 0:
            raise ValueError("viscosity must be positive")
        self.grid = fluid_grid
        self.plate = plate_grid
        self.nu = float(nu)
        self.tol = float(tol)
        ops = fluid_grid.ops
        self.ops = ops
        self.method = method
        self.n_cells = int(np.prod(fluid_grid.shape_p))
        self.cell_vol = fluid_grid.cell_volume

        ii = fluid_grid.idx_int
        bb = fluid_grid.idx_bc
        self.idx_int, self.idx_bc = ii, bb
        K = (nu * ops.visc_form).tocsr()
        self.K_ii = K[ii][:, ii].tocsc()
        self.K_ib = K[ii][:, bb].tocsr()
        self.K_full = K
        Bw = (-ops.div_w).tocsr()           # momentum term is +Bw^T p
        self.B_i = Bw[:, ii].tocsc()
        self.B_b = Bw[:, bb].tocsr()
        self.M_diag = fluid_grid.slot_volume
        self.M_ii = self.M_diag[ii]
        self.gauge = np.full(self.n_cells, self.cell_vol)

        self._steady_lu = None
        self._unsteady_lu = {}
        self._amg = None
        self._use_direct = (ii.size + self.n_cells) <= _DIRECT_LIMIT \
            if method == "auto" else (method == "direct")

    # -- assembly helpers ---------------------------------------------------

    def _bordered(self, A):
        """Full saddle matrix with the zero-mean gauge border (iterative path;
        the dense border would ruin the LU fill ordering)."""
        n = A.shape[0]
        m = self.n_cells
        e = sparse.csr_matrix(self.gauge.reshape(m, 1))
        Z1 = sparse.csr_matrix((n, 1))
        M = sparse.bmat([[A, self.B_i.T, Z1],
                         [self.B_i, None, e],
                         [Z1.T, e.T, None]], format="csc")
        return M

    def _pinned(self, A):
        """Saddle matrix with the last pressure cell dropped.  The constraint
        rows are redundant for compatible data (interior columns of the
        divergence sum to zero), so the reduced system is nonsingular and
        stays sparse; the mean gauge is restored after the solve."""
        Bred = self.B_i[:-1, :]
        M = sparse.bmat([[A, Bred.T], [Bred, None]], format="csc")
        return M

    def _steady(self):
        if self._steady_lu is None:
            self._steady_lu = spla.splu(self._pinned(self.K_ii))
        return self._steady_lu

    def _unsteady(self, dt):
        key = float(dt)
        if key not in self._unsteady_lu:
            A = self.K_ii + sparse.diags(self.M_ii / dt)
            self._unsteady_lu[key] = spla.splu(self._pinned(A.tocsc()))
        return self._unsteady_lu[key]

    def boundary_slots(self, psi):
        """Slot values of the Dirichlet data for interface velocity psi."""
        g = self.grid
        p1, p2, p3 = _as_plate_triplet(self.plate, psi)
        z = np.zeros(g.n_slots)
        z[g.id_v3[:, :, -1].ravel()] = p3.ravel()
        z[g.id_v1o.ravel()] = _u_to_xedge(p1).ravel()
        z[g.id_v2o.ravel()] = _u_to_yedge(p2).ravel()
        return z[self.idx_bc], (p1, p2, p3)

    def forcing_slots(self, G_fl):
        """Quadrature of a volume force over the velocity slots."""
        g = self.grid
        f = np.zeros(g.n_slots)
        if G_fl is None:
            return f
        if callable(G_fl):
            for comp, ids in (("v1", g.id_v1), ("v2", g.id_v2), ("v3", g.id_v3)):
                x, y, z = g.face_coords(comp)
                X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
                vals = G_fl(X, Y, Z)[{"v1": 0, "v2": 1, "v3": 2}[comp]]
                f[ids.ravel()] = np.broadcast_to(vals, ids.shape).ravel()
        else:
            c1, c2, c3 = G_fl
            for val, ids in ((c1, g.id_v1), (c2, g.id_v2), (c3, g.id_v3)):
                f[ids.ravel()] = np.broadcast_to(
                    np.asarray(val, dtype=float), ids.shape).ravel()
        return f * g.slot_volume

    def check_compat(self, p3, tol=1e-10):
        m = float(np.sum(p3) * self.plate.node_area)
        if abs(m) > tol * max(1.0, float(np.max(np.abs(p3)))) * self.plate.area:
            raise CompatibilityError(
                f"interface normal velocity has nonzero mean {m:.3e}")

    # -- solves ---------------------------------------------------------------

    def _solve_saddle(self, A, rhs_m, rhs_d, lu=None):
        n, m = rhs_m.size, rhs_d.size
        if self._use_direct:
            if lu is None:
                lu = spla.splu(self._pinned(A))
            sol = lu.solve(np.concatenate([rhs_m, rhs_d[:-1]]))
            v = sol[:n]
            p = np.concatenate([sol[n:], [0.0]])
        else:
            rhs = np.concatenate([rhs_m, rhs_d, [0.0]])
            sol = self._minres_saddle(A, rhs)
            v = sol[:n]
            p = sol[n:n + m]
        p = p - np.dot(p, self.gauge) / self.gauge.sum()
        return v, p

    def _minres_saddle(self, A, rhs):
        if self._amg is None:
            import pyamg
            g = self.grid
            nn = np.zeros((self.idx_int.size, 3))
            slot_comp = np.zeros(g.n_slots, dtype=int)
            slot_comp[g.id_v2.ravel()] = 1
            slot_comp[g.id_v2o.ravel()] = 1
            slot_comp[g.id_v3.ravel()] = 2
            comp_i = slot_comp[self.idx_int]
            for c in range(3):
                nn[comp_i == c, c] = 1.0
            self._amg = pyamg.smoothed_aggregation_solver(
                self.K_ii.tocsr(), B=nn, max_coarse=300)
        M_A = self._amg.aspreconditioner(cycle="V")
        n = self.idx_int.size
        m = self.n_cells
        Msys = self._bordered(A)
        pm = self.nu / self.gauge  # steady pressure Schur ~ mass/nu

        def prec(r):
            out = np.empty_like(r)
            out[:n] = M_A @ r[:n]
            out[n:n + m] = pm * r[n:n + m]
            out[n + m] = r[n + m]
            return out

        P = spla.LinearOperator(Msys.shape, matvec=prec)
        scale = float(np.linalg.norm(rhs)) or 1.0
        sol, info = spla.minres(Msys, rhs, M=P, rtol=1e-11, maxiter=2000)
        res = float(np.linalg.norm(Msys @ sol - rhs)) / scale
        if info != 0 and res > 1e-8:
            raise SolverConvergenceError(
                f"MINRES did not converge (rel residual {res:.2e})",
                residual=res)
        sol = self._divergence_cleanup(sol, rhs)
        return sol

    def _divergence_cleanup(self, sol, rhs):
        """Project the iterative velocity back onto the discrete divergence
        constraint (direct solves do not need this)."""
        n = self.idx_int.size
        m = self.n_cells
        r_div = rhs[n:n + m] - (self.B_i @ sol[:n] + self.gauge * sol[-1])
        if float(np.max(np.abs(r_div))) / self.cell_vol < 1e-11:
            return sol
        if not hasattr(self, "_cleanup_solver"):
            import pyamg
            Minv = sparse.diags(1.0 / np.maximum(self.M_ii, 1e-300))
            L = (self.B_i @ Minv @ self.B_i.T).tocsr()
            self._cleanup_solver = pyamg.smoothed_aggregation_solver(
                L, max_coarse=300)
            self._cleanup_Minv = Minv
        b = r_div - r_div.mean()
        phi = self._cleanup_solver.solve(b, tol=1e-12, maxiter=200)
        sol = sol.copy()
        sol[:n] += self._cleanup_Minv @ (self.B_i.T @ phi)
        return sol

    def steady_solve(self, G_fl, psi, check_compat=True):
        z_bc, triplet = self.boundary_slots(psi)
        if check_compat:
            self.check_compat(triplet[2])
        f = self.forcing_slots(G_fl)
        rhs_m = f[self.idx_int] - self.K_ib @ z_bc
        rhs_d = -(self.B_b @ z_bc)
        if self._use_direct:
            v_i, p = self._solve_saddle(self.K_ii, rhs_m, rhs_d,
                                        lu=self._steady())
        else:
            v_i, p = self._solve_saddle(self.K_ii, rhs_m, rhs_d)
        return self._pack(v_i, z_bc, p, triplet)

    def unsteady_solve(self, dt, z_old, G_fl, psi, check_compat=True):
        z_bc, triplet = self.boundary_slots(psi)
        if check_compat:
            self.check_compat(triplet[2])
        f = self.forcing_slots(G_fl)
        A = self.K_ii + sparse.diags(self.M_ii / dt)
        rhs_m = (f[self.idx_int] + self.M_ii * z_old[self.idx_int] / dt
                 - self.K_ib @ z_bc)
        rhs_d = -(self.B_b @ z_bc)
        if self._use_direct:
            v_i, p = self._solve_saddle(A.tocsc(), rhs_m, rhs_d,
                                        lu=self._unsteady(dt))
        else:
            v_i, p = self._solve_saddle(A.tocsc(), rhs_m, rhs_d)
        return self._pack(v_i, z_bc, p, triplet)

    def _pack(self, v_i, z_bc, p, triplet):
        g = self.grid
        z = np.zeros(g.n_slots)
        z[self.idx_int] = v_i
        z[self.idx_bc] = z_bc
        v1, v2, v3, _, _ = g.fields_from_slots(z)
        pf = p.reshape(g.shape_p)
        pf = pf - np.sum(pf) / pf.size  # uniform cells: weighted mean == mean
        return FluidField(v1.copy(), v2.copy(), v3.copy(), pf,
                          tuple(t.copy() for t in triplet))

    def slots_of(self, vf):
        """Full slot vector of a FluidField (trace data included)."""
        return self.grid.slots_from_fields(
            vf.v1, vf.v2, vf.v3,
            None if vf.trace is None else _u_to_xedge(vf.trace[0]),
            None if vf.trace is None else _u_to_yedge(vf.trace[1]))

    def residual_slots(self, vf_new, p, G_fl, vf_old=None, dt=None):
        """Assembled fluid-equation residual over all slots.

        Zero (to solver tolerance) at interior slots; at interface slots it
        is minus the constraint force, i.e. the consistent traction times the
        node area.
        """
        z = self.slots_of(vf_new)
        r = self.K_full @ z
        r += (-self.ops.div_w).T @ p.ravel()
        r -= self.forcing_slots(G_fl)
        if dt is not None:
            z_old = self.slots_of(vf_old)
            r += self.M_diag * (z - z_old) / dt
        return r

    def reaction_traction(self, vf_new, G_fl, vf_old=None, dt=None):
        """Consistent interface force in the traction sign convention of the
        plate equations (the plate is forced by G_pl - traction)."""
        r = self.residual_slots(vf_new, vf_new.p, G_fl, vf_old, dt)
        g = self.grid
        a = self.plate.node_area
        t3 = r[g.id_v3[:, :, -1]] / a
        t1 = _xedge_to_u_adjoint(r[g.id_v1o]) / a
        t2 = _yedge_to_u_adjoint(r[g.id_v2o]) / a
        return t1, t2, t3


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def solve_stokes(workspace, g, psi):
    """Steady solve: -nu*2 div eps(v) + grad p = g, div v = 0, v=0 on the
    walls, v=psi on the plate face.  psi's normal part must have zero mean."""
    vf = workspace.steady_solve(g, psi)
    _check_clean(workspace, vf)
    return vf


def lifting_N0(workspace, psi):
    """Divergence-free extension of an interface velocity (zero force)."""
    return solve_stokes(workspace, None, psi)


def fluid_substep(workspace, v_old, boundary_velocity, G_fl, dt):
    """One implicit-Euler step of the fluid with prescribed interface
    velocity.  Returns the end-of-step field (trace stored)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z_old = workspace.slots_of(v_old)
    vf = workspace.unsteady_solve(dt, z_old, G_fl, boundary_velocity)
    _check_clean(workspace, vf)
    return vf


def _check_clean(ws, vf):
    div = ws.ops.div_mat @ ws.slots_of(vf)
    dmax = float(np.max(np.abs(div)))
    if dmax > 1e-9:
        raise SolverConvergenceError(
            f"divergence residual {dmax:.2e} above tolerance", residual=dmax)


def traction_Tf(grid, vf, nu):
    """Fluid stress traction on the plate sampled by one-sided second-order
    differences at z=0:
        (nu(v1_z + v3_x), nu(v2_z + v3_y), 2 nu v3_z - p).
    """
    hx, hy, hz = grid.hx, grid.hy, grid.hz
    v1, v2, v3, p = vf.v1, vf.v2, vf.v3, vf.p
    tr = vf.trace
    nxp, nyp = grid.geometry.nx, grid.geometry.ny
    t1 = np.zeros((nxp, nyp))
    t2 = np.zeros((nxp, nyp))

    # d3 v3 at the top faces: uniform one-sided 3-point
    d3v3 = (3 * v3[:, :, -1] - 4 * v3[:, :, -2] + v3[:, :, -3]) / (2 * hz)
    p_top = (3 * p[:, :, -1] - p[:, :, -2]) / 2
    t3 = 2 * nu * d3v3 - p_top

    # d3 v1 at plate nodes: average the two x-faces, nodes at z = -hz/2,
    # -3hz/2 plus the stored trace at z = 0 (nonuniform one-sided stencil,
    # exact for quadratics).
    a, b = hz / 2, 3 * hz / 2
    c0 = (a + b) / (a * b)
    c1 = -b / (a * (b - a))
    c2 = a / (b * (b - a))
    f1 = 0.5 * (v1[1:, :, -1] + v1[:-1, :, -1])
    f2 = 0.5 * (v1[1:, :, -2] + v1[:-1, :, -2])
    tr1 = tr[0] if tr is not None else np.zeros_like(f1)
    d3v1 = c0 * tr1 + c1 * f1 + c2 * f2
    g1 = 0.5 * (v2[:, 1:, -1] + v2[:, :-1, -1])
    g2 = 0.5 * (v2[:, 1:, -2] + v2[:, :-1, -2])
    tr2 = tr[1] if tr is not None else np.zeros_like(g1)
    d3v2 = c0 * tr2 + c1 * g1 + c2 * g2

    # tangential derivatives of v3 on the top face (centered; one-sided at
    # the ring)
    w = v3[:, :, -1]
    d1v3 = np.zeros_like(w)
    d1v3[1:-1, :] = (w[2:, :] - w[:-2, :]) / (2 * hx)
    d1v3[0, :] = (-3 * w[0, :] + 4 * w[1, :] - w[2, :]) / (2 * hx)
    d1v3[-1, :] = (3 * w[-1, :] - 4 * w[-2, :] + w[-3, :]) / (2 * hx)
    d2v3 = np.zeros_like(w)
    d2v3[:, 1:-1] = (w[:, 2:] - w[:, :-2]) / (2 * hy)
    d2v3[:, 0] = (-3 * w[:, 0] + 4 * w[:, 1] - w[:, 2]) / (2 * hy)
    d2v3[:, -1] = (3 * w[:, -1] - 4 * w[:, -2] + w[:, -3]) / (2 * hy)

    t1 = nu * (d3v1 + d1v3)
    t2 = nu * (d3v2 + d2v3)
    return t1, t2, t3
