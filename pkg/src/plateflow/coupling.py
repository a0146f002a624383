"""Strongly coupled partitioned time stepper for the flow-plate system.

Each step is a fixed-point iteration between the implicit plate substep
(driven by the current interface force) and the implicit fluid substep
(driven by the plate velocities as interface data), accelerated by Aitken
dynamic relaxation on the interface velocity.  The exchanged force is the
variationally consistent interface reaction of the assembled fluid
equations, so the converged step satisfies the monolithic implicit-Euler
system and the discrete energy balance holds up to the scheme's own
dissipation.  The transversal velocity is confined to the zero-mean space
inside the plate solve (volume preservation).
"""

import numpy as np
from dataclasses import dataclass, field

from .errors import CompatibilityError, CouplingDivergenceError
from .grid import (BoxGeometry, FluidField, PlateField, build_grids,
                   plate_mean)
from .plate import PlateWorkspace, plate_substep
from .stokes import StokesWorkspace, lifting_N0


@dataclass
class ModelParams:
    """Physical and numerical parameters of one simulation setup."""
    geometry: BoxGeometry
    nu: float = 1.0
    mu: float = 0.3
    dt: float = 0.01
    tol_couple: float = 1e-8
    tol_linear: float = 1e-10
    picard_tol: float = 1e-9
    picard_max: int = 50
    aitken_init: float = 0.5
    aitken_min: float = 0.05
    aitken_max: float = 1.0
    max_subiter: int = 80
    eta: float = None            # Lyapunov cross-term weight; None -> 0.1 min(nu,1)
    omega: tuple = (0.1, 0.5)    # exponential weights for the Ball audit
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.tol_couple <= 0 or self.tol_linear <= 0:
            raise ValueError("tolerances and dt must be positive")
        if not 0 < self.mu < 0.5:
            raise ValueError("mu must lie in (0, 1/2)")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.eta is None:
            self.eta = 0.1 * min(self.nu, 1.0)


@dataclass
class CoupledState:
    """Snapshot of the coupled system.

    Invariants: the fluid trace on the plate face equals the plate
    velocities (exactly, by construction of `advance`), the fluid velocity
    vanishes on the walls, and mean(w) stays at its initial value.
    """
    fluid: FluidField
    plate: PlateField
    time: float = 0.0
    traction: tuple = None       # cached interface reaction (warm start)

    def copy(self):
        tr = tuple(t.copy() for t in self.traction) if self.traction else None
        return CoupledState(self.fluid.copy(), self.plate.copy(),
                            self.time, tr)


@dataclass
class StepReport:
    subiterations: int
    interface_residual: float
    solver_residuals: dict = field(default_factory=dict)


class System:
    """Grids plus reusable solver workspaces for one parameter set."""

    def __init__(self, params):
        self.params = params
        self.fluid_grid, self.plate_grid = build_grids(params.geometry)
        self.stokes = StokesWorkspace(self.fluid_grid, self.plate_grid,
                                      params.nu, tol=params.tol_linear)
        self.plate_ws = PlateWorkspace(self.plate_grid, params.mu,
                                       picard_tol=params.picard_tol,
                                       picard_max=params.picard_max)

    # -- state construction -------------------------------------------------

    def make_initial_state(self, v0_spec=None, u0_spec=None, u1_spec=None):
        """Assemble a compatible initial state.

        u0_spec/u1_spec: (u1, u2, w) arrays (ring values must vanish);
        v0_spec: optional extra fluid velocity, must be discretely
        divergence-free with zero interface trace.  The fluid field is
        v0 = v0_spec + N0(u1_spec), so the trace condition holds by
        construction.  mean(w1) must vanish (volume preservation).
        """
        pg = self.plate_grid
        plate = PlateField.zeros(pg)
        if u0_spec is not None:
            plate.u1, plate.u2, plate.w = _plate_triplet(pg, u0_spec)
        if u1_spec is not None:
            plate.u1t, plate.u2t, plate.wt = _plate_triplet(pg, u1_spec)
        for name, f in (("w", plate.w), ("u1", plate.u1), ("u2", plate.u2),
                        ("wt", plate.wt), ("u1t", plate.u1t),
                        ("u2t", plate.u2t)):
            if np.max(np.abs(f[pg.ring_mask])) > 0:
                raise CompatibilityError(
                    f"initial {name} violates the clamped boundary ring")
        if abs(plate_mean(pg, plate.wt)) > 1e-12 * max(
                1.0, float(np.max(np.abs(plate.wt)))):
            raise CompatibilityError("initial transversal velocity must have "
                                     "zero mean (volume preservation)")
        fluid = lifting_N0(self.stokes, plate.velocities())
        if v0_spec is not None:
            ring = self._validated_background(v0_spec)
            fluid.v1 = fluid.v1 + ring.v1
            fluid.v2 = fluid.v2 + ring.v2
            fluid.v3 = fluid.v3 + ring.v3
        state = CoupledState(fluid, plate, 0.0)
        state.traction = self.stokes.reaction_traction(fluid, None)
        return state

    def _validated_background(self, v0_spec):
        vf = v0_spec
        div = np.abs(self.stokes.ops.div_mat @ self.stokes.slots_of(vf)).max()
        if div > 1e-8:
            raise CompatibilityError(
                f"background velocity is not divergence-free (max {div:.2e})")
        if np.max(np.abs(vf.v3[:, :, -1])) > 0 or (
                vf.trace is not None and max(np.max(np.abs(vf.trace[0])),
                                             np.max(np.abs(vf.trace[1]))) > 0):
            raise CompatibilityError("background velocity must have zero "
                                     "interface trace")
        return vf

    # -- stepping ------------------------------------------------------------

    def advance(self, state, G_fl=None, G_pl=None, dt=None):
        """One coupled implicit-Euler step; returns (state, StepReport)."""
        p = self.params
        dt = p.dt if dt is None else dt
        tau = state.traction
        if tau is None:
            z = np.zeros((self.plate_grid.nx, self.plate_grid.ny))
            tau = (z, z.copy(), z.copy())
        xi = np.concatenate([c.ravel() for c in state.plate.velocities()])
        omega = p.aitken_init
        r_prev = None
        residual = np.inf
        history = []
        picard_info = {}
        n_sub = 0
        plate_new = None
        for k in range(p.max_subiter):
            n_sub = k + 1
            plate_new, picard_info = plate_substep(
                self.plate_ws, state.plate, tau, G_pl, dt,
                mean_constraint=True)
            xi_hat = np.concatenate([c.ravel()
                                     for c in plate_new.velocities()])
            r = xi_hat - xi
            residual = float(np.max(np.abs(r)))
            history.append(residual)
            if residual <= p.tol_couple:
                break
            if r_prev is not None:
                dr = r - r_prev
                den = float(dr @ dr)
                if den > 0:
                    omega = -omega * float(r_prev @ dr) / den
                omega = min(max(omega, p.aitken_min), p.aitken_max)
            xi = xi + omega * r
            r_prev = r
            fluid_try = self.stokes.unsteady_solve(
                dt, self.stokes.slots_of(state.fluid), G_fl,
                _unflatten(self.plate_grid, xi))
            tau = self.stokes.reaction_traction(fluid_try, G_fl,
                                                vf_old=state.fluid, dt=dt)
        else:
            raise CouplingDivergenceError(
                f"interface sub-iteration stalled at residual "
                f"{residual:.3e} after {p.max_subiter} iterations",
                residual=residual, history=history)

        # final fluid solve with the converged plate velocities, so the trace
        # invariant holds exactly
        fluid_new = self.stokes.unsteady_solve(
            dt, self.stokes.slots_of(state.fluid), G_fl,
            plate_new.velocities())
        tau_new = self.stokes.reaction_traction(fluid_new, G_fl,
                                                vf_old=state.fluid, dt=dt)
        div = float(np.max(np.abs(
            self.stokes.ops.div_mat @ self.stokes.slots_of(fluid_new))))
        new = CoupledState(fluid_new, plate_new, state.time + dt, tau_new)
        report = StepReport(
            subiterations=n_sub, interface_residual=residual,
            solver_residuals={
                "fluid_div": div,
                "picard_iterations": picard_info.get("picard_iterations"),
                "picard_residual": picard_info.get("picard_residual"),
                "volume_multiplier": picard_info.get("lambda"),
                "aitken_omega": omega,
            })
        return new, report

    def run(self, state0, forcing=None, t_end=None, observers=(),
            snapshot_stride=None):
        """Advance with fixed dt until t_end; returns a Trajectory.

        forcing: None or dict with keys "G_fl" (callable/triple) and "G_pl".
        Observers are called as obs(step_index, state, report) after every
        step.  Snapshots (deep copies) are stored every `snapshot_stride`
        steps, including the initial state.
        """
        p = self.params
        if t_end is None or t_end <= 0:
            raise ValueError("t_end must be positive")
        stride = p.snapshot_stride if snapshot_stride is None else snapshot_stride
        G_fl = (forcing or {}).get("G_fl")
        G_pl = (forcing or {}).get("G_pl")
        n_steps = max(1, int(round(t_end / p.dt)))
        traj = Trajectory(params=p, dt=p.dt, stride=stride)
        traj.add_snapshot(state0)
        state = state0
        for k in range(1, n_steps + 1):
            try:
                state, report = self.advance(state, G_fl, G_pl)
            except Exception:
                traj.aborted = True
                traj.final_state = state
                raise
            traj.times.append(state.time)
            traj.reports.append(report)
            for obs in observers:
                obs(k, state, report)
            if k % stride == 0:
                traj.add_snapshot(state)
        if (n_steps % stride) != 0:
            traj.add_snapshot(state)
        traj.final_state = state
        return traj


@dataclass
class Trajectory:
    """Uniform-dt run record: per-step reports plus snapshot states."""
    params: ModelParams
    dt: float
    stride: int
    times: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    snap_times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final_state: CoupledState = None
    aborted: bool = False

    def add_snapshot(self, state):
        self.snap_times.append(state.time)
        self.snapshots.append(state.copy())

    @property
    def snap_dt(self):
        return self.dt * self.stride


def _plate_triplet(pg, spec):
    out = []
    for c in spec:
        arr = np.asarray(c, dtype=float)
        if arr.shape != (pg.nx, pg.ny):
            raise ValueError("plate component has wrong shape")
        out.append(arr.copy())
    return tuple(out)


def _unflatten(pg, xi):
    n = pg.nx * pg.ny
    s = (pg.nx, pg.ny)
    return (xi[:n].reshape(s), xi[n:2 * n].reshape(s), xi[2 * n:].reshape(s))


# -- preset initial profiles -------------------------------------------------

def bump_profile(plate, amplitude=1.0):
    """Clamped, zero-mean transversal bump used by the decay experiments.

    A * [sin^2(pi x/lx) sin^2(pi y/ly) - sin^2(2pi x/lx) sin^2(2pi y/ly)]:
    both parts are clamped-compatible and their cell-centered means cancel
    exactly; any residual discrete mean is removed on the interior nodes.
    """
    X, Y = plate.meshgrid()
    lx, ly = plate.geometry.lx, plate.geometry.ly
    b1 = np.sin(np.pi * X / lx) ** 2 * np.sin(np.pi * Y / ly) ** 2
    b2 = np.sin(2 * np.pi * X / lx) ** 2 * np.sin(2 * np.pi * Y / ly) ** 2
    w = amplitude * (b1 - b2)
    w[plate.ring_mask] = 0.0
    w[plate.interior_mask] -= w.sum() / plate.interior_mask.sum()
    return w
