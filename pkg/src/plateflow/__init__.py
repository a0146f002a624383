"""plateflow: a desk-scale laboratory for a viscous incompressible flow in a
box coupled to a clamped full von Karman plate on its top face.

The solvers keep every discrete operator the exact adjoint of its partner,
so the analytic identities of the model (energy balance, higher-order
energy equality, Lyapunov decay, the exponential-weight trajectory
identity, volume preservation) can be audited at the scheme's own order.
"""

from .errors import (CompatibilityError, SolverConvergenceError,
                     PicardDivergenceError, CouplingDivergenceError)
from .grid import (BoxGeometry, FluidGrid, PlateGrid, FluidField, PlateField,
                   build_grids, discrete_div, discrete_grad_p,
                   vector_laplacian, biharmonic, trace_to_plate,
                   lift_to_topface, fluid_norms, plate_norms, plate_mean,
                   GridError)
from .stokes import (StokesWorkspace, solve_stokes, lifting_N0,
                     fluid_substep, traction_Tf)
from .plate import (SymTensorField2D, stress_C, strain_P, strain_rate_P,
                    vonkarman_forces, plate_energy, coercivity_probe,
                    PlateWorkspace, plate_substep)
from .coupling import (ModelParams, CoupledState, StepReport, System,
                       Trajectory, bump_profile)
from .diagnostics import (EnergyReport, LyapunovReport, TimeDerivedState,
                          energy_total, energy_balance_audit, time_derived,
                          higher_energy, higher_energy_audit, lyapunov,
                          lyapunov_series, ball_identity_audit, decay_fit)
from .attractor import (StationaryState, ProbeReport, stationary_solve,
                        dissipativity_probe, separation_probe,
                        state_distance)
from .mms import ManufacturedStokes, convergence_order
from .snapshot import save_state, load_state

__version__ = "0.1.0"
