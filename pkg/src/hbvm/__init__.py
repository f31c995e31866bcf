"""Energy-conserving collocation methods for Hamiltonian boundary value
problems, with periodic-orbit and optimal-transfer drivers for the
circular restricted three-body problem."""

from .bvp_newton import (MeshSolution, NewtonReport, NonSeparated,
                         PeriodicAnchored, PeriodicEnergy, Separated,
                         newton_solve)
from .errors import (ConfigError, ConvergenceError, HbvmError, ModelDomainError,
                     RootFindingError, SingularSystemError)
from .hamiltonian_models import (CONSTANTS, CrtbpParams, HamiltonianModel,
                                 PhysicalConstants, collinear_libration_points,
                                 control_from_costate, crtbp_model,
                                 days_to_nondim, extended_hill_model,
                                 extended_model, hill_model, km_to_nondim,
                                 linearize, nondim_to_days)
from .hbvm_core import (HbvmTableau, NewtonOptions, StagePartition, StepResult,
                        build_tableau, dense_output, energy_drift, hbvm_step,
                        make_partition, propagate, select_fundamental)
from .missions import (OrbitResult, TransferResult, continuation, halo_by_energy,
                       halo_by_period, halo_guess, halo_transfer, hill_transfer,
                       initial_guess_linearized, lyapunov_by_energy,
                       lyapunov_by_period, lyapunov_guess)
from .quadrature import (BasisMatrices, QuadratureRule, basis_matrices,
                         gauss_legendre_rule, legendre_antiderivative,
                         legendre_eval)
from .structured_linalg import (BlockSystem, assemble_dense, dense_oracle_solve,
                                lstsq_bordered, solve_abd, solve_babd)

__version__ = "0.1.0"
