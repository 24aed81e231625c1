"""Area under the positive excursion of a lattice random walk with negative drift.

Exact dynamic programming, Cramér-type asymptotics, importance sampling and
the checks that tie them together.
"""
__version__ = "0.1.0"

from .errors import (CapsTooSmall, ExcursionError, GateFailure, HorizonTooShort, NoRoot, QuadratureError,
                     RejectionTooSlow, SingularCovariance, TruncationTooCoarse, ValidationError,
                     WindowTooNarrow, ZeroConditioningEvent)
from .increments import LatticePMF, TiltSchedule, ValidationReport, mgf, tilt, tilt_schedule, validate
from .analytics import (ChebyshevBound, ConstantAssembly, CramerProfile, GaussianBridgeKernel, adaptive_simpson,
                        area_rate, assemble_constants, bridge_density, chebyshev_bound, covariance_matrix,
                        cramer_profile, cramer_root, delta_squared, euler_gap, psi, reversed_kernel, saddle,
                        sigma2)
from .exact import (ExcursionTable, area_marginal, area_tail, area_tails, change_of_measure_identity,
                    conditional_tau, duration_law, enumerate_excursions, excursion_law, load_table, save_table,
                    survival_exact, tilted_layer)
from .simulate import (EstimatorReport, conditioned_excursion_area, is_local, is_tail, naive_excursion,
                       survival_q, survival_qhat)
from .fit import (ConvergenceTrace, cheb_check, duration_clt, duration_clt_trace, kappa_fit, llt_error,
                  tail_ratio, zero_mean_check)
