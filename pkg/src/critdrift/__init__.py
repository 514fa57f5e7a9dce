"""critdrift: numerical laboratory for Dirichlet problems with critical
weak-Lorentz drifts, their Lorentz-space functional calculus, and the
small-scale quasi-norm that separates local from global drift size."""

__version__ = "0.1.0"

from .grids import (Domain, Grid, RadialGrid, build_grid, radial_reduce,
                    integrate, parse_domain)
from .fields import ScalarField, VectorField, const_field, zero_field, \
    const_vector, zero_vector, indicator
from .lorentz import (LorentzSpec, SmallScaleSpec, DistributionCurve,
                      distribution_function, decreasing_rearrangement,
                      lorentz_quasinorm, lp_norm, small_scale_quasinorm,
                      quasi_triangle_defect, quasi_triangle_constant,
                      check_lorentz_holder, verify_scaling_invariance, INF)
from .drifts import (radial_drift, bump_lattice_drift, decompose_drift,
                     DriftDecomposition, MollifierSpec, mollify,
                     band_limited_scalar)
from .solver import (assemble, solve, continuation_solve, WeakData,
                     SolveReport, DiscreteOperator, NearSingular,
                     weak_residual, w_minus_one_p_norm, sobolev_norm,
                     weak_infsup_constant)
from .reports import RunConfig, ExperimentReport, run, emit_plotdata

__all__ = [name for name in dir() if not name.startswith("_")]
