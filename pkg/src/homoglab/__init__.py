"""Numerical laboratory for effective operators of fully nonlinear
uniformly elliptic equations in random media, built on the obstacle method:
solve shifted zero-obstacle problems in seeded environments, track the
limiting contact density, locate the effective value by bisection, and
validate against oscillatory versus effective Dirichlet solves."""

from .environments import (CellValueTable, EnvModel, Environment, LinearEntry,
                           PucciEntry, ergodicity_smoke, sample_env, translate)
from .lattice import (GridField, LatticeDomain, SymMatrix, discrete_gradient,
                      discrete_hessian, interior_window, make_domain,
                      second_difference)
from .obstacle import (InfConvolution, NonconvergenceError, ObstacleSolution,
                       check_supersolution_defect, contact_measure,
                       inf_convolution, infconv_gradient, solve_obstacle)
from .operators import (EllipticOperator, EllipticityConstants,
                        callable_operator, check_ellipticity,
                        constant_linear_operator, linear_operator,
                        odd_reflection, pucci_minus, pucci_operator,
                        pucci_plus, shift_operator, subtract_constant)
from .effective import (BracketError, DensityEstimate, EffectiveParams,
                        EffectiveSample, check_effective_properties,
                        density_curve, density_estimate, effective_F,
                        flatness_check)
from .validate import (ConvergenceStudy, TabulatedEffective,
                       convergence_study, periodic_corrector,
                       solve_dirichlet, solve_effective_dirichlet,
                       tabulate_effective)

__version__ = "0.1.0"
