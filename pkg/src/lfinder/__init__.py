"""lfinder: locate L-functions from a functional equation and Euler-product shape.

The workflow mirrors the variable-test-function approximate functional
equation method: build linear constraints on the Dirichlet coefficients by
comparing two test functions at the same critical-line point, reduce the
unknowns through the Euler product, solve the nonlinear system from many
random starts, and either search for unknown gamma-shell parameters or
certify (under the Ramanujan bound) that none exist.
"""

__version__ = "0.1.0"

from .afe import (
    LinearEquation,
    TestFunction,
    admissible_t_range,
    build_difference_equations,
    difference_equation,
    equation_sites,
    f1,
    f2,
    rhs_functional,
    z_eval,
)
from .gammaquad import QuadratureRule, contour_integral, gamma_c, gamma_r, log_gamma
from .model import (
    CoefficientVector,
    EulerStructure,
    FunctionalEquation,
    LocalFactor,
    bad_local_factor,
    check_unit_circle_roots,
    coefficient_bound,
    expand_coefficients,
    local_factor_from_free_params,
    make_fe,
    make_generic_fe,
    ramanujan_prime_power_bound,
)
from .solve import (
    SolveReport,
    UnknownLayout,
    broyden_solve,
    dedup,
    growth_filter,
    multi_start,
    residual,
)
from .exclusion import ExclusionVerdict, exclusion_scan, solve_and_bound
from .search import (
    CandidateRecord,
    GridSpec,
    SearchConfig,
    a32_consistency,
    indicators,
    interpolate_candidate,
    match_across_points,
    scan_point,
    zoom,
)
