"""Adaptive sketch-and-precondition solvers for regularized least squares."""

from .diagnostics import (
    ConcentrationReport,
    estimate_event_probability,
    gaussian_deviation_check,
    gaussian_width_mc,
    srht_rownorm_check,
)
from .embeddings import (
    SketchedData,
    SketchSpec,
    critical_m_gaussian,
    critical_m_srht,
    derive_seed,
    padded_rows,
    sketch,
    sketch_gaussian,
    sketch_sjlt,
    sketch_srht,
)
from .linalg import cholesky, fwht, sym_eig, tri_solve
from .preconditioner import (
    Preconditioner,
    approx_newton_decrement,
    build,
    cs_deviation,
)
from .problem import (
    ExactSolution,
    RegularizedProblem,
    direct_solve,
    effective_dimension,
    exact_error,
    from_ridge,
    gen_synthetic,
    load_csv,
    load_matrix,
    nu_for_target_dimension,
    random_features,
    save_matrix,
)
from .solvers import (
    AdaptiveConfig,
    SolverTrace,
    TraceRecord,
    adaptive_run,
    cg,
    heavy_ball_bound,
    ihs_run,
    ihs_step,
    krylov_lower_bound,
    pcg_run,
    polyak_coefficients,
    polyak_ihs_run,
    termination_check,
)

__version__ = "0.1.0"
