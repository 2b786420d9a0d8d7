"""Mixed-curvature kernel-subspace distillation for class-incremental learning.

Thin re-export of the compiled extension. The heavy lifting (Poincare-ball
geometry, RBF kernels, the closed-form RKHS subspace distance, the training
harness) lives in C++; this package exposes the main operations on numpy
arrays plus a JSON-driven experiment runner.
"""

from ._core import (  # noqa: F401
    NumericError,
    ShapeError,
    __version__,
    alpha_solve,
    compute_metrics,
    conformal_factor,
    cross_kernel,
    default_config,
    exp0,
    exp_map,
    geodesic_distance,
    gram_matrix,
    herding_select,
    kernel_value,
    log0,
    log_map,
    make_blobs,
    make_tree_data,
    mobius_add,
    project_to_ball,
    run_experiment,
    run_single_seed,
    spd_solve,
    subspace_distance,
    subspace_distance_batch,
)
