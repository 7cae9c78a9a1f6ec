"""unimap: classical emulation of nonlinear 1-D maps by finite unitary matrices.

Pipeline: describe a differentiable invertible map, expand its transfer
operator on an orthonormal basis, truncate to N dimensions, optionally
filter small entries into exact zeros, unitarize (globally, per block, or
through the leading-order generator), then iterate the unitary on state
vectors and read out localization diagnostics, simulated measurements,
echo times, and attractor locations.
"""

__version__ = "0.1.0"

from . import errors
from .basis import (
    BasisSpec,
    basis_eval,
    centers,
    edges,
    fourier_basis,
    gram_matrix,
    grid_coords,
    spatial_basis,
)
from .cascade import CascadeSystem, ErrorTable, assemble_dense, compare_errors, solve_cascade
from .errors import *  # noqa: F401,F403  (exception names are part of the API)
from .evolution import (
    DiagnosticsSeries,
    EchoReport,
    InitSpec,
    MeasurementConfig,
    SampledEstimates,
    StateVector,
    default_init,
    evolve,
    expectation_x,
    find_attractors,
    find_echo_time,
    gamma_kappa,
    init_state,
    sample_measurements,
    std_x,
)
from .maps import (
    ExtendedMap,
    FixedPointReport,
    MapSpec,
    classical_orbit,
    eval_forward,
    eval_jacobian,
    extend_map,
    find_fixed_points,
    gradient_descent_map,
    identity_map,
    image_interval,
    invert_point,
    linear_map,
    monotone_sign,
    polynomial_map,
    push_forward_density,
    quadratic_map,
)
from .propagator import (
    Block,
    BlockPartition,
    PropagatorMatrix,
    SparsityStats,
    block_boundary_fraction,
    compute_truncated_matrix,
    detect_blocks,
    filter_threshold,
    read_matrix_dump,
    sparsity_stats,
    unitarize_blocks,
    unitarize_generator,
    unitarize_polar_global,
    write_matrix_dump,
)
