"""Short-time density asymptotics for Young SDEs driven by fractional
Brownian motion with Hurst parameter H > 1/2.

The package is organised bottom-up: path sampling (fbm), Young
integration and flows (young), example vector-field systems (models),
the correction hierarchy and exponent lattices (expansion), Malliavin
derivatives and density estimation (malliavin), the Cameron-Martin
space with its energy minimizer (cameron_martin), and the end-to-end
on/off-diagonal pipelines (asymptotics).
"""

from .fbm import (
    GridPath,
    HurstParam,
    PathEnsemble,
    covariance,
    covariance_scaling_residual,
    empirical_covariance,
    fgn_autocovariance,
    sample_paths,
    self_similarity_check,
)
from .young import (
    VectorFieldSystem,
    YoungSolution,
    besov_norm,
    holder_norm,
    holder_seminorm,
    jacobian_series,
    moment_report,
    moment_summary,
    solve_ode,
    young_integral,
)
from .models import (
    affine_model,
    commuting_frame_model,
    from_table,
    get_model,
    quad_model,
    rank_deficient_model,
    sin_model,
)
from .expansion import (
    ExpansionHierarchy,
    ExponentLattice,
    LatticeExponent,
    build_lattice,
    chaos_coefficients,
    chaos_sum,
    iterated_integral,
    lattice_table,
    next_exponent,
    phi_hierarchy,
    remainder,
    scaled_solution,
)
from .malliavin import (
    CovarianceMatrix,
    DensityEstimate,
    directional_derivative,
    endpoint_samples,
    estimate_density,
    kde_estimate,
    malliavin_covariance,
    nondegeneracy_profile,
    second_derivative,
    silverman_bandwidth,
)
from .cameron_martin import (
    CameronMartinElement,
    KernelProjector,
    MinimizerSolution,
    VolterraKernel,
    geodesic_minimizer,
    h_inner,
    h_norm_sq,
    lobatto_nodes,
    minimize_energy,
    minimizer_to_json,
    project_kernel,
    second_order_form,
)
from .asymptotics import (
    OffDiagonalReport,
    SeriesFit,
    fit_series,
    geometric_grid,
    off_diagonal_pipeline,
    on_diagonal_pipeline,
)

__version__ = "0.1.0"
