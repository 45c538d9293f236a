"""Geometry of diffeomorphism groups on discretized 2D surfaces.

Charts (flat tori, sphere bands, surfaces of revolution), covariant
calculus with Helmholtz-Leray splitting, asymptotic-direction and
Monge-Ampere residual checks, geodesic flows of the flat L2 metric, and
optimal-transport gradient maps, all verified by residual reports.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend
from .asymptotic import (
    SearchResult,
    asymptotic_residuals,
    boundary_residuals,
    equivalence_check,
    kg_identity_residual,
    ma_residual,
    maxpoint_diagnostic,
    monge_ampere_residual,
    nonexistence_search,
    normalized_residual,
)
from .calculus import (
    InconsistentInputError,
    covariant_advection,
    covariant_hessian_det,
    div,
    divergence_identity_residual,
    grad,
    helmholtz_decompose,
    l2_inner,
    laplacian,
    poisson_solve,
    symplectic_gradient,
)
from .fields import ScalarField, VectorField, random_band_limited_scalar, zero_vector
from .geodesic import (
    CausticError,
    DiffeoPath,
    TangencyFit,
    acceleration_estimate,
    burgers_flow,
    euler_flow,
    invert_map,
    map_distance,
    map_jacobian_det,
    pressure_field,
    second_fundamental_form,
    tangency_order,
    vorticity,
)
from .grid import ParameterGrid
from .reports import ResidualEntry, ResidualReport
from .surface import (
    BoundaryCurve,
    ChartError,
    RevolutionProfile,
    SurfaceChart,
    build_flat_torus,
    build_revolution,
    build_sphere_band,
)
from .transport import (
    ConvexityError,
    Density,
    TransportPotential,
    TransportSolveError,
    displacement_interpolation,
    path_action,
    pullback_density_values,
    pushforward,
    solve_transport,
    submersion_check,
    transport_residual,
    vertical_departure_rate,
    wasserstein_cost,
)
