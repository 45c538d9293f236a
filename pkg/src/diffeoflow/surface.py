"""Discretized 2D Riemannian surfaces: flat tori, sphere bands, surfaces of revolution.

A chart carries metric samples, Christoffel symbols, Gaussian curvature and
(for bands) boundary curves with geodesic curvature and outward normals.
Everything is intrinsic: boundary data comes from the metric, never from an
embedding.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import ParameterGrid

FLAT_TORUS = "flat_torus"
SPHERE_BAND = "sphere_band"
REVOLUTION = "revolution"

U_MIN = "umin"
U_MAX = "umax"


class ChartError(ValueError):
    """Raised when a surface chart cannot be built from the given data."""


@dataclass(frozen=True)
class BoundaryCurve:
    """One boundary circle of a band chart.

    ``kg`` is the geodesic curvature signed with the surface on the left
    (the Gauss-Bonnet convention), ``normal`` the outward unit normal in
    contravariant components at each boundary sample.
    """

    which_edge: str
    row: int
    kg: np.ndarray
    normal: np.ndarray  # shape (nv, 2)


@dataclass(frozen=True)
class SurfaceChart:
    grid: ParameterGrid
    kind: str
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    curvature: np.ndarray
    gamma: np.ndarray  # Christoffel symbols, gamma[i, j, k] = Gamma^i_{jk}
    boundary: tuple = ()
    profile: object = None
    sqrt_det_g: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        det = self.g11 * self.g22 - self.g12**2
        if np.any(self.g11 <= 0) or np.any(det <= 0):
            raise ChartError("metric is not positive-definite at some sample")
        object.__setattr__(self, "sqrt_det_g", np.sqrt(det))

    @property
    def shape(self):
        return self.grid.shape

    def inverse_metric(self):
        det = self.sqrt_det_g**2
        return self.g22 / det, -self.g12 / det, self.g11 / det

    def volume_weights(self):
        """Quadrature weights for integrals against the Riemannian area form."""
        return self.grid.quad_weights() * self.sqrt_det_g

    def integrate(self, f):
        return float(np.sum(f * self.volume_weights()))

    def area(self):
        return self.integrate(np.ones(self.shape))

    def metric_dot(self, x1, x2, y1, y2):
        return self.g11 * x1 * y1 + self.g12 * (x1 * y2 + x2 * y1) + self.g22 * x2 * y2

    def has_boundary(self):
        return len(self.boundary) > 0

    def gauss_bonnet_defect(self):
        """Total curvature plus boundary turning minus 2*pi*Euler characteristic.

        Bands and tori both have Euler characteristic zero, so the defect is
        the plain sum of the curvature integral and the boundary integrals.
        """
        total = self.integrate(self.curvature)
        for b in self.boundary:
            wv = self.grid.quad_weights_axis(1)
            ds = np.sqrt(self.g22[b.row, :])  # arc length of the v-circles
            total += float(np.sum(b.kg * ds * wv))
        return total


class RevolutionProfile:
    """Radius profile rho(t) of a surface of revolution with metric dt^2 + rho^2 dphi^2.

    Accepts a callable or plain samples; analytic first/second derivative
    callbacks are used when given, otherwise derivatives are taken on the
    grid (spectral when t is periodic, 4th-order differences when not).
    """

    def __init__(self, rho, d1=None, d2=None):
        self.rho = rho
        self.d1 = d1
        self.d2 = d2

    def sample(self, grid):
        t = grid.u
        if callable(self.rho):
            rho = np.asarray(self.rho(t), dtype=float) * np.ones_like(t)
        else:
            rho = np.asarray(self.rho, dtype=float)
            if rho.shape != t.shape:
                raise ChartError(
                    f"profile has {rho.shape[0]} samples, grid expects {t.shape[0]}"
                )
        if np.any(rho <= 0):
            raise ChartError("profile rho(t) must be positive on the whole range")
        rho1 = (
            np.asarray(self.d1(t), dtype=float) * np.ones_like(t)
            if self.d1 is not None
            else grid.axis_deriv_1d(rho, 0, 1)
        )
        rho2 = (
            np.asarray(self.d2(t), dtype=float) * np.ones_like(t)
            if self.d2 is not None
            else grid.axis_deriv_1d(rho, 0, 2)
        )
        if self.d2 is None:
            self._check_resolved(grid, rho, rho2)
        return rho, rho1, rho2

    @staticmethod
    def _check_resolved(grid, rho, rho2):
        # Compare against the same stencil on every other sample; a profile
        # whose second derivative moves at grid scale is not resolvable.
        if grid.nu < 16 or grid.nu % 4 != 0:
            return
        coarse = ParameterGrid(
            grid.nu // 2, grid.nv, grid.u_range, grid.v_range,
            grid.u_periodic, grid.v_periodic,
        )
        rho2_coarse = coarse.axis_deriv_1d(rho[::2], 0, 2)
        scale = max(float(np.max(np.abs(rho2))), 1e-8)
        mismatch = float(np.max(np.abs(rho2_coarse - rho2[::2]))) / scale
        if mismatch > 0.2:
            raise ChartError(
                "profile second derivative is not resolved on this grid "
                f"(coarse/fine mismatch {mismatch:.2g})"
            )


def _zero_gamma(shape):
    return np.zeros((2, 2, 2) + shape)


def build_flat_torus(lx, ly, nu, nv):
    """Flat torus of side lengths (lx, ly) with the identity metric."""
    if lx <= 0 or ly <= 0:
        raise ChartError("torus side lengths must be positive")
    grid = ParameterGrid(nu, nv, (0.0, lx), (0.0, ly), True, True)
    one = np.ones(grid.shape)
    zero = np.zeros(grid.shape)
    return SurfaceChart(
        grid=grid,
        kind=FLAT_TORUS,
        g11=one,
        g12=zero,
        g22=one.copy(),
        curvature=zero.copy(),
        gamma=_zero_gamma(grid.shape),
    )


def build_revolution(profile, t_range, nu, nv, *, d1=None, d2=None, u_periodic=False,
                     kind=REVOLUTION):
    """Surface of revolution with arc-length profile rho(t) on t_range.

    The angle phi is always periodic on [0, 2*pi); t is periodic only for
    closed profiles (tori of revolution). Curvature is -rho''/rho and the
    boundary circles carry geodesic curvature -rho'/rho at t0 and +rho'/rho
    at t1, signed with the band on the left.
    """
    if not isinstance(profile, RevolutionProfile):
        profile = RevolutionProfile(profile, d1=d1, d2=d2)
    grid = ParameterGrid(nu, nv, tuple(t_range), (0.0, 2.0 * np.pi), u_periodic, True)
    rho, rho1, rho2 = profile.sample(grid)

    shape = grid.shape
    col = np.ones(grid.nv)
    rho_g = np.outer(rho, col)
    rho1_g = np.outer(rho1, col)
    rho2_g = np.outer(rho2, col)

    gamma = _zero_gamma(shape)
    gamma[0, 1, 1] = -rho_g * rho1_g          # Gamma^t_{phi phi}
    gamma[1, 0, 1] = gamma[1, 1, 0] = rho1_g / rho_g  # Gamma^phi_{t phi}

    boundary = ()
    if not u_periodic:
        kg0 = -rho1 / rho  # t = t0 edge, band on the left of the circle
        kg1 = rho1 / rho
        n0 = np.zeros((grid.nv, 2))
        n0[:, 0] = -1.0
        n1 = np.zeros((grid.nv, 2))
        n1[:, 0] = 1.0
        boundary = (
            BoundaryCurve(U_MIN, 0, np.full(grid.nv, kg0[0]), n0),
            BoundaryCurve(U_MAX, grid.nu - 1, np.full(grid.nv, kg1[-1]), n1),
        )

    return SurfaceChart(
        grid=grid,
        kind=kind,
        g11=np.ones(shape),
        g12=np.zeros(shape),
        g22=rho_g**2,
        curvature=-rho2_g / rho_g,
        gamma=gamma,
        boundary=boundary,
        profile=profile,
    )


def build_sphere_band(theta_min, theta_max, nu, nv):
    """Band theta_min < t < theta_max of the unit sphere (poles excluded)."""
    if not (0.0 < theta_min < theta_max < np.pi):
        raise ChartError("sphere band must satisfy 0 < theta_min < theta_max < pi")
    return build_revolution(
        np.sin, (theta_min, theta_max), nu, nv,
        d1=np.cos, d2=lambda t: -np.sin(t), kind=SPHERE_BAND,
    )


def chart_summary(chart):
    """Plain-dict summary used by the CLI and by report provenance blocks."""
    info = {
        "kind": chart.kind,
        "nu": chart.grid.nu,
        "nv": chart.grid.nv,
        "u_range": list(chart.grid.u_range),
        "v_range": list(chart.grid.v_range),
        "u_periodic": chart.grid.u_periodic,
        "v_periodic": chart.grid.v_periodic,
        "area": chart.area(),
        "curvature_min": float(np.min(chart.curvature)),
        "curvature_max": float(np.max(chart.curvature)),
    }
    if chart.has_boundary():
        info["gauss_bonnet_defect"] = chart.gauss_bonnet_defect()
        info["boundary_kg"] = [
            {"edge": b.which_edge, "kg": float(b.kg[0])} for b in chart.boundary
        ]
    return info


def dump_chart_text(chart):
    """Self-describing text dump: one CSV block per stored field."""
    lines = [f"# chart kind={chart.kind} nu={chart.grid.nu} nv={chart.grid.nv}"]
    lines.append(f"# u_range={chart.grid.u_range} periodic={chart.grid.u_periodic}")
    lines.append(f"# v_range={chart.grid.v_range} periodic={chart.grid.v_periodic}")
    named = [
        ("g11", chart.g11),
        ("g12", chart.g12),
        ("g22", chart.g22),
        ("sqrt_det_g", chart.sqrt_det_g),
        ("curvature", chart.curvature),
    ]
    for name, arr in named:
        lines.append(f"# field: {name}")
        for row in arr:
            lines.append(",".join(f"{x:.17g}" for x in row))
    for b in chart.boundary:
        lines.append(f"# boundary: {b.which_edge}")
        lines.append(",".join(f"{x:.17g}" for x in b.kg))
    return "\n".join(lines) + "\n"
