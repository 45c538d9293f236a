"""Mass transport by gradient maps on the flat torus.

Realizes the Jacobian equation n(eta(x)) det[D eta(x)] = m(x) for maps
eta = x + grad(u), the potential equation det[I + D^2 u] = m / n(x + grad u)
solved by damped Newton, displacement interpolation between densities, and
the checks tying these to the pressureless particle flow: horizontality,
coincidence of the interpolation map with the particle flow, and the
departure rate of projected densities for (non-)asymptotic directions.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres

from . import _kernels
from ._kernels import interp_field
from .calculus import div, helmholtz_decompose, poisson_solve
from .fields import ScalarField, VectorField
from .geodesic import burgers_flow, invert_map, map_jacobian_det
from .reports import ResidualEntry, report
from .surface import FLAT_TORUS

MASS_TOL = 1e-10
DRIFT_LIMIT = 1e-8


class ConvexityError(ValueError):
    """The gradient-map potential lost the convexity guard id + D^2 u > 0."""


class TransportSolveError(RuntimeError):
    """Newton iteration failed; carries the last iterate for inspection."""

    def __init__(self, message, last_potential, residual_sup, iterations):
        super().__init__(message)
        self.last_potential = last_potential
        self.residual_sup = residual_sup
        self.iterations = iterations


@dataclass(frozen=True)
class Density:
    """Positive unit-mass density samples on a chart."""

    chart: object
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != self.chart.shape:
            raise ValueError("density samples do not match the chart grid")
        if np.any(s <= 0):
            raise ValueError("density must be positive everywhere")
        total = self.chart.integrate(s)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"density mass {total!r} is not 1 (normalize first)")
        object.__setattr__(self, "samples", s)

    @classmethod
    def normalized(cls, chart, samples):
        s = np.asarray(samples, dtype=float)
        return cls(chart, s / chart.integrate(s))

    @classmethod
    def uniform(cls, chart):
        return cls.normalized(chart, np.ones(chart.shape))

    def total_mass(self):
        return self.chart.integrate(self.samples)


def _second_derivs(chart, u_values):
    g = chart.grid
    return g.deriv_uu(u_values), g.deriv_uv(u_values), g.deriv_vv(u_values)


@dataclass(frozen=True)
class TransportPotential:
    """Periodic part u of a gradient-map potential phi(x) = |x|^2/2 + u(x).

    The transport map is eta = x + grad(u); the guard requires id + D^2 u
    positive-definite at every sample so eta stays a diffeomorphism.
    """

    chart: object
    u: ScalarField
    newton_iterations: int = 0
    residual_sup: float = float("nan")

    def __post_init__(self):
        if self.chart.kind != FLAT_TORUS:
            raise ValueError("gradient-map transport is implemented on the flat torus")

    def displacement(self):
        g = self.chart.grid
        return g.deriv_u(self.u.values), g.deriv_v(self.u.values)

    def hessian(self):
        return _second_derivs(self.chart, self.u.values)

    def guard_margin(self, t=1.0):
        """Smallest eigenvalue of id + t D^2 u over the grid."""
        h11, h12, h22 = self.hessian()
        a = 1.0 + t * h11
        d = 1.0 + t * h22
        b = t * h12
        tr = a + d
        disc = np.sqrt(np.maximum((a - d) ** 2 + 4 * b**2, 0.0))
        return float(np.min(0.5 * (tr - disc)))

    def check_guard(self, t=1.0):
        margin = self.guard_margin(t)
        if margin <= 0:
            raise ConvexityError(
                f"id + {t:.3g} D^2 u has eigenvalue {margin:.3e} <= 0"
            )
        return margin

    def map(self, t=1.0):
        du, dv = self.displacement()
        U, V = self.chart.grid.mesh()
        return U + t * du, V + t * dv


def pushforward(eta, mu):
    """Push the density mu through the map eta (orientation-preserving).

    The target density is deposited on the grid by mass-conserving bilinear
    scatter; the tiny quadrature drift is renormalized away and must stay
    below the hard limit.
    """
    chart = mu.chart
    mu_map, mv_map = eta
    detj = map_jacobian_det(chart, mu_map, mv_map)
    if np.min(detj) <= 0.0:
        raise ValueError(f"map folds over (min det = {np.min(detj):.3e})")
    g = chart.grid
    w = chart.volume_weights()
    masses = (mu.samples * w).ravel()
    cell = g.du * g.dv
    grid_mass = _kernels.scatter_bilinear(
        np.ascontiguousarray(mu_map.ravel()), np.ascontiguousarray(mv_map.ravel()),
        np.ascontiguousarray(masses),
        g.u_range[0], g.du, g.nu, g.v_range[0], g.dv, g.nv,
    )
    samples = grid_mass / cell
    total = chart.integrate(samples)
    drift = abs(total - 1.0)
    if drift > DRIFT_LIMIT:
        raise RuntimeError(f"pushforward mass drift {drift:.3e} exceeds {DRIFT_LIMIT}")
    return Density(chart, samples / total)


def pullback_density_values(eta, mu):
    """Values of the pushforward density at the mapped points: mu / det(D eta)."""
    detj = map_jacobian_det(mu.chart, *eta)
    if np.min(detj) <= 0.0:
        raise ValueError(f"map folds over (min det = {np.min(detj):.3e})")
    return mu.samples / detj


def transport_residual(phi, m, n):
    """Pointwise det[I + D^2 u] - m / n(x + grad u) on the source grid."""
    phi.check_guard()
    chart = phi.chart
    h11, h12, h22 = phi.hessian()
    det_h = (1.0 + h11) * (1.0 + h22) - h12**2
    mu_map, mv_map = phi.map()
    n_at = interp_field(chart, n.samples, mu_map.ravel(), mv_map.ravel())
    n_at = n_at.reshape(chart.shape)
    if np.any(n_at <= 0):
        raise ValueError("target density interpolates non-positive: not resolved")
    return ScalarField(chart, det_h - m.samples / n_at)


def _linearized_operator(phi, m, n):
    chart = phi.chart
    g = chart.grid
    h11, h12, h22 = phi.hessian()
    mu_map, mv_map = phi.map()
    pts_u, pts_v = mu_map.ravel(), mv_map.ravel()
    n_at = interp_field(chart, n.samples, pts_u, pts_v).reshape(chart.shape)
    nu_grid = g.deriv_u(n.samples)
    nv_grid = g.deriv_v(n.samples)
    b1 = m.samples * interp_field(chart, nu_grid, pts_u, pts_v).reshape(chart.shape) / n_at**2
    b2 = m.samples * interp_field(chart, nv_grid, pts_u, pts_v).reshape(chart.shape) / n_at**2

    area = chart.area()
    w = chart.volume_weights()

    def matvec(vec):
        d = vec.reshape(chart.shape)
        d11, d12, d22 = _second_derivs(chart, d)
        out = (1.0 + h22) * d11 - 2.0 * h12 * d12 + (1.0 + h11) * d22
        out += b1 * g.deriv_u(d) + b2 * g.deriv_v(d)
        out -= np.sum(out * w) / area  # keep the zero-mean gauge
        return out.ravel()

    return matvec


def solve_transport(m, n, tol=1e-10, max_iters=25):
    """Damped Newton solve of the gradient-map potential equation.

    The linearized operator is inverted by preconditioned GMRES, with the
    inverse Laplacian (the leading term of the equation linearized at the
    identity) as the preconditioner. Steps are halved until both the
    convexity guard and residual decrease hold; guard breach or hitting the
    iteration cap raises with the last iterate attached.

    Args:
        m, n: source and target densities on the same flat torus.
        tol: sup-norm residual target.
        max_iters: Newton iteration cap.

    Returns:
        TransportPotential with iteration count and final residual recorded.
    """
    if m.chart is not n.chart:
        raise ValueError("densities live on different charts")
    chart = m.chart
    area = chart.area()
    w = chart.volume_weights()
    phi = TransportPotential(chart, ScalarField(chart, np.zeros(chart.shape)))

    def resid(p):
        return transport_residual(p, m, n).values

    F = resid(phi)
    for it in range(1, max_iters + 1):
        sup = float(np.max(np.abs(F)))
        if sup <= tol:
            return TransportPotential(chart, phi.u, newton_iterations=it - 1,
                                      residual_sup=sup)
        matvec = _linearized_operator(phi, m, n)
        nn = F.size

        def precond(vec):
            r = vec.reshape(chart.shape)
            r = r - np.sum(r * w) / area
            return poisson_solve(chart, r).ravel()

        A = LinearOperator((nn, nn), matvec=matvec)
        M = LinearOperator((nn, nn), matvec=precond)
        rhs = (-(F - np.sum(F * w) / area)).ravel()
        delta, info = lgmres(A, rhs, M=M, rtol=1e-12, atol=0.0, maxiter=200)
        if info != 0:
            raise TransportSolveError(
                f"linear solve stalled at Newton step {it}", phi, sup, it
            )
        delta = delta.reshape(chart.shape)
        delta -= np.sum(delta * w) / area

        alpha = 1.0
        accepted = False
        for _ in range(30):
            cand = TransportPotential(
                chart, ScalarField(chart, phi.u.values + alpha * delta)
            )
            if cand.guard_margin() > 0:
                F_new = resid(cand)
                if float(np.max(np.abs(F_new))) < sup:
                    phi, F = cand, F_new
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            raise TransportSolveError(
                f"damping failed at Newton step {it}", phi, sup, it
            )

    sup = float(np.max(np.abs(F)))
    if sup <= tol:
        return TransportPotential(chart, phi.u, newton_iterations=max_iters,
                                  residual_sup=sup)
    raise TransportSolveError(
        f"Newton did not reach tol {tol:.1e} in {max_iters} iterations "
        f"(residual {sup:.3e})", phi, sup, max_iters
    )


def displacement_interpolation(phi, m, t):
    """Constant-speed density path: eta_t = x + t grad(u), rho_t = (eta_t)_* m."""
    if not (0.0 <= t <= 1.0):
        raise ValueError("interpolation time must lie in [0, 1]")
    phi.check_guard()
    if phi.guard_margin(t) <= 0:
        raise ConvexityError(f"interpolation guard failed at t = {t}")
    eta_t = phi.map(t)
    return eta_t, pushforward(eta_t, m)


def wasserstein_cost(phi, m):
    """Quadratic transport cost of the map x + grad(u) against source m."""
    du, dv = phi.displacement()
    return phi.chart.integrate((du**2 + dv**2) * m.samples)


def path_action(phi, m, n_times=9):
    """Kinetic action of the displacement path by time quadrature.

    The velocity field is resampled in spatial form (map inversion) and
    integrated against the scattered density, so this is an independent
    cross-check of the constant-speed geodesic property, not an identity.
    """
    chart = phi.chart
    du, dv = phi.displacement()
    ts, wq = np.polynomial.legendre.leggauss(n_times)
    ts = 0.5 * (ts + 1.0)
    wq = 0.5 * wq
    total = 0.0
    U, V = chart.grid.mesh()
    for t, wt in zip(ts, wq):
        eta_t, rho_t = displacement_interpolation(phi, m, t)
        pu, pv = invert_map(chart, eta_t[0], eta_t[1], U, V)
        v1 = interp_field(chart, du, pu, pv).reshape(chart.shape)
        v2 = interp_field(chart, dv, pu, pv).reshape(chart.shape)
        total += wt * chart.integrate((v1**2 + v2**2) * rho_t.samples)
    return total


def submersion_check(phi, m, n_times=5, tol=1e-6):
    """Residuals of the projection picture from maps to densities.

    (a) horizontality: the spatially resampled interpolation velocity has no
        divergence-free component;
    (b) particle-flow coincidence: the interpolation map equals the free
        particle flow of the initial velocity grad(u);
    (c) projection: pushing m along the particle flow reproduces the
        interpolation density.
    Reported values are maxima over the sampled times.
    """
    chart = phi.chart
    phi.check_guard()
    du, dv = phi.displacement()
    X0 = VectorField(chart, du, dv)
    U, V = chart.grid.mesh()
    ts = np.linspace(0.0, 1.0, n_times)
    flow = burgers_flow(X0, 1.0, max(n_times - 1, 1))
    flow_times = flow.times

    worst_a = worst_b = worst_c = 0.0
    per_time = []
    for t in ts:
        eta_t, rho_t = displacement_interpolation(phi, m, t)
        # (b): the particle flow of grad(u) is the same straight-line map
        k = int(np.argmin(np.abs(flow_times - t)))
        mb = flow.maps[k]
        res_b = max(float(np.max(np.abs(eta_t[0] - mb[0]))),
                    float(np.max(np.abs(eta_t[1] - mb[1]))))
        # (c): projection along the particle flow matches rho_t
        rho_flow = pushforward(mb, m)
        res_c = float(np.max(np.abs(rho_flow.samples - rho_t.samples)))
        # (a): spatial velocity is a pure gradient field
        if t == 0.0:
            res_a = 0.0
        else:
            pu, pv = invert_map(chart, eta_t[0], eta_t[1], U, V)
            v1 = interp_field(chart, du, pu, pv).reshape(chart.shape)
            v2 = interp_field(chart, dv, pu, pv).reshape(chart.shape)
            div_free, _ = helmholtz_decompose(VectorField(chart, v1, v2))
            res_a = div_free.l2_norm()
        per_time.append({"t": float(t), "horizontality": res_a,
                         "coincidence": res_b, "projection": res_c})
        worst_a = max(worst_a, res_a)
        worst_b = max(worst_b, res_b)
        worst_c = max(worst_c, res_c)

    entries = [
        ResidualEntry("horizontality", "l2", worst_a, tol),
        ResidualEntry("particle_flow_coincidence", "sup", worst_b, tol),
        ResidualEntry("density_projection", "sup", worst_c, tol),
    ]
    return report(entries, times=[p["t"] for p in per_time], per_time=per_time)


class CausticReached(RuntimeError):
    def __init__(self, t):
        super().__init__(f"particle flow folded before t = {t:.4g}")


def _density_deviation(chart, X0, t):
    """L2 deviation from uniform of the density pushed along the particle flow.

    Evaluated in Lagrangian form through the change of variables
    rho_t(eta(x)) det[D eta(x)] = c, which is smooth in t, unlike grid
    rescatter whose bilinear kinks would pollute small time differences.
    """
    g = chart.grid
    a11 = g.deriv_u(X0.x1)
    a12 = g.deriv_v(X0.x1)
    a21 = g.deriv_u(X0.x2)
    a22 = g.deriv_v(X0.x2)
    J = 1.0 + t * (a11 + a22) + t * t * (a11 * a22 - a12 * a21)
    if np.min(J) <= 0:
        raise CausticReached(t)
    c = 1.0 / chart.area()
    dev_sq = chart.integrate((c / J - c) ** 2 * J)
    return float(np.sqrt(max(dev_sq, 0.0)))


def vertical_departure_rate(X0, dt, tol=1e-6, div_tol=1e-8):
    """First and second time-derivatives at t=0 of the projected density norm.

    Both vanish exactly when X0 is asymptotic; divergence-free but
    non-asymptotic fields keep zero velocity and pick up a positive
    acceleration. Gradient (non-divergence-free) inputs are rejected, and a
    step so small that round-off dominates is reported as an error.
    """
    chart = X0.chart
    if chart.kind != FLAT_TORUS:
        raise ValueError("the departure-rate experiment runs on the flat torus")
    worst = float(np.max(np.abs(div(X0).values)))
    if worst > div_tol:
        raise ValueError(f"field is not divergence-free (sup |div X| = {worst:.3e})")

    noise = 100.0 * np.finfo(float).eps / np.sqrt(chart.area())
    d1 = _density_deviation(chart, X0, dt)
    d2 = _density_deviation(chart, X0, 2.0 * dt)
    d_ref = _density_deviation(chart, X0, 0.1)
    if d_ref > 10.0 * noise and d1 <= 10.0 * noise:
        raise RuntimeError(
            f"dt = {dt:.3g} too small: deviation {d1:.3e} is below round-off"
        )
    first = (4.0 * d1 - d2) / (2.0 * dt)
    second = (d2 - 2.0 * d1) / dt**2
    entries = [
        ResidualEntry("projected_velocity", "l2", abs(first), tol),
        ResidualEntry("projected_acceleration", "l2", abs(second), tol),
    ]
    return report(entries, dt=dt, deviations={"dt": d1, "2dt": d2, "ref": d_ref})
