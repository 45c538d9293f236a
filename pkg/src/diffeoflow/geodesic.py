"""Geodesics of the flat L2 metric on maps: pressureless particle flows and
incompressible Euler flows, with the tangency-order experiment that separates
asymptotic from generic divergence-free directions.

Particle flows integrate the geodesic equation of the chart per grid node
(straight lines on the flat torus, the revolution geodesic ODE elsewhere).
The Euler solver is a vorticity/stream-function spectral scheme with RK4
time stepping on the flat torus, co-integrating the particle map.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import interp_field
from .calculus import (
    covariant_advection,
    div,
    helmholtz_decompose,
    poisson_solve,
)
from .fields import ScalarField, VectorField
from .surface import FLAT_TORUS


class CausticError(RuntimeError):
    """Particle trajectories crossed: the map stopped being a diffeomorphism."""

    def __init__(self, crossing_time):
        super().__init__(f"caustic formed at t = {crossing_time:.6g}")
        self.crossing_time = crossing_time


DIV_TOL = 1e-8
CFL_FACTOR = 0.5


@dataclass
class DiffeoPath:
    """Time-sampled path of maps from the grid into the surface.

    ``maps[k]`` holds image coordinates (u, v per node, winding unwrapped on
    periodic charts); ``particle_velocities[k]`` the velocity carried by each
    particle. Spatial (right-translated) velocity fields are computed on
    demand by inverting the map.
    """

    chart: object
    times: np.ndarray
    maps: list
    particle_velocities: list
    caustic_time: float = np.inf
    _spatial_cache: dict = field(default_factory=dict, repr=False)

    def spatial_velocity(self, k):
        """Velocity as a vector field on the grid: particle velocity at eta^{-1}."""
        if k not in self._spatial_cache:
            mu, mv = self.maps[k]
            w1, w2 = self.particle_velocities[k]
            U, V = self.chart.grid.mesh()
            pu, pv = invert_map(self.chart, mu, mv, U, V)
            v1 = interp_field(self.chart, w1, pu, pv).reshape(self.chart.shape)
            v2 = interp_field(self.chart, w2, pu, pv).reshape(self.chart.shape)
            self._spatial_cache[k] = VectorField(self.chart, v1, v2)
        return self._spatial_cache[k]

    def volume_distortion(self, k):
        return map_jacobian_det(self.chart, *self.maps[k])


def identity_map(chart):
    U, V = chart.grid.mesh()
    return U.copy(), V.copy()


def map_jacobian_det(chart, mu, mv):
    """Coordinate Jacobian determinant of a map given on the initial grid."""
    g = chart.grid
    U, V = g.mesh()
    du = mu - U  # displacements are periodic in the initial coordinates
    dv = mv - V
    j11 = 1.0 + g.deriv_u(du)
    j12 = g.deriv_v(du)
    j21 = g.deriv_u(dv)
    j22 = 1.0 + g.deriv_v(dv)
    return j11 * j22 - j12 * j21


def map_distance(chart, map_a, map_b):
    """Flat L2 distance between two maps sampled on the same initial grid."""
    d1 = map_a[0] - map_b[0]
    d2 = map_a[1] - map_b[1]
    # metric at the (nearby) image points; exact on the flat torus
    sq = chart.metric_dot(d1, d2, d1, d2)
    return float(np.sqrt(chart.integrate(sq)))


def invert_map(chart, mu, mv, yu, yv, tol=1e-13, max_iter=200):
    """Preimages of target points under a near-identity map (fixed point).

    Converges when the displacement gradient is below one, which holds for
    all pre-caustic flows this toolkit produces.
    """
    U, V = chart.grid.mesh()
    du = mu - U
    dv = mv - V
    xu = np.asarray(yu, dtype=float).ravel().copy()
    xv = np.asarray(yv, dtype=float).ravel().copy()
    tu = np.asarray(yu, dtype=float).ravel()
    tv = np.asarray(yv, dtype=float).ravel()
    for _ in range(max_iter):
        eu = interp_field(chart, du, xu, xv)
        ev = interp_field(chart, dv, xu, xv)
        nxu = tu - eu
        nxv = tv - ev
        step = max(np.max(np.abs(nxu - xu)), np.max(np.abs(nxv - xv)))
        xu, xv = nxu, nxv
        if step < tol:
            break
    return xu.reshape(np.shape(yu)), xv.reshape(np.shape(yv))


# -- pressureless particle flow -------------------------------------------------


def _torus_caustic_time(chart, X0):
    """Exact first caustic time of x + t X0(x): smallest positive root of
    det(I + t DX0) = 1 + t tr + t^2 det per grid node."""
    g = chart.grid
    a11 = g.deriv_u(X0.x1)
    a12 = g.deriv_v(X0.x1)
    a21 = g.deriv_u(X0.x2)
    a22 = g.deriv_v(X0.x2)
    tr = a11 + a22
    det = a11 * a22 - a12 * a21
    t_best = np.inf
    # linear case det == 0: root -1/tr when tr < 0
    lin = np.abs(det) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        tlin = np.where(lin & (tr < 0), -1.0 / tr, np.inf)
        disc = tr**2 - 4 * det
        sq = np.sqrt(np.maximum(disc, 0.0))
        r1 = (-tr - sq) / (2 * det)
        r2 = (-tr + sq) / (2 * det)
    roots = np.stack([tlin, np.where(~lin & (disc >= 0) & (r1 > 0), r1, np.inf),
                      np.where(~lin & (disc >= 0) & (r2 > 0), r2, np.inf)])
    roots = np.where(roots > 1e-14, roots, np.inf)
    t_best = float(np.min(roots))
    return t_best


def burgers_flow(X0, t_final, steps):
    """Flow each grid node along the chart geodesic issued with velocity X0.

    On the flat torus the maps are the closed form x + t X0(x); on
    revolution charts the geodesic ODE is integrated with RK4. Trajectory
    crossing (vanishing Jacobian) aborts with the crossing time.
    """
    chart = X0.chart
    if steps <= 0 or t_final < 0:
        raise ValueError("need t_final >= 0 and steps > 0")
    times = np.linspace(0.0, t_final, steps + 1)
    U, V = chart.grid.mesh()

    if chart.kind == FLAT_TORUS:
        t_caustic = _torus_caustic_time(chart, X0)
        if t_final >= t_caustic:
            raise CausticError(t_caustic)
        maps = [(U + t * X0.x1, V + t * X0.x2) for t in times]
        vels = [(X0.x1.copy(), X0.x2.copy()) for _ in times]
        return DiffeoPath(chart, times, maps, vels, caustic_time=t_caustic)

    return _burgers_revolution(X0, times)


def _burgers_revolution(X0, times):
    chart = X0.chart
    g = chart.grid
    U, V = g.mesh()
    rho = np.sqrt(chart.g22[:, 0])
    rho1 = g.axis_deriv_1d(rho, 0, 1)
    # fine tables so the in-kernel profile lookup is effectively exact
    prof = chart.profile
    n_tab = 4096
    t0, t1 = g.u_range
    tab_t = np.linspace(t0, t1, n_tab, endpoint=not g.u_periodic)
    if prof is not None and callable(prof.rho) and prof.d1 is not None:
        rho_tab = np.asarray(prof.rho(tab_t), dtype=float) * np.ones_like(tab_t)
        rho1_tab = np.asarray(prof.d1(tab_t), dtype=float) * np.ones_like(tab_t)
    else:
        rho_tab = interp_field(chart, np.broadcast_to(rho[:, None], g.shape).copy(),
                               tab_t, np.zeros_like(tab_t))
        rho1_tab = interp_field(chart, np.broadcast_to(rho1[:, None], g.shape).copy(),
                                tab_t, np.zeros_like(tab_t))
    tab_dt = tab_t[1] - tab_t[0]

    u = U.ravel().copy()
    v = V.ravel().copy()
    w1 = X0.x1.ravel().copy()
    w2 = X0.x2.ravel().copy()
    maps = [(U.copy(), V.copy())]
    vels = [(X0.x1.copy(), X0.x2.copy())]
    n_sub = 4  # RK4 substeps per output interval
    prev_t, prev_min = 0.0, 1.0
    for k in range(1, len(times)):
        dt = (times[k] - times[k - 1]) / n_sub
        u, v, w1, w2, exited = _kernels.geodesic_rk4(
            u, v, w1, w2, dt, n_sub, rho_tab, rho1_tab,
            float(tab_t[0]), float(tab_dt), g.u_periodic, float(t0), float(t1),
        )
        if np.any(exited):
            raise ValueError(
                f"{int(np.sum(exited))} trajectories left the chart near t = {times[k]:.4g}"
            )
        mu = u.reshape(g.shape)
        mv = v.reshape(g.shape)
        cur_min = float(np.min(map_jacobian_det(chart, mu, mv)))
        if cur_min <= 0.0:
            t_cross = prev_t + (times[k] - prev_t) * prev_min / (prev_min - cur_min)
            raise CausticError(t_cross)
        prev_t, prev_min = times[k], cur_min
        maps.append((mu.copy(), mv.copy()))
        vels.append((w1.reshape(g.shape).copy(), w2.reshape(g.shape).copy()))
    return DiffeoPath(chart, times, maps, vels)


# -- incompressible Euler flow ---------------------------------------------------


class _SpectralEuler:
    """Vorticity/stream-function right-hand side on a flat torus grid."""

    def __init__(self, chart):
        if chart.kind != FLAT_TORUS:
            raise ValueError("Euler integration is supported on the flat torus only")
        self.chart = chart
        g = chart.grid
        u0, u1 = g.u_range
        v0, v1 = g.v_range
        ku = 2 * np.pi * np.fft.fftfreq(g.nu, d=(u1 - u0) / g.nu)
        kv = 2 * np.pi * np.fft.fftfreq(g.nv, d=(v1 - v0) / g.nv)
        self.iku = (1j * ku)[:, None]
        self.ikv = (1j * kv)[None, :]
        self.iku_d = self.iku.copy()
        self.ikv_d = self.ikv.copy()
        self.iku_d[g.nu // 2, 0] = 0.0
        self.ikv_d[0, g.nv // 2] = 0.0
        k2 = ku[:, None] ** 2 + kv[None, :] ** 2
        k2[0, 0] = 1.0
        self.inv_k2 = 1.0 / k2
        self.inv_k2[0, 0] = 0.0
        kmax_u = np.max(np.abs(ku))
        kmax_v = np.max(np.abs(kv))
        self.dealias = (np.abs(ku)[:, None] <= (2 / 3) * kmax_u) & (
            np.abs(kv)[None, :] <= (2 / 3) * kmax_v
        )

    def velocity(self, omega):
        psi_hat = -np.fft.fft2(omega) * self.inv_k2
        x1 = -np.real(np.fft.ifft2(self.ikv_d * psi_hat))
        x2 = np.real(np.fft.ifft2(self.iku_d * psi_hat))
        return x1, x2

    def stage(self, omega):
        """One evaluation of velocity and vorticity tendency, sharing transforms."""
        oh = np.fft.fft2(omega)
        psi_hat = -oh * self.inv_k2
        x1 = -np.real(np.fft.ifft2(self.ikv_d * psi_hat))
        x2 = np.real(np.fft.ifft2(self.iku_d * psi_hat))
        wu = np.real(np.fft.ifft2(self.iku_d * oh))
        wv = np.real(np.fft.ifft2(self.ikv_d * oh))
        adv_hat = np.fft.fft2(x1 * wu + x2 * wv) * self.dealias
        return x1, x2, -np.real(np.fft.ifft2(adv_hat))


def vorticity(X):
    g = X.chart.grid
    return g.deriv_u(X.x2) - g.deriv_v(X.x1)


def _euler_integrate(X0, sample_times, dt_target=None, div_tol=DIV_TOL):
    chart = X0.chart
    solver = _SpectralEuler(chart)
    divx = float(np.max(np.abs(div(X0).values)))
    if divx > div_tol:
        raise ValueError(f"initial field is not divergence-free (sup = {divx:.3e})")

    g = chart.grid
    h = min(g.du, g.dv)
    vmax = max(X0.sup_norm(), 1e-12)
    cfl_dt = CFL_FACTOR * h / vmax
    dt_target = cfl_dt if dt_target is None else min(dt_target, cfl_dt)

    omega = vorticity(X0)
    U, V = g.mesh()
    pu = U.ravel().copy()
    pv = V.ravel().copy()

    def rk_stage(omega_, qu, qv):
        x1, x2, dw = solver.stage(omega_)
        return dw, interp_field(chart, x1, qu, qv), interp_field(chart, x2, qu, qv), x1, x2

    maps = []
    vels = []
    t = 0.0
    for t_target in sample_times:
        span = t_target - t
        if span > 1e-14:
            n = max(1, int(np.ceil(span / dt_target)))
            dt = span / n
            for _ in range(n):
                k1, p1u, p1v, x1, x2 = rk_stage(omega, pu, pv)
                if max(np.max(np.abs(x1)), np.max(np.abs(x2))) * dt / h > 2.0:
                    raise RuntimeError("time step exceeded the advective stability bound")
                k2, p2u, p2v, *_ = rk_stage(omega + 0.5 * dt * k1,
                                            pu + 0.5 * dt * p1u, pv + 0.5 * dt * p1v)
                k3, p3u, p3v, *_ = rk_stage(omega + 0.5 * dt * k2,
                                            pu + 0.5 * dt * p2u, pv + 0.5 * dt * p2v)
                k4, p4u, p4v, *_ = rk_stage(omega + dt * k3,
                                            pu + dt * p3u, pv + dt * p3v)
                omega = omega + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                pu = pu + dt / 6.0 * (p1u + 2 * p2u + 2 * p3u + p4u)
                pv = pv + dt / 6.0 * (p1v + 2 * p2v + 2 * p3v + p4v)
                t += dt
            t = t_target
        x1, x2 = solver.velocity(omega)
        maps.append((pu.reshape(g.shape).copy(), pv.reshape(g.shape).copy()))
        vels.append(VectorField(chart, x1, x2))
    return maps, vels


def euler_flow(X0, t_final, steps, div_tol=DIV_TOL):
    """Incompressible flow on the flat torus with the particle map attached.

    Vorticity is advanced spectrally (2/3-rule dealiasing) with RK4 and the
    particle trajectories are co-integrated from the interpolated velocity.
    Kinetic energy and enstrophy at the sample times are stored on the
    returned path for conservation checks.
    """
    chart = X0.chart
    times = np.linspace(0.0, t_final, steps + 1)
    dt_target = t_final / steps if steps > 0 and t_final > 0 else None
    maps, vels = _euler_integrate(X0, times, dt_target=dt_target, div_tol=div_tol)
    path = DiffeoPath(
        chart, times, maps,
        [(v.x1.copy(), v.x2.copy()) for v in vels],
    )
    for k, v in enumerate(vels):
        path._spatial_cache[k] = v
    path.energy = np.array([chart.integrate(v.squared_length()) for v in vels])
    path.enstrophy = np.array(
        [chart.integrate(vorticity(v) ** 2) for v in vels]
    )
    return path


def pressure_field(X, div_tol=DIV_TOL):
    """Zero-mean pressure of the stationary Euler balance for velocity X.

    Solves Laplace(p) = -div(nabla_X X); X is asymptotic exactly when the
    pressure gradient vanishes.
    """
    chart = X.chart
    if chart.has_boundary():
        raise ValueError("pressure solve needs a boundaryless chart")
    divx = float(np.max(np.abs(div(X).values)))
    if divx > div_tol:
        raise ValueError(f"field is not divergence-free (sup = {divx:.3e})")
    rhs = -div(covariant_advection(X, X)).values
    return ScalarField(chart, poisson_solve(chart, rhs))


def second_fundamental_form(X, Y, div_tol=DIV_TOL):
    """Gradient part of nabla_X Y: the normal component of the ambient derivative.

    Evaluated at the identity; right-invariance carries the value along the
    subgroup. Vanishes at X = Y exactly for asymptotic directions.
    """
    for Z, name in ((X, "X"), (Y, "Y")):
        worst = float(np.max(np.abs(div(Z).values)))
        if worst > div_tol:
            raise ValueError(f"{name} is not divergence-free (sup = {worst:.3e})")
    adv = covariant_advection(X, Y)
    _, grad_part = helmholtz_decompose(adv)
    return grad_part


# -- tangency order ---------------------------------------------------------------


@dataclass(frozen=True)
class TangencyFit:
    t_samples: np.ndarray
    distances: np.ndarray
    fitted_exponent: float
    fit_residual: float
    exact_coincidence: bool


def tangency_order(X0, t_max, n_samples, div_tol=DIV_TOL):
    """Order of contact between the constrained and unconstrained flows of X0.

    Integrates the incompressible flow and the free particle flow from the
    same initial velocity, measures the L2 map distance at log-spaced times
    over the decade [t_max/10, t_max] and fits the distance exponent.
    Distances at round-off report exact coincidence instead of a fit.
    """
    chart = X0.chart
    if chart.kind != FLAT_TORUS:
        raise ValueError("the tangency experiment runs on the flat torus")
    if n_samples < 3:
        raise ValueError("need at least 3 samples for a fit")
    ts = np.geomspace(t_max / 10.0, t_max, n_samples)
    maps_e, _ = _euler_integrate(X0, ts, div_tol=div_tol)
    U, V = chart.grid.mesh()
    dists = np.empty(n_samples)
    for k, t in enumerate(ts):
        mb = (U + t * X0.x1, V + t * X0.x2)
        dists[k] = map_distance(chart, maps_e[k], mb)

    floor = 1e-10 * max(1.0, X0.sup_norm() * t_max) * np.sqrt(chart.area())
    valid = dists > floor
    if not np.any(valid):
        return TangencyFit(ts, dists, float("nan"), float("nan"), True)
    tv = ts[valid]
    dv = dists[valid]
    keep = tv <= 10.0 * tv.min() * (1 + 1e-12)
    tv, dv = tv[keep], dv[keep]
    if tv.size < 3:
        return TangencyFit(ts, dists, float("nan"), float("nan"), True)
    A = np.column_stack([np.log(tv), np.ones_like(tv)])
    coef, res, *_ = np.linalg.lstsq(A, np.log(dv), rcond=None)
    fit_residual = float(np.sqrt(res[0] / tv.size)) if res.size else 0.0
    return TangencyFit(ts, dists, float(coef[0]), fit_residual, False)


def acceleration_estimate(fit):
    """Limit of 2 d(t) / t^2 at small t, by linear-in-t extrapolation.

    For a generic divergence-free start this equals the L2 norm of the
    pressure gradient, the leading separation rate of the two flows.
    """
    if fit.exact_coincidence:
        return 0.0
    order = np.argsort(fit.t_samples)
    ts = fit.t_samples[order][:4]
    ds = fit.distances[order][:4]
    y = 2.0 * ds / ts**2
    A = np.column_stack([np.ones_like(ts), ts])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0])
