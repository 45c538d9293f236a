"""Covariant differential operators on chart fields.

Gradient, divergence, symplectic gradient, covariant advection and Hessian,
the Helmholtz-Leray splitting into divergence-free and gradient parts, and
the pointwise divergence identity

    div(grad_X X) = K g(X,X) + tr(DX)^2 + L_X(div X)

that every smooth field must satisfy in two dimensions.
"""

import numpy as np

from .fields import ScalarField, VectorField
from .surface import FLAT_TORUS


class InconsistentInputError(ValueError):
    """Poisson data violates the solvability (compatibility) condition."""


def grad(f):
    """Contravariant gradient g^{ij} d_j f."""
    chart = f.chart
    fu = chart.grid.deriv_u(f.values)
    fv = chart.grid.deriv_v(f.values)
    gi11, gi12, gi22 = chart.inverse_metric()
    return VectorField(chart, gi11 * fu + gi12 * fv, gi12 * fu + gi22 * fv)


def div(X):
    """Riemannian divergence (1/sqrt g) d_i(sqrt g X^i)."""
    chart = X.chart
    sg = chart.sqrt_det_g
    out = chart.grid.deriv_u(sg * X.x1) + chart.grid.deriv_v(sg * X.x2)
    return ScalarField(chart, out / sg)


def symplectic_gradient(psi):
    """Hamiltonian field of psi for the area form: X = (-psi_v, psi_u)/sqrt(g)."""
    chart = psi.chart
    sg = chart.sqrt_det_g
    pu = chart.grid.deriv_u(psi.values)
    pv = chart.grid.deriv_v(psi.values)
    return VectorField(chart, -pv / sg, pu / sg)


def covariant_differential(X):
    """(DX)^i_j = d_j X^i + Gamma^i_{jk} X^k, returned as a (2,2,nu,nv) array."""
    chart = X.chart
    comps = (X.x1, X.x2)
    DX = np.empty((2, 2) + chart.shape)
    for i in range(2):
        DX[i, 0] = chart.grid.deriv_u(comps[i])
        DX[i, 1] = chart.grid.deriv_v(comps[i])
        for j in range(2):
            for k in range(2):
                DX[i, j] += chart.gamma[i, j, k] * comps[k]
    return DX


def covariant_advection(X, Y):
    """(nabla_X Y)^i = X^j d_j Y^i + Gamma^i_{jk} X^j Y^k."""
    if X.chart is not Y.chart:
        raise ValueError("fields live on different charts")
    DY = covariant_differential(Y)
    a1 = DY[0, 0] * X.x1 + DY[0, 1] * X.x2
    a2 = DY[1, 0] * X.x1 + DY[1, 1] * X.x2
    return VectorField(X.chart, a1, a2)


def covariant_hessian(psi):
    """Covariant Hessian H_{ij} = d_i d_j psi - Gamma^k_{ij} d_k psi."""
    chart = psi.chart
    g = chart.grid
    pu = g.deriv_u(psi.values)
    pv = g.deriv_v(psi.values)
    h11 = g.deriv_uu(psi.values) - chart.gamma[0, 0, 0] * pu - chart.gamma[1, 0, 0] * pv
    h12 = g.deriv_uv(psi.values) - chart.gamma[0, 0, 1] * pu - chart.gamma[1, 0, 1] * pv
    h22 = g.deriv_vv(psi.values) - chart.gamma[0, 1, 1] * pu - chart.gamma[1, 1, 1] * pv
    return h11, h12, h22


def covariant_hessian_det(psi, convention="covariant"):
    """Determinant of the Hessian of psi.

    ``convention="covariant"`` subtracts the Christoffel terms (tensorial,
    the default); ``"coordinate"`` keeps raw second partials. The two agree
    on flat charts.
    """
    chart = psi.chart
    if convention == "covariant":
        h11, h12, h22 = covariant_hessian(psi)
    elif convention == "coordinate":
        g = chart.grid
        h11 = g.deriv_uu(psi.values)
        h12 = g.deriv_uv(psi.values)
        h22 = g.deriv_vv(psi.values)
    else:
        raise ValueError(f"unknown Hessian convention {convention!r}")
    return ScalarField(chart, h11 * h22 - h12**2)


def laplacian(f):
    return div(grad(f))


def l2_inner(X, Y):
    """Flat L^2 pairing: integral of g(X, Y) over the chart."""
    if X.chart is not Y.chart:
        raise ValueError("fields live on different charts")
    return X.chart.integrate(X.chart.metric_dot(X.x1, X.x2, Y.x1, Y.x2))


# -- Poisson solvers ---------------------------------------------------------

_COMPAT_TOL = 1e-8


def _poisson_flat_torus(chart, rhs):
    grid = chart.grid
    u0, u1 = grid.u_range
    v0, v1 = grid.v_range
    ku = 2 * np.pi * np.fft.fftfreq(grid.nu, d=(u1 - u0) / grid.nu)
    kv = 2 * np.pi * np.fft.fftfreq(grid.nv, d=(v1 - v0) / grid.nv)
    k2 = ku[:, None] ** 2 + kv[None, :] ** 2
    rhat = np.fft.fft2(rhs)
    scale = max(float(np.max(np.abs(rhs))), 1e-30)
    mean = abs(rhat[0, 0]) / (grid.nu * grid.nv)
    if mean > _COMPAT_TOL * scale:
        raise InconsistentInputError(
            f"right-hand side has nonzero mean {mean:.3e} on a closed chart"
        )
    k2[0, 0] = 1.0
    phat = -rhat / k2
    phat[0, 0] = 0.0
    return np.real(np.fft.ifft2(phat))


def _spectral_diff_matrix(grid, m):
    n = grid.nu
    D = np.empty((n, n))
    eye = np.eye(n)
    for j in range(n):
        col = np.broadcast_to(eye[:, j][:, None], grid.shape).copy()
        D[:, j] = grid.deriv(col, 0, m)[:, 0]
    return D


def _poisson_revolution(chart, rhs, neumann):
    """Per-angular-mode solve of the Laplace-Beltrami equation on a revolution chart.

    The metric is dt^2 + rho(t)^2 dphi^2, so a Fourier transform in phi
    reduces the problem to 1D boundary-value problems

        p'' + (rho'/rho) p' - (m^2/rho^2) p = rhs_m

    closed by Neumann rows on bands. The angular mean mode is singular up
    to constants and is solved with an added mean-zero constraint; the
    Lagrange multiplier doubles as the compatibility defect.
    """
    grid = chart.grid
    nu, nv = grid.shape
    rho = np.sqrt(chart.g22[:, 0])
    rho1 = grid.axis_deriv_1d(rho, 0, 1)

    if grid.u_periodic:
        D1 = _spectral_diff_matrix(grid, 1)
        D2 = _spectral_diff_matrix(grid, 2)
    else:
        D1, D2 = grid._fd_ops(0)

    rhat = np.fft.fft(rhs, axis=1)
    if neumann is not None:
        b0_hat = np.fft.fft(np.asarray(neumann[0], dtype=float))
        b1_hat = np.fft.fft(np.asarray(neumann[1], dtype=float))

    modes = np.fft.fftfreq(nv, d=1.0 / nv)  # integer wavenumbers for [0, 2*pi)
    phat = np.zeros_like(rhat)
    base = D2 + np.diag(rho1 / rho) @ D1
    wq = grid.quad_weights_axis(0) * rho  # t-line weights of the volume mean

    scale = max(float(np.max(np.abs(rhs))), 1e-30)
    for j, m in enumerate(modes):
        L = base - np.diag((m / rho) ** 2)
        r = rhat[:, j].copy()
        interior = np.ones(nu, dtype=bool)
        if not grid.u_periodic:
            L[0, :] = D1[0, :]
            L[-1, :] = D1[-1, :]
            r[0] = b0_hat[j] if neumann is not None else 0.0
            r[-1] = b1_hat[j] if neumann is not None else 0.0
            interior[[0, -1]] = False
        if m == 0:
            # singular up to constants: augment with the mean-zero constraint
            A = np.zeros((nu + 1, nu + 1), dtype=complex)
            A[:nu, :nu] = L
            A[:nu, nu] = interior.astype(float)
            A[nu, :nu] = wq
            b = np.concatenate([r, [0.0]])
            sol = np.linalg.solve(A, b)
            if abs(sol[nu]) > 1e-6 * scale:
                raise InconsistentInputError(
                    f"Poisson data incompatible: defect {abs(sol[nu]):.3e}"
                )
            phat[:, j] = sol[:nu]
        else:
            phat[:, j] = np.linalg.solve(L, r)
    p = np.real(np.fft.ifft(phat, axis=1))
    return p - chart.integrate(p) / chart.area()


def poisson_solve(chart, rhs, neumann=None):
    """Zero-mean p with Laplace-Beltrami(p) = rhs.

    ``neumann`` supplies (dp/dt at t0, dp/dt at t1) sample rows for band
    charts; closed charts require the volume mean of rhs to vanish.
    """
    rhs = np.asarray(rhs, dtype=float)
    if chart.kind == FLAT_TORUS:
        if neumann is not None:
            raise ValueError("flat torus has no boundary data")
        return _poisson_flat_torus(chart, rhs)
    if chart.has_boundary() and neumann is None:
        neumann = (np.zeros(chart.grid.nv), np.zeros(chart.grid.nv))
    return _poisson_revolution(chart, rhs, neumann)


def helmholtz_decompose(X):
    """Split X into (divergence_free, gradient_part), L2-orthogonally.

    The gradient part is grad(p) where p solves the Poisson problem with
    the divergence of X as source; on bands the Neumann data is the normal
    component of X, so the divergence-free part stays tangent to the
    boundary.
    """
    chart = X.chart
    s = div(X).values
    neumann = None
    if chart.has_boundary():
        neumann = (X.x1[0, :], X.x1[-1, :])
    p = poisson_solve(chart, s, neumann)
    grad_part = grad(ScalarField(chart, p))
    div_free = X - grad_part
    return div_free, grad_part


def divergence_identity_residual(X):
    """Pointwise defect of the 2D divergence identity for nabla_X X.

    Returns div(nabla_X X) - [K g(X,X) + tr(DX)^2 + L_X(div X)] as a scalar
    field; it converges to zero under refinement for any smooth field.
    """
    chart = X.chart
    adv = covariant_advection(X, X)
    lhs = div(adv).values
    DX = covariant_differential(X)
    tr_dx2 = (
        DX[0, 0] * DX[0, 0]
        + DX[0, 1] * DX[1, 0]
        + DX[1, 0] * DX[0, 1]
        + DX[1, 1] * DX[1, 1]
    )
    f = X.squared_length()
    divx = div(X).values
    lie = X.x1 * chart.grid.deriv_u(divx) + X.x2 * chart.grid.deriv_v(divx)
    return ScalarField(chart, lhs - (chart.curvature * f + tr_dx2 + lie))
