"""Uniform 2D parameter grids with spectral and finite-difference derivatives.

Periodic coordinates are differentiated by FFT, non-periodic ones by
6th-order centered differences with one-sided closures at the ends.
Quadrature is the plain trapezoid weight on periodic axes (spectrally
accurate there) and a Gregory end-corrected rule on bounded axes.
"""

from dataclasses import dataclass, field

import numpy as np

MIN_POINTS = 8


def fornberg_weights(x0, x, m):
    """Finite-difference weights for the m-th derivative at x0 on nodes x.

    Classic Fornberg recursion; exact for polynomials up to degree len(x)-1.
    """
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def fd_matrix(n, h, order, width, edge_width=None):
    """Dense one-axis derivative matrix on a uniform bounded grid.

    Interior rows use centered `width`-point stencils; rows whose centered
    window would leave the grid switch to one-sided `edge_width`-point
    stencils. Wider edge stencils keep the closure error constants well
    below the interior ones at the same formal order.
    """
    if edge_width is None:
        edge_width = width
    edge_width = min(edge_width, n)
    D = np.zeros((n, n))
    x = np.arange(n, dtype=float)
    half = width // 2
    for i in range(n):
        if half <= i < n - half:
            idx = np.arange(i - half, i - half + width)
        else:
            lo = min(max(i - edge_width // 2, 0), n - edge_width)
            idx = np.arange(lo, lo + edge_width)
        D[i, idx] = fornberg_weights(float(i), x[idx], order)
    return D / h**order


def gregory_weights(n, h):
    """Gregory end-corrected trapezoid weights, 6th order, on n uniform nodes.

    Corrections are applied additively so they may overlap on short grids.
    """
    if n < 6:
        raise ValueError("Gregory end corrections need at least 6 nodes")
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    end = np.array([95 / 288, 317 / 240, 23 / 30, 793 / 720, 157 / 160])
    delta = h * (end - np.array([0.5, 1.0, 1.0, 1.0, 1.0]))
    w[:5] += delta
    w[-5:] += delta[::-1]
    return w


def _wavenumbers(n, length):
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


@dataclass(frozen=True)
class ParameterGrid:
    """Uniform sample grid in coordinates (u, v).

    Periodic coordinates omit the duplicate endpoint; bounded ones include
    both ends. Counts must be even and at least 8 for the spectral
    transforms used downstream.
    """

    nu: int
    nv: int
    u_range: tuple
    v_range: tuple
    u_periodic: bool
    v_periodic: bool
    u: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name, n in (("nu", self.nu), ("nv", self.nv)):
            if n < MIN_POINTS:
                raise ValueError(f"{name} = {n}: need at least {MIN_POINTS} samples")
            if n % 2 != 0:
                raise ValueError(f"{name} = {n}: sample counts must be even")
        u0, u1 = self.u_range
        v0, v1 = self.v_range
        if not (u1 > u0 and v1 > v0):
            raise ValueError("coordinate ranges must be increasing")
        object.__setattr__(self, "u", self._axis(u0, u1, self.nu, self.u_periodic))
        object.__setattr__(self, "v", self._axis(v0, v1, self.nv, self.v_periodic))

    @staticmethod
    def _axis(a, b, n, periodic):
        return np.linspace(a, b, n, endpoint=not periodic)

    @property
    def du(self):
        u0, u1 = self.u_range
        return (u1 - u0) / (self.nu if self.u_periodic else self.nu - 1)

    @property
    def dv(self):
        v0, v1 = self.v_range
        return (v1 - v0) / (self.nv if self.v_periodic else self.nv - 1)

    @property
    def shape(self):
        return (self.nu, self.nv)

    def mesh(self):
        return np.meshgrid(self.u, self.v, indexing="ij")

    # -- derivative operators ------------------------------------------------

    def _spectral_deriv(self, f, axis, m):
        n = f.shape[axis]
        length = (self.u_range if axis == 0 else self.v_range)
        k = _wavenumbers(n, length[1] - length[0])
        if m == 1:
            mult = 1j * k
            mult[n // 2] = 0.0  # Nyquist has no signed partner frequency
        else:
            mult = -(k**2)
        shape = [1, 1]
        shape[axis] = n
        fh = np.fft.fft(f, axis=axis) * mult.reshape(shape)
        return np.real(np.fft.ifft(fh, axis=axis))

    def _fd_ops(self, axis):
        key = f"_fd_cache_{axis}"
        cached = getattr(self, key, None)
        if cached is None:
            n = self.nu if axis == 0 else self.nv
            h = self.du if axis == 0 else self.dv
            cached = (fd_matrix(n, h, 1, 7, 8), fd_matrix(n, h, 2, 7, 9))
            object.__setattr__(self, key, cached)
        return cached

    def deriv(self, f, axis, m=1):
        """m-th partial derivative (m = 1 or 2) of samples f along an axis."""
        if f.shape != self.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")
        if m not in (1, 2):
            raise ValueError("only first and second derivatives are provided")
        periodic = self.u_periodic if axis == 0 else self.v_periodic
        if periodic:
            return self._spectral_deriv(f, axis, m)
        D = self._fd_ops(axis)[m - 1]
        if axis == 0:
            return D @ f
        return f @ D.T

    def deriv_u(self, f):
        return self.deriv(f, 0, 1)

    def deriv_v(self, f):
        return self.deriv(f, 1, 1)

    def deriv_uu(self, f):
        return self.deriv(f, 0, 2)

    def deriv_vv(self, f):
        return self.deriv(f, 1, 2)

    def deriv_uv(self, f):
        return self.deriv(self.deriv(f, 0, 1), 1, 1)

    def axis_deriv_1d(self, samples, axis, m=1):
        """Derivative of a 1D profile living on one coordinate axis."""
        n = self.nu if axis == 0 else self.nv
        if samples.shape != (n,):
            raise ValueError("profile length does not match the axis")
        if axis == 0:
            tmp = np.broadcast_to(samples[:, None], self.shape).copy()
            return self.deriv(tmp, 0, m)[:, 0]
        tmp = np.broadcast_to(samples[None, :], self.shape).copy()
        return self.deriv(tmp, 1, m)[0, :]

    # -- quadrature ----------------------------------------------------------

    def quad_weights_axis(self, axis):
        n = self.nu if axis == 0 else self.nv
        h = self.du if axis == 0 else self.dv
        periodic = self.u_periodic if axis == 0 else self.v_periodic
        if periodic:
            return np.full(n, h)
        return gregory_weights(n, h)

    def quad_weights(self):
        """2D quadrature weights (coordinate measure du dv, no metric factor)."""
        return np.outer(self.quad_weights_axis(0), self.quad_weights_axis(1))

    def integrate(self, f):
        return float(np.sum(f * self.quad_weights()))
