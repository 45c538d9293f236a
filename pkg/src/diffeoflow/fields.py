"""Scalar and vector fields sampled on a surface chart."""

from dataclasses import dataclass

import numpy as np


def _check_shape(chart, arr, what):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != chart.shape:
        raise ValueError(f"{what} shape {arr.shape} does not match grid {chart.shape}")
    return arr


@dataclass(frozen=True)
class ScalarField:
    chart: object
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_shape(self.chart, self.values, "scalar"))

    def __add__(self, other):
        return ScalarField(self.chart, self.values + _coerce(self, other))

    def __sub__(self, other):
        return ScalarField(self.chart, self.values - _coerce(self, other))

    def __mul__(self, c):
        return ScalarField(self.chart, self.values * c)

    __rmul__ = __mul__

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def l2_norm(self):
        return float(np.sqrt(self.chart.integrate(self.values**2)))

    def mean(self):
        return self.chart.integrate(self.values) / self.chart.area()


def _coerce(f, other):
    if isinstance(other, ScalarField):
        if other.chart is not f.chart:
            raise ValueError("fields live on different charts")
        return other.values
    return other


@dataclass(frozen=True)
class VectorField:
    """Contravariant components (x1, x2) on the chart grid."""

    chart: object
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x1", _check_shape(self.chart, self.x1, "x1"))
        object.__setattr__(self, "x2", _check_shape(self.chart, self.x2, "x2"))

    def __add__(self, other):
        self._same_chart(other)
        return VectorField(self.chart, self.x1 + other.x1, self.x2 + other.x2)

    def __sub__(self, other):
        self._same_chart(other)
        return VectorField(self.chart, self.x1 - other.x1, self.x2 - other.x2)

    def __mul__(self, c):
        return VectorField(self.chart, self.x1 * c, self.x2 * c)

    __rmul__ = __mul__

    def _same_chart(self, other):
        if other.chart is not self.chart:
            raise ValueError("fields live on different charts")

    def squared_length(self):
        """Pointwise metric length g(X, X)."""
        return self.chart.metric_dot(self.x1, self.x2, self.x1, self.x2)

    def sup_norm(self):
        return float(np.max(np.sqrt(np.maximum(self.squared_length(), 0.0))))

    def l2_norm(self):
        return float(np.sqrt(self.chart.integrate(self.squared_length())))


def zero_vector(chart):
    z = np.zeros(chart.shape)
    return VectorField(chart, z, z.copy())


def random_band_limited_scalar(chart, max_mode, rng, amplitude=1.0):
    """Random real trigonometric polynomial resolved by the chart grid.

    On doubly periodic charts this is a 2D Fourier sum with modes up to
    ``max_mode`` in each direction. On bands the t-direction uses sine
    modes vanishing at the edges so the field is smooth on the closed band.
    """
    grid = chart.grid
    U, V = grid.mesh()
    u0, u1 = grid.u_range
    v0, v1 = grid.v_range
    su = 2.0 * np.pi * (U - u0) / (u1 - u0)
    sv = 2.0 * np.pi * (V - v0) / (v1 - v0)
    out = np.zeros(grid.shape)
    if grid.u_periodic:
        for p in range(0, max_mode + 1):
            for q in range(0, max_mode + 1):
                if p == 0 and q == 0:
                    continue
                a, b, c, d = rng.standard_normal(4) / (1.0 + p * p + q * q)
                out += a * np.cos(p * su) * np.cos(q * sv)
                out += b * np.cos(p * su) * np.sin(q * sv)
                out += c * np.sin(p * su) * np.cos(q * sv)
                out += d * np.sin(p * su) * np.sin(q * sv)
    else:
        tau = (U - u0) / (u1 - u0)
        for p in range(1, max_mode + 1):
            for q in range(0, max_mode + 1):
                a, b = rng.standard_normal(2) / (1.0 + p * p + q * q)
                out += np.sin(p * np.pi * tau) * (a * np.cos(q * sv) + b * np.sin(q * sv))
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= amplitude / peak
    return ScalarField(chart, out)


def save_grid_csv(path, chart, *arrays, header=""):
    """Write grid samples as CSV rows (u, v, value, value, ...)."""
    U, V = chart.grid.mesh()
    cols = [U.ravel(), V.ravel()] + [np.asarray(a).ravel() for a in arrays]
    data = np.column_stack(cols)
    np.savetxt(path, data, delimiter=",", header=header, comments="# ")


def load_grid_csv(path, chart):
    """Read value columns written by save_grid_csv back onto the chart grid."""
    data = np.loadtxt(path, delimiter=",")
    expected = chart.grid.nu * chart.grid.nv
    if data.shape[0] != expected:
        raise ValueError(f"CSV has {data.shape[0]} rows, chart needs {expected}")
    return [data[:, k].reshape(chart.shape) for k in range(2, data.shape[1])]
