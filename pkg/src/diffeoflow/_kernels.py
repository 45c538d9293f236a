"""Hot grid kernels: off-grid interpolation, density scatter, geodesic stepping.

Each kernel has a pure-numpy implementation and a numba twin. The numba
path is used when numba imports cleanly and the environment variable
``DIFFEOFLOW_NUMBA`` is not set to ``0``/``false``/``off``/``no``; the
benchmark script under ``benchmarks/`` compares both. Everything FFT-based
lives elsewhere and stays numpy.
"""

import os

import numpy as np

ORDER = 8  # tensor Lagrange stencil width (degree 7)


def _numba_requested():
    flag = os.environ.get("DIFFEOFLOW_NUMBA", "").strip().lower()
    return flag not in ("0", "false", "off", "no")


# -- pure numpy implementations ----------------------------------------------

def _axis_windows(p, x0, h, n, periodic, order):
    s = (np.asarray(p, dtype=float) - x0) / h
    base = np.floor(s).astype(np.int64)
    start = base - (order // 2 - 1)
    if not periodic:
        start = np.clip(start, 0, n - order)
    xi = s - start
    j = np.arange(order)
    idx = start[:, None] + j[None, :]
    if periodic:
        idx %= n
    W = np.ones((s.shape[0], order))
    for jj in range(order):
        for kk in range(order):
            if kk != jj:
                W[:, jj] *= (xi - kk) / (jj - kk)
    return idx, W


def interp2d_numpy(values, pu, pv, u0, du, nu, u_periodic, v0, dv, nv, v_periodic):
    """Tensor-product Lagrange interpolation of grid samples at scattered points."""
    pu = np.atleast_1d(np.asarray(pu, dtype=float)).ravel()
    pv = np.atleast_1d(np.asarray(pv, dtype=float)).ravel()
    iu, Wu = _axis_windows(pu, u0, du, nu, u_periodic, ORDER)
    iv, Wv = _axis_windows(pv, v0, dv, nv, v_periodic, ORDER)
    vals = values[iu[:, :, None], iv[:, None, :]]
    return np.einsum("nj,njk,nk->n", Wu, vals, Wv)


def scatter_bilinear_numpy(pu, pv, mass, u0, du, nu, v0, dv, nv):
    """Deposit point masses onto a doubly periodic grid with bilinear weights."""
    su = (np.asarray(pu, dtype=float).ravel() - u0) / du
    sv = (np.asarray(pv, dtype=float).ravel() - v0) / dv
    i0 = np.floor(su).astype(np.int64)
    j0 = np.floor(sv).astype(np.int64)
    fu = su - i0
    fv = sv - j0
    i0 %= nu
    j0 %= nv
    i1 = (i0 + 1) % nu
    j1 = (j0 + 1) % nv
    m = np.asarray(mass, dtype=float).ravel()
    out = np.zeros((nu, nv))
    np.add.at(out, (i0, j0), m * (1 - fu) * (1 - fv))
    np.add.at(out, (i1, j0), m * fu * (1 - fv))
    np.add.at(out, (i0, j1), m * (1 - fu) * fv)
    np.add.at(out, (i1, j1), m * fu * fv)
    return out


def _interp1d_table_numpy(table, t, t0, dt, n, periodic):
    s = (np.asarray(t, dtype=float) - t0) / dt
    base = np.floor(s).astype(np.int64)
    start = base - 2
    if not periodic:
        start = np.clip(start, 0, n - 6)
    xi = s - start
    out = np.zeros_like(s)
    for jj in range(6):
        w = np.ones_like(xi)
        for kk in range(6):
            if kk != jj:
                w *= (xi - kk) / (jj - kk)
        idx = (start + jj) % n if periodic else start + jj
        out += w * table[idx]
    return out


def geodesic_rk4_numpy(u, v, w1, w2, dt, nsteps,
                       rho_tab, rho1_tab, tab_t0, tab_dt, u_periodic, t_lo, t_hi):
    """RK4 integration of the geodesic equations on a revolution chart.

    State is (u, v, w1, w2) per particle with udot = w1, vdot = w2,
    w1dot = rho rho' w2^2, w2dot = -2 (rho'/rho) w1 w2. Returns the final
    state plus a flag marking particles that left a bounded t-range.
    """
    u = u.copy()
    v = v.copy()
    w1 = w1.copy()
    w2 = w2.copy()
    ntab = rho_tab.shape[0]
    exited = np.zeros(u.shape, dtype=np.bool_)

    def rhs(uu, ww1, ww2):
        rho = _interp1d_table_numpy(rho_tab, uu, tab_t0, tab_dt, ntab, u_periodic)
        rho1 = _interp1d_table_numpy(rho1_tab, uu, tab_t0, tab_dt, ntab, u_periodic)
        return ww1, ww2, rho * rho1 * ww2**2, -2.0 * (rho1 / rho) * ww1 * ww2

    for _ in range(nsteps):
        k1 = rhs(u, w1, w2)
        k2 = rhs(u + 0.5 * dt * k1[0], w1 + 0.5 * dt * k1[2], w2 + 0.5 * dt * k1[3])
        k3 = rhs(u + 0.5 * dt * k2[0], w1 + 0.5 * dt * k2[2], w2 + 0.5 * dt * k2[3])
        k4 = rhs(u + dt * k3[0], w1 + dt * k3[2], w2 + dt * k3[3])
        u += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        w1 += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        w2 += dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        if not u_periodic:
            exited |= (u < t_lo) | (u > t_hi)
            np.clip(u, t_lo, t_hi, out=u)
    return u, v, w1, w2, exited


# -- numba twins ---------------------------------------------------------------

interp2d_numba = None
scatter_bilinear_numba = None
geodesic_rk4_numba = None

try:
    import numba
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    _HAVE_NUMBA = False

if _HAVE_NUMBA:

    @njit(cache=True)
    def _axis_window_jit(p, x0, h, n, periodic, idx, w):
        s = (p - x0) / h
        base = int(np.floor(s))
        start = base - (ORDER // 2 - 1)
        if not periodic:
            if start < 0:
                start = 0
            elif start > n - ORDER:
                start = n - ORDER
        xi = s - start
        for jj in range(ORDER):
            acc = 1.0
            for kk in range(ORDER):
                if kk != jj:
                    acc *= (xi - kk) / (jj - kk)
            w[jj] = acc
            ii = start + jj
            if periodic:
                ii %= n
            idx[jj] = ii

    @njit(cache=True)
    def interp2d_numba(values, pu, pv, u0, du, nu, u_periodic, v0, dv, nv, v_periodic):
        npts = pu.shape[0]
        out = np.empty(npts)
        iu = np.empty(ORDER, dtype=np.int64)
        iv = np.empty(ORDER, dtype=np.int64)
        wu = np.empty(ORDER)
        wv = np.empty(ORDER)
        for n in range(npts):
            _axis_window_jit(pu[n], u0, du, nu, u_periodic, iu, wu)
            _axis_window_jit(pv[n], v0, dv, nv, v_periodic, iv, wv)
            acc = 0.0
            for a in range(ORDER):
                row = 0.0
                for b in range(ORDER):
                    row += values[iu[a], iv[b]] * wv[b]
                acc += row * wu[a]
            out[n] = acc
        return out

    @njit(cache=True)
    def scatter_bilinear_numba(pu, pv, mass, u0, du, nu, v0, dv, nv):
        out = np.zeros((nu, nv))
        for n in range(pu.shape[0]):
            su = (pu[n] - u0) / du
            sv = (pv[n] - v0) / dv
            i0 = int(np.floor(su))
            j0 = int(np.floor(sv))
            fu = su - i0
            fv = sv - j0
            i0 %= nu
            j0 %= nv
            i1 = (i0 + 1) % nu
            j1 = (j0 + 1) % nv
            m = mass[n]
            out[i0, j0] += m * (1 - fu) * (1 - fv)
            out[i1, j0] += m * fu * (1 - fv)
            out[i0, j1] += m * (1 - fu) * fv
            out[i1, j1] += m * fu * fv
        return out

    @njit(cache=True)
    def _table_jit(table, t, t0, dt, n, periodic):
        s = (t - t0) / dt
        base = int(np.floor(s))
        start = base - 2
        if not periodic:
            if start < 0:
                start = 0
            elif start > n - 6:
                start = n - 6
        xi = s - start
        acc = 0.0
        for jj in range(6):
            w = 1.0
            for kk in range(6):
                if kk != jj:
                    w *= (xi - kk) / (jj - kk)
            ii = start + jj
            if periodic:
                ii %= n
            acc += w * table[ii]
        return acc

    @njit(cache=True)
    def geodesic_rk4_numba(u, v, w1, w2, dt, nsteps,
                           rho_tab, rho1_tab, tab_t0, tab_dt, u_periodic, t_lo, t_hi):
        npts = u.shape[0]
        uu = u.copy()
        vv = v.copy()
        a = w1.copy()
        b = w2.copy()
        ntab = rho_tab.shape[0]
        exited = np.zeros(npts, dtype=np.bool_)
        for n in range(npts):
            x, y, p, q = uu[n], vv[n], a[n], b[n]
            for _ in range(nsteps):
                xs, ys, ps, qs = x, y, p, q
                kx = np.empty(4)
                ky = np.empty(4)
                kp = np.empty(4)
                kq = np.empty(4)
                for stage in range(4):
                    if stage == 0:
                        cx, cp, cq = xs, ps, qs
                    elif stage == 1:
                        cx, cp, cq = xs + 0.5 * dt * kx[0], ps + 0.5 * dt * kp[0], qs + 0.5 * dt * kq[0]
                    elif stage == 2:
                        cx, cp, cq = xs + 0.5 * dt * kx[1], ps + 0.5 * dt * kp[1], qs + 0.5 * dt * kq[1]
                    else:
                        cx, cp, cq = xs + dt * kx[2], ps + dt * kp[2], qs + dt * kq[2]
                    rho = _table_jit(rho_tab, cx, tab_t0, tab_dt, ntab, u_periodic)
                    rho1 = _table_jit(rho1_tab, cx, tab_t0, tab_dt, ntab, u_periodic)
                    kx[stage] = cp
                    ky[stage] = cq
                    kp[stage] = rho * rho1 * cq * cq
                    kq[stage] = -2.0 * (rho1 / rho) * cp * cq
                x = xs + dt / 6.0 * (kx[0] + 2 * kx[1] + 2 * kx[2] + kx[3])
                y = ys + dt / 6.0 * (ky[0] + 2 * ky[1] + 2 * ky[2] + ky[3])
                p = ps + dt / 6.0 * (kp[0] + 2 * kp[1] + 2 * kp[2] + kp[3])
                q = qs + dt / 6.0 * (kq[0] + 2 * kq[1] + 2 * kq[2] + kq[3])
                if not u_periodic:
                    if x < t_lo or x > t_hi:
                        exited[n] = True
                        x = min(max(x, t_lo), t_hi)
            uu[n], vv[n], a[n], b[n] = x, y, p, q
        return uu, vv, a, b, exited


USE_NUMBA = _HAVE_NUMBA and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"

if USE_NUMBA:
    interp2d = interp2d_numba
    scatter_bilinear = scatter_bilinear_numba
    geodesic_rk4 = geodesic_rk4_numba
else:
    interp2d = interp2d_numpy
    scatter_bilinear = scatter_bilinear_numpy
    geodesic_rk4 = geodesic_rk4_numpy


def interp_field(chart, values, pu, pv):
    """Interpolate chart-grid samples at scattered points (periodicity-aware)."""
    g = chart.grid
    pu = np.ascontiguousarray(np.asarray(pu, dtype=float).ravel())
    pv = np.ascontiguousarray(np.asarray(pv, dtype=float).ravel())
    return interp2d(
        np.ascontiguousarray(values, dtype=float), pu, pv,
        g.u_range[0], g.du, g.nu, g.u_periodic,
        g.v_range[0], g.dv, g.nv, g.v_periodic,
    )
