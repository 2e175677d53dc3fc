"""Solution-generating transformation ``R(tau, mu) -> R*(zeta, kappa)``.

The characteristic pair is built by line integration of

    zeta_tau = (Rdot^2 + R^2 R'^2)/2,   zeta_mu = Rdot R',
    kappa_tau = R^2 zeta_mu,            kappa_mu = zeta_tau,

from an anchor node.  The pair map ``(tau, mu) -> (zeta, kappa)`` is then inverted
by damped Newton iteration on a target grid, and ``R* = R o (tau, mu)``.

Two kinds of source are supported.  A catalog entry is integrated with
Gauss-Legendre quadrature cell by cell, so the pair can be evaluated at any
point with exact partials; this also makes ``R*`` itself an analytic entry.
A sampled Field2 is differentiated numerically, integrated with the
trapezoid rule and interpolated bicubically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree
from shapely.geometry import Point, Polygon, box

from .catalog import CatalogEntry, CatalogError, Partials
from .grid import Field2, Grid2, diff_array
from .perturb import delta_prime_ratio, numeric_mode_fit, star_amplitude_ratio, star_exponents
from .residual import EquationId, ResidualError, convergence_ladder, residual

GAUSS_NODES = 8
LEG_NODES = 4
NEWTON_MAXIT = 50
NEWTON_STEPTOL = 1e-12
NEWTON_RESTOL = 1e-10
TARGET_FILL = 0.8

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (GAUSS_NODES, LEG_NODES)}


class TransformError(ValueError):
    """Invalid input: wrong role, grid or anchor."""


class GateError(TransformError):
    """The source does not satisfy the light-cone equation closely enough."""


class TransformNumericalError(TransformError):
    """Null regions, folds or failed inversion."""


# --------------------------------------------------------------------------- integrands


def _integrands_from_partials(R, Rt, Rm):
    zt = 0.5 * (Rt**2 + R**2 * Rm**2)
    zm = Rt * Rm
    return zt, zm, R**2 * zm, zt


def _entry_partials(entry: CatalogEntry, x, y) -> Partials:
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return entry.evaluator(x, y, params=entry.params)["R"]


def _reference_pair(mode, tau, mu):
    """First-order characteristic pair of a mode about the hyperboloid."""
    zeta = -mu**2 / tau**3
    kappa = mu**3 / tau**4
    if mode is not None:
        a, b, delta = mode
        if delta:
            dp = delta * float(delta_prime_ratio(a, b))
            zeta = zeta + 2 * dp * tau ** (a - 2) * mu ** (b + 1)
            kappa = kappa + 2 * dp * (a - 2) / (b + 2) * tau ** (a - 3) * mu ** (b + 2)
    return float(zeta), float(kappa)


# --------------------------------------------------------------------------- forward maps


class _AnalyticForward:
    """Pair map of a catalog entry, by cumulative Gauss-Legendre quadrature."""

    def __init__(self, entry: CatalogEntry, grid: Grid2, anchor_index, anchor_values):
        self.entry = entry
        self.grid = grid
        self.x, self.y = grid.x, grid.y
        i0, j0 = anchor_index
        z0, k0 = anchor_values
        # row j0 along x, then every column along y
        dz_row, dk_row = self._cells_x(self.x[:-1], self.x[1:], np.full(grid.ax.n - 1, self.y[j0]))
        zr = np.concatenate([[0.0], np.cumsum(dz_row)])
        kr = np.concatenate([[0.0], np.cumsum(dk_row)])
        zr, kr = zr - zr[i0] + z0, kr - kr[i0] + k0
        X = np.repeat(self.x[:, None], grid.ay.n - 1, axis=1)
        lo = np.repeat(self.y[None, :-1], grid.ax.n, axis=0)
        hi = np.repeat(self.y[None, 1:], grid.ax.n, axis=0)
        dzc, dkc = self._cells_y(X, lo, hi)
        zc = np.concatenate([np.zeros((grid.ax.n, 1)), np.cumsum(dzc, axis=1)], axis=1)
        kc = np.concatenate([np.zeros((grid.ax.n, 1)), np.cumsum(dkc, axis=1)], axis=1)
        self.zeta_nodes = zc - zc[:, j0:j0 + 1] + zr[:, None]
        self.kappa_nodes = kc - kc[:, j0:j0 + 1] + kr[:, None]

    def integrands(self, x, y):
        p = _entry_partials(self.entry, x, y)
        return _integrands_from_partials(p.f, p.fx, p.fy)

    def _gl(self, a, b, fixed, along_x, nodes=GAUSS_NODES):
        # integrals of (zeta, kappa) increments from a to b; arrays broadcast
        gx, gw = _GL[nodes]
        mid = (a + b) / 2
        half = (b - a) / 2
        s = mid[..., None] + half[..., None] * gx
        f = np.broadcast_to(fixed[..., None], s.shape)
        if along_x:
            zt, _zm, kt, _km = self.integrands(s, f)
            dz, dk = zt, kt
        else:
            _zt, zm, _kt, km = self.integrands(f, s)
            dz, dk = zm, km
        return half * (dz @ gw), half * (dk @ gw)

    def _cells_x(self, a, b, y):
        return self._gl(a, b, y, True)

    def _cells_y(self, x, a, b):
        return self._gl(a, b, x, False)

    def nearest(self, x, y):
        g = self.grid
        i = np.clip(np.rint((x - g.ax.lo) / g.ax.h), 0, g.ax.n - 1).astype(int)
        j = np.clip(np.rint((y - g.ay.lo) / g.ay.h), 0, g.ay.n - 1).astype(int)
        return i, j

    def __call__(self, x, y):
        """(zeta, kappa, zeta_x, zeta_y, kappa_x, kappa_y) at arbitrary points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i, j = self.nearest(x, y)
        xi, yj = self.x[i], self.y[j]
        # legs are at most half a cell long, so fewer nodes suffice
        dz1, dk1 = self._gl(xi, x, yj, True, LEG_NODES)
        dz2, dk2 = self._gl(yj, y, x, False, LEG_NODES)
        zt, zm, kt, km = self.integrands(x, y)
        return (self.zeta_nodes[i, j] + dz1 + dz2, self.kappa_nodes[i, j] + dk1 + dk2,
                zt, zm, kt, km)


class _SplineForward:
    """Bicubic interpolant of sampled pair fields."""

    def __init__(self, grid: Grid2, zeta: np.ndarray, kappa: np.ndarray):
        self.grid = grid
        self.sz = RectBivariateSpline(grid.x, grid.y, zeta, kx=3, ky=3, s=0)
        self.sk = RectBivariateSpline(grid.x, grid.y, kappa, kx=3, ky=3, s=0)
        self.zeta_nodes = zeta
        self.kappa_nodes = kappa

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (self.sz.ev(x, y), self.sk.ev(x, y), self.sz.ev(x, y, dx=1), self.sz.ev(x, y, dy=1),
                self.sk.ev(x, y, dx=1), self.sk.ev(x, y, dy=1))


def _trapezoid_pair(grid: Grid2, zt, zm, kt, km, anchor_index, anchor_values):
    """Trapezoid integration along both path orders; returns both results."""
    hx, hy = grid.ax.h, grid.ay.h
    i0, j0 = anchor_index

    def cum(f, h, axis, start):
        seg = 0.5 * h * (np.take(f, range(1, f.shape[axis]), axis=axis)
                         + np.take(f, range(0, f.shape[axis] - 1), axis=axis))
        c = np.concatenate([np.zeros_like(np.take(f, [0], axis=axis)), np.cumsum(seg, axis=axis)],
                           axis=axis)
        return c - np.take(c, [start], axis=axis)

    out = []
    for fx, fy, v0 in ((zt, zm, anchor_values[0]), (kt, km, anchor_values[1])):
        # x first along row j0, then y along every column
        a = cum(fx[:, j0:j0 + 1], hx, 0, i0) + cum(fy, hy, 1, j0)
        # y first along column i0, then x along every row
        b = cum(fy[i0:i0 + 1, :], hy, 1, j0) + cum(fx, hx, 0, i0)
        out.append((a + v0, b + v0))
    return out


# --------------------------------------------------------------------------- char pair


@dataclass
class CharPair:
    """Characteristic fields of a source radius on its grid."""

    grid: Grid2
    zeta: Field2
    kappa: Field2
    jacobian: Field2
    lagrangian: Field2
    path_defect: float
    anchor: tuple[float, float, float, float]
    source: object = field(repr=False)
    forward: Callable = field(repr=False)
    radius: Callable = field(repr=False)

    @property
    def analytic(self) -> bool:
        return isinstance(self.source, CatalogEntry)

    def jacobian_defect(self, step: float = 1e-5, stride: int = 1) -> float:
        """Max relative gap between the numerical Jacobian of the pair map and
        ``((Rdot^2 - R^2 R'^2)/2)^2``, over interior nodes."""
        g = self.grid
        X, Y = g.mesh()
        sl = (slice(1, -1, stride), slice(1, -1, stride))
        if self.analytic:
            x, y = X[sl], Y[sl]
            zp, kp = self.forward(x + step, y)[:2]
            zm_, km_ = self.forward(x - step, y)[:2]
            zq, kq = self.forward(x, y + step)[:2]
            zr, kr = self.forward(x, y - step)[:2]
            z_x, k_x = (zp - zm_) / (2 * step), (kp - km_) / (2 * step)
            z_y, k_y = (zq - zr) / (2 * step), (kq - kr) / (2 * step)
            J = z_x * k_y - z_y * k_x
            lag = self.lagrangian.values[sl]
        else:
            zv, kv = self.zeta.values, self.kappa.values
            J = (diff_array(zv, g.ax.h, 0, 1) * diff_array(kv, g.ay.h, 1, 1)
                 - diff_array(zv, g.ay.h, 1, 1) * diff_array(kv, g.ax.h, 0, 1))[sl]
            lag = self.lagrangian.values[sl]
        target = (lag / 2) ** 2
        return float(np.max(np.abs(J - target) / np.abs(J)))


def _radius_partials_on(source, grid: Grid2):
    if isinstance(source, CatalogEntry):
        try:
            p = source.partials_on(grid)["R"]
        except (CatalogError, KeyError) as exc:
            raise TransformError(str(exc)) from exc
        return p.f, p.fx, p.fy
    R = source.values
    return R, diff_array(R, grid.ax.h, 0, 1), diff_array(R, grid.ay.h, 1, 1)


def _check_lagrangian(lag: np.ndarray, tol: float = 1e-10) -> None:
    lo, hi = float(np.min(lag)), float(np.max(lag))
    scale = max(abs(lo), abs(hi))
    if lo * hi <= 0 or min(abs(lo), abs(hi)) < tol * scale:
        raise TransformNumericalError(
            "Rdot^2 - R^2 R'^2 vanishes or changes sign on the grid (null region); "
            "the pair map is not invertible there")


def build_char_pair(source, grid: Grid2 | None = None, anchor=None, *, gate_tol: float | None = None,
                    check_residual: bool = True) -> CharPair:
    """Characteristic fields zeta, kappa of a radius R(tau, mu).

    Parameters
    ----------
    source : CatalogEntry or Field2
        An ``R_of_tau_mu`` entry (any axis names) or sampled radius.
    grid : Grid2, optional
        Defaults to the entry's transform grid, then its default grid.
    anchor : tuple, optional
        ``(i, j, zeta0, kappa0)`` node indices and values, or
        ``(tau0, mu0, zeta0, kappa0)`` coordinates of a grid node.  By default
        the corner node carries the first-order reference values of the
        entry's mode (the bare hyperboloid values if it has none).
    gate_tol : float, optional
        Relative light-cone residual accepted before integrating
        (1e-8 for entries, 1e-3 for sampled fields).
    """
    if isinstance(source, CatalogEntry):
        if source.role != "R_of_tau_mu":
            raise TransformError(f"transform needs an R(tau, mu) entry, got role {source.role}")
        grid = grid or source.transform_grid or source.default_grid
        analytic = True
    elif isinstance(source, Field2):
        grid = grid or source.grid
        if grid != source.grid:
            raise TransformError("field source lives on a different grid")
        analytic = False
    else:
        raise TransformError(f"unsupported transform source {type(source).__name__}")

    if check_residual:
        tol = gate_tol if gate_tol is not None else (1e-8 if analytic else 1e-3)
        try:
            rep = residual(EquationId.EQ3_lightcone, source, grid, check_degeneracy=False)
        except ResidualError as exc:
            raise TransformError(str(exc)) from exc
        if rep.max_relative > tol:
            raise GateError(
                f"source fails the light-cone residual gate: {rep.max_relative:.3e} > {tol:.1e}")

    R, Rt, Rm = _radius_partials_on(source, grid)
    lag = Rt**2 - R**2 * Rm**2
    if not np.all(np.isfinite(lag)):
        raise TransformNumericalError("non-finite integrand on the grid")
    zt, zm, kt, km = _integrands_from_partials(R, Rt, Rm)

    # anchor
    if anchor is None:
        i0, j0 = 0, 0
        mode = source.mode(source.params) if analytic and source.mode else None
        z0, k0 = _reference_pair(mode, grid.x[0], grid.y[0])
    else:
        a0, a1, z0, k0 = anchor
        if isinstance(a0, (int, np.integer)) and isinstance(a1, (int, np.integer)):
            i0, j0 = int(a0), int(a1)
        else:
            i0 = int(np.argmin(np.abs(grid.x - a0)))
            j0 = int(np.argmin(np.abs(grid.y - a1)))
            if not (math.isclose(grid.x[i0], a0, abs_tol=1e-9 * (1 + abs(a0)))
                    and math.isclose(grid.y[j0], a1, abs_tol=1e-9 * (1 + abs(a1)))):
                raise TransformError("anchor must be a grid node")
    anchor_t = (float(grid.x[i0]), float(grid.y[j0]), float(z0), float(k0))

    (za, zb), (ka, kb) = _trapezoid_pair(grid, zt, zm, kt, km, (i0, j0), (z0, k0))
    path_defect = float(max(np.max(np.abs(za - zb)), np.max(np.abs(ka - kb))))

    if analytic:
        fwd = _AnalyticForward(source, grid, (i0, j0), (z0, k0))
        zeta, kappa = fwd.zeta_nodes, fwd.kappa_nodes

        def radius(x, y, _e=source):
            return _entry_partials(_e, x, y).f
    else:
        zeta, kappa = (za + zb) / 2, (ka + kb) / 2
        fwd = _SplineForward(grid, zeta, kappa)
        spline_R = RectBivariateSpline(grid.x, grid.y, R, kx=3, ky=3, s=0)

        def radius(x, y, _s=spline_R):
            return _s.ev(x, y)

    J = zt * km - zm * kt
    return CharPair(grid=grid, zeta=Field2(grid, zeta), kappa=Field2(grid, kappa),
                    jacobian=Field2(grid, J), lagrangian=Field2(grid, lag), path_defect=path_defect,
                    anchor=anchor_t, source=source, forward=fwd, radius=radius)


# --------------------------------------------------------------------------- inversion


def hyperboloid_inverse(Z, K):
    """Closed-form inverse of the unperturbed pair map (it is its own inverse)."""
    return -K**2 / Z**3, K**3 / Z**4


def _newton(fwd, Z, K, t, m, maxit=NEWTON_MAXIT, steptol=NEWTON_STEPTOL):
    """Damped Newton for ``fwd(t, m)[:2] = (Z, K)``, vectorized over points."""
    shape = np.shape(Z)
    Z = np.ravel(Z)
    K = np.ravel(K)
    t = np.ravel(t).astype(float)
    m = np.ravel(m).astype(float)
    with np.errstate(all="ignore"):
        cur = list(fwd(t, m))
        active = np.arange(t.size)
        for _ in range(maxit):
            if active.size == 0:
                break
            tt, mm, ZZ, KK = t[active], m[active], Z[active], K[active]
            z, k, zt, zm, kt, km = (c[active] for c in cur)
            Fz, Fk = z - ZZ, k - KK
            norm0 = np.hypot(Fz, Fk)
            det = zt * km - zm * kt
            dt = (km * Fz - zm * Fk) / det
            dm = (-kt * Fz + zt * Fk) / det
            lam = np.ones_like(tt)
            nt, nm = tt - dt, mm - dm
            new = list(fwd(nt, nm))
            for _h in range(12):
                worse = ~(np.hypot(new[0] - ZZ, new[1] - KK) <= norm0) & (norm0 > 0)
                if not worse.any():
                    break
                lam = np.where(worse, lam / 2, lam)
                w = np.nonzero(worse)[0]
                nt[w] = tt[w] - lam[w] * dt[w]
                nm[w] = mm[w] - lam[w] * dm[w]
                part = fwd(nt[w], nm[w])
                for c, pc in zip(new, part):
                    c[w] = pc
            step = np.hypot(nt - tt, nm - mm)
            bad = ~np.isfinite(step) | ~np.isfinite(new[0]) | ~np.isfinite(new[1])
            keep = ~bad
            t[active[keep]] = nt[keep]
            m[active[keep]] = nm[keep]
            for c, nc in zip(cur, new):
                c[active[keep]] = nc[keep]
            done = bad | (step <= steptol * (1 + np.abs(nt) + np.abs(nm)))
            active = active[~done]
        res = np.hypot(cur[0] - Z, cur[1] - K) / (1 + np.abs(Z) + np.abs(K))
    return t.reshape(shape), m.reshape(shape), res.reshape(shape)


@dataclass
class InverseMap:
    """Preimages ``tau(zeta, kappa), mu(zeta, kappa)`` on a target grid."""

    target: Grid2
    tau: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    converged: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    pair: CharPair = field(repr=False)

    @property
    def failures(self) -> int:
        return int(np.count_nonzero(~self.converged))

    def require_converged(self) -> None:
        if self.failures:
            raise TransformNumericalError(f"Newton inversion failed at {self.failures} target points")

    def tau_field(self) -> Field2:
        self.require_converged()
        return Field2(self.target, self.tau)

    def mu_field(self) -> Field2:
        self.require_converged()
        return Field2(self.target, self.mu)


def _inside_source(grid: Grid2, t, m, slack: float = 1e-9):
    return ((t >= grid.ax.lo - slack) & (t <= grid.ax.hi + slack)
            & (m >= grid.ay.lo - slack) & (m <= grid.ay.hi + slack))


def _solve_points(pair: CharPair, Z: np.ndarray, K: np.ndarray, restol: float = NEWTON_RESTOL):
    with np.errstate(all="ignore"):
        t0, m0 = hyperboloid_inverse(Z, K)
    bad_seed = ~np.isfinite(t0) | ~np.isfinite(m0) | ~_inside_source(pair.grid, t0, m0, 0.25)
    tree = _node_tree(pair)
    if bad_seed.any():
        t0, m0 = _tree_seed(pair, tree, Z, K, t0, m0, bad_seed)
    t, m, res = _newton(pair.forward, Z, K, t0, m0)
    ok = (res <= restol) & _inside_source(pair.grid, t, m)
    if not ok.all():
        retry = ~ok
        ts, ms = _tree_seed(pair, tree, Z, K, t0.copy(), m0.copy(), retry)
        t2, m2, r2 = _newton(pair.forward, Z[retry], K[retry], ts[retry], ms[retry])
        t[retry], m[retry], res[retry] = t2, m2, r2
        ok = (res <= restol) & _inside_source(pair.grid, t, m)
    return t, m, res, ok


def _node_tree(pair: CharPair):
    cached = getattr(pair, "_tree", None)
    if cached is None:
        pts = np.column_stack([pair.zeta.values.ravel(), pair.kappa.values.ravel()])
        cached = cKDTree(pts)
        object.__setattr__(pair, "_tree", cached)
    return cached


def _tree_seed(pair, tree, Z, K, t0, m0, mask):
    _, idx = tree.query(np.column_stack([Z[mask], K[mask]]))
    X, Y = pair.grid.mesh()
    t0 = t0.copy()
    m0 = m0.copy()
    t0[mask] = X.ravel()[idx]
    m0[mask] = Y.ravel()[idx]
    return t0, m0


def image_polygon(pair: CharPair) -> Polygon:
    z, k = pair.zeta.values, pair.kappa.values
    ring = np.concatenate([
        np.column_stack([z[:, 0], k[:, 0]]),
        np.column_stack([z[-1, 1:], k[-1, 1:]]),
        np.column_stack([z[-2::-1, -1], k[-2::-1, -1]]),
        np.column_stack([z[0, -2:0:-1], k[0, -2:0:-1]]),
    ])
    poly = Polygon(ring)
    if not poly.is_valid:
        raise TransformNumericalError("image of the source rectangle folds over itself")
    return poly


def fit_target_grid(pair: CharPair, n: int | None = None, fill: float = TARGET_FILL,
                    names: tuple[str, str] = ("zeta", "kappa")) -> Grid2:
    """Axis-aligned rectangle inscribed in the image of the source rectangle.

    The rectangle is centered at the image of the source center; its aspect
    ratio maximizes the inscribed area, and it is then shrunk by ``fill``
    about the center.
    """
    poly = image_polygon(pair)
    g = pair.grid
    cz, ck = (float(v[0]) for v in pair.forward(np.array([(g.ax.lo + g.ax.hi) / 2]),
                                                np.array([(g.ay.lo + g.ay.hi) / 2]))[:2])
    if not poly.contains(Point(cz, ck)):
        raise TransformNumericalError("image of the source center is not inside the image region")
    minz, mink, maxz, maxk = poly.bounds
    wz, wk = maxz - minz, maxk - mink

    def largest(wz_, wk_):
        lo, hi = 0.0, 1.0
        for _ in range(40):
            s = (lo + hi) / 2
            if poly.contains(box(cz - s * wz_ / 2, ck - s * wk_ / 2, cz + s * wz_ / 2, ck + s * wk_ / 2)):
                lo = s
            else:
                hi = s
        return lo

    best = (0.0, wz, wk)
    for r in np.geomspace(1e-2, 1e2, 41):
        wz_, wk_ = wz * math.sqrt(r), wk / math.sqrt(r)
        s = largest(wz_, wk_)
        if s * s * wz_ * wk_ > best[0]:
            best = (s * s * wz_ * wk_, s * wz_, s * wk_)
    _, dz, dk = best
    dz, dk = dz * fill, dk * fill
    if dz <= 0 or dk <= 0:
        raise TransformNumericalError("no inscribed target rectangle around the image center")
    n = n or g.ax.n
    return Grid2.make(names, (cz - dz / 2, cz + dz / 2, n), (ck - dk / 2, ck + dk / 2, n))


def invert(pair: CharPair, target: Grid2 | None = None, restol: float = NEWTON_RESTOL) -> InverseMap:
    """Newton inversion of the pair map at every node of ``target``.

    Raises if the Lagrangian degenerates on the source grid or the target
    rectangle leaves the image of the source rectangle; per-point failures
    are recorded in ``converged``.
    """
    _check_lagrangian(pair.lagrangian.values)
    target = target or fit_target_grid(pair)
    poly = image_polygon(pair)
    rect = box(target.ax.lo, target.ay.lo, target.ax.hi, target.ay.hi)
    if not poly.buffer(1e-12 * max(1.0, poly.length)).contains(rect):
        raise TransformNumericalError("target grid reaches outside the image of the source rectangle")
    Z, K = target.mesh()
    t, m, res, ok = _solve_points(pair, Z, K, restol)
    return InverseMap(target=target, tau=t, mu=m, converged=ok, residual=res, pair=pair)


def pushforward(inv: InverseMap) -> Field2:
    """``R*`` on the target grid, ``R*(zeta, kappa) = R(tau(zeta, kappa), mu(zeta, kappa))``."""
    inv.require_converged()
    return Field2(inv.target, inv.pair.radius(inv.tau, inv.mu))


# --------------------------------------------------------------------------- R* as an entry


def pushed_entry(pair: CharPair, target: Grid2 | None = None, name: str | None = None) -> CatalogEntry:
    """``R*`` as an analytic entry on the (zeta, kappa) axes.

    Values come from Newton inversion at the requested points; partials
    follow from the inverse function theorem,
    ``R*_zeta = 2 Rdot / D`` and ``R*_kappa = -2 R' / D`` with
    ``D = Rdot^2 - R^2 R'^2``, and their chain-rule derivatives.
    """
    if not pair.analytic:
        raise TransformError("pushed entries need an analytic source")
    src: CatalogEntry = pair.source
    target = target or fit_target_grid(pair)

    def evaluate(Z, K, params):
        Z = np.asarray(Z, dtype=float)
        K = np.asarray(K, dtype=float)
        shape = np.broadcast(Z, K).shape
        Zf = np.broadcast_to(Z, shape).ravel()
        Kf = np.broadcast_to(K, shape).ravel()
        t, m, _res, ok = _solve_points(pair, Zf, Kf)
        t = np.where(ok, t, np.nan)
        m = np.where(ok, m, np.nan)
        p = _entry_partials(src, t, m)
        vals = _pushed_partials(p)
        return {"R": Partials(*(v.reshape(shape) for v in vals))}

    mode = None
    if src.mode is not None:
        a, b, d = src.mode(src.params)
        if d:
            a_s, b_s = star_exponents(a, b)
            ratio = float(star_amplitude_ratio(a, b))
            mode = (lambda p, _m=(int(a_s), int(b_s), d * ratio): _m)
    # base sign flips: the star amplitude multiplies -sqrt(2)
    entry = CatalogEntry(
        name=name or f"{src.name}*", role="R_of_tau_mu", paper_eq=src.paper_eq, evaluator=evaluate,
        params={}, components=("R",), default_grid=target, axis_names=target.names,
        description=f"transformed {src.name}", mode=mode, transform_grid=target)
    return entry


def _pushed_partials(p: Partials):
    R, Rt, Rm, Rtt, Rtm, Rmm = p.f, p.fx, p.fy, p.fxx, p.fxy, p.fyy
    with np.errstate(all="ignore"):
        D = Rt**2 - R**2 * Rm**2
        Dt = 2 * Rt * Rtt - 2 * R * Rt * Rm**2 - 2 * R**2 * Rm * Rtm
        Dm = 2 * Rt * Rtm - 2 * R * Rm**3 - 2 * R**2 * Rm * Rmm
        zt = 0.5 * (Rt**2 + R**2 * Rm**2)
        zm = Rt * Rm
        kt = R**2 * zm
        km = zt
        J = zt * km - zm * kt
        # inverse Jacobian d(tau, mu)/d(zeta, kappa)
        t_z, t_k = km / J, -zm / J
        m_z, m_k = -kt / J, zt / J
        A = 2 * Rt / D
        B = -2 * Rm / D
        A_t = 2 * Rtt / D - 2 * Rt * Dt / D**2
        A_m = 2 * Rtm / D - 2 * Rt * Dm / D**2
        B_t = -2 * Rtm / D + 2 * Rm * Dt / D**2
        B_m = -2 * Rmm / D + 2 * Rm * Dm / D**2
        return (R, A, B, A_t * t_z + A_m * m_z, A_t * t_k + A_m * m_k, B_t * t_k + B_m * m_k)


# --------------------------------------------------------------------------- pipeline


@dataclass
class TransformResult:
    pair: CharPair
    inverse: InverseMap
    rstar: Field2 | None
    entry: CatalogEntry | None
    report: dict

    def to_json(self) -> str:
        return json.dumps(self.report)


def rstar_convergence(rstar_source, target: Grid2, rungs: int = 3, coarse_n: int = 33):
    """FD residual ladder of R* on nested target grids (coarsest ``coarse_n``)."""
    coarse = Grid2.make(target.names, (target.ax.lo, target.ax.hi, coarse_n),
                        (target.ay.lo, target.ay.hi, coarse_n))
    return convergence_ladder(EquationId.EQ3_lightcone, rstar_source, coarse, rungs=rungs)


def transform(source, grid: Grid2 | None = None, target: Grid2 | None = None, *, fit: bool = False,
              anchor=None, ladder: bool = True, jacobian_stride: int = 1) -> TransformResult:
    """Run the full pipeline and assemble the report."""
    pair = build_char_pair(source, grid, anchor)
    inv = invert(pair, target)
    report = {
        "source": source.name if isinstance(source, CatalogEntry) else "field",
        "grid": pair.grid.spec(),
        "target_grid": inv.target.spec(),
        "jacobian_defect": pair.jacobian_defect(stride=jacobian_stride),
        "path_defect": pair.path_defect,
        "newton_failures": inv.failures,
        "residual_of_Rstar": None,
        "fit": None,
    }
    rstar = pushforward(inv) if inv.failures == 0 else None
    entry = pushed_entry(pair, inv.target) if pair.analytic else None
    if ladder and rstar is not None:
        src = entry if entry is not None else None
        if src is not None:
            conv = rstar_convergence(src, inv.target)
            report["residual_of_Rstar"] = {
                "max_residual": [r.max_residual for r in conv.reports],
                "ratios": conv.ratios, "passed": conv.passed, "exact": conv.exact}
        else:
            rep = residual(EquationId.EQ3_lightcone, rstar)
            report["residual_of_Rstar"] = {"max_residual": [rep.max_residual],
                                           "max_relative": rep.max_relative}
    if fit and rstar is not None:
        mf = numeric_mode_fit(rstar, base_sign=-_base_sign(pair))
        report["fit"] = {"alpha": mf.alpha, "beta": mf.beta, "delta": mf.delta,
                         "alpha_stderr": mf.alpha_stderr, "beta_stderr": mf.beta_stderr}
    return TransformResult(pair, inv, rstar, entry, report)


def _base_sign(pair: CharPair) -> int:
    R = pair.radius(np.array([pair.grid.x[0]]), np.array([pair.grid.y[0]]))
    return 1 if float(R[0]) > 0 else -1


@dataclass
class InvolutionReport:
    max_error: float
    common_grid: str
    first: dict
    second: dict
    rstar_star: Field2 = field(repr=False)

    def as_dict(self) -> dict:
        return {"max_error": self.max_error, "common_grid": self.common_grid,
                "first": self.first, "second": self.second}


def involution_check(source: CatalogEntry, grid: Grid2 | None = None, n: int | None = None
                     ) -> InvolutionReport:
    """Apply the transformation twice and compare ``R**`` with ``R``.

    The second transformation is anchored at the preimage of its first
    target node, which fixes the additive constants so that the second pair
    reproduces the original coordinates.
    """
    pair1 = build_char_pair(source, grid)
    target1 = fit_target_grid(pair1, n=n)
    inv1 = invert(pair1, target1)
    inv1.require_converged()
    rstar = pushed_entry(pair1, target1)
    anchor = (0, 0, float(inv1.tau[0, 0]), float(inv1.mu[0, 0]))
    pair2 = build_char_pair(rstar, target1, anchor, check_residual=False)
    inv2 = invert(pair2, fit_target_grid(pair2, n=n, names=pair1.grid.names))
    inv2.require_converged()
    rss = pushforward(inv2)
    common = inv2.target
    X, Y = common.mesh()
    if not _inside_source(pair1.grid, X, Y).all():
        raise TransformNumericalError("second image leaves the original domain; no common region")
    direct = _entry_partials(source, X, Y).f
    err = float(np.max(np.abs(rss.values - direct)))
    first = {"target_grid": target1.spec(), "newton_failures": inv1.failures}
    second = {"target_grid": common.spec(), "newton_failures": inv2.failures}
    return InvolutionReport(err, common.spec(), first, second, rss)


__all__ = [
    "CharPair", "InverseMap", "TransformError", "TransformResult", "InvolutionReport",
    "build_char_pair", "invert", "pushforward", "pushed_entry", "fit_target_grid", "image_polygon",
    "hyperboloid_inverse", "transform", "involution_check", "rstar_convergence",
]
