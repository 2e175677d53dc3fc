"""Closed-form membrane solutions with analytic first and second partials.

Entries are written as sympy expressions in the role's two parameters and
compiled once to numpy callables returning the value and every partial up to
second order.  Custom entries (e.g. numerically integrated families) supply
their own evaluator with the same return convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import sympy as sp

from .grid import Grid1, Grid2, GridError

ROLE_AXES: dict[str, tuple[str, ...]] = {
    "R_of_tau_mu": ("tau", "mu"),
    "zeta_of_tau_R": ("tau", "R"),
    "tau_of_zeta_R": ("zeta", "R"),
    "s_of_tau_zeta": ("tau", "zeta"),
    "rz_of_t_phi": ("t", "phi"),
    "r_of_t_z": ("t", "z"),
    "profile_1d": ("x",),
}

ROLE_PRIMARY = {
    "R_of_tau_mu": "R",
    "zeta_of_tau_R": "zeta",
    "tau_of_zeta_R": "tau",
    "s_of_tau_zeta": "s",
    "rz_of_t_phi": "r",
    "r_of_t_z": "r",
    "profile_1d": "h",
}


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Partials:
    """Value and partials of a two-parameter function; x, y are the role's axes."""

    f: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    fxx: np.ndarray
    fxy: np.ndarray
    fyy: np.ndarray


@dataclass(frozen=True)
class Partials1:
    f: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


Evaluator = Callable[..., dict]


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    role: str
    paper_eq: str
    evaluator: Evaluator = field(repr=False, compare=False)
    params: Mapping[str, float] = field(default_factory=dict)
    singular_loci: tuple[tuple[str, str], ...] = ()
    components: tuple[str, ...] = ()
    default_grid: Grid2 | Grid1 | None = field(default=None, repr=False, compare=False)
    description: str = ""
    axis_names: tuple[str, ...] | None = None
    # perturbative content relative to +-sqrt(2) mu/tau: params -> (alpha, beta, delta)
    mode: Callable[[Mapping[str, float]], tuple[int, int, float]] | None = field(
        default=None, repr=False, compare=False)
    transform_grid: Grid2 | None = field(default=None, repr=False, compare=False)

    @property
    def axes(self) -> tuple[str, ...]:
        return self.axis_names or ROLE_AXES[self.role]

    @property
    def primary(self) -> str:
        return self.components[0] if self.components else ROLE_PRIMARY[self.role]

    @property
    def is_1d(self) -> bool:
        return len(self.axes) == 1

    def with_params(self, **kw: float) -> CatalogEntry:
        unknown = set(kw) - set(self.params)
        if unknown:
            raise CatalogError(f"{self.name} has no parameters {sorted(unknown)}")
        return replace(self, params={**self.params, **{k: float(v) for k, v in kw.items()}})

    def _loci(self) -> list[tuple[str, float]]:
        out = []
        for axis, expr in self.singular_loci:
            out.append((axis, float(sp.sympify(expr).subs(self.params))))
        return out

    def check_domain(self, grid: Grid1 | Grid2) -> None:
        if tuple(grid.names) != tuple(self.axes):
            raise CatalogError(f"entry {self.name} lives on axes {self.axes}, grid has {grid.names}")
        axes = [grid.axis] if isinstance(grid, Grid1) else [grid.ax, grid.ay]
        for axis, value in self._loci():
            for a in axes:
                if a.name == axis and a.lo <= value <= a.hi:
                    raise CatalogError(
                        f"grid axis {axis} in [{a.lo}, {a.hi}] meets singular locus {axis} = {value}")

    def partials(self, x, y=None) -> dict:
        x = np.asarray(x, dtype=float)
        args = (x,) if self.is_1d else (x, np.asarray(y, dtype=float))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.evaluator(*args, params=self.params)
        for name, part in out.items():
            for arr in vars(part).values():
                if not np.all(np.isfinite(arr)):
                    raise CatalogError(f"{self.name}.{name} is non-finite on the requested points")
        return out

    def partials_on(self, grid: Grid1 | Grid2) -> dict:
        self.check_domain(grid)
        if isinstance(grid, Grid1):
            return self.partials(grid.points)
        return self.partials(*grid.mesh())

    def value(self, x, y=None, component: str | None = None) -> np.ndarray:
        return self.partials(x, y)[component or self.primary].f

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "role": self.role,
            "paper_eq": self.paper_eq,
            "parameters": dict(self.params),
            "singular_loci": [f"{a} = {v}" for a, v in self.singular_loci],
        }

    def to_json(self) -> str:
        return json.dumps(self.metadata())


# --------------------------------------------------------------------------- sympy


def _full(v, like: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=float) + np.zeros_like(like)


@lru_cache(maxsize=None)
def _compile(axes: tuple[str, ...], exprs: tuple[tuple[str, str], ...],
             param_names: tuple[str, ...]):
    syms = [sp.Symbol(a, real=True) for a in axes]
    psyms = [sp.Symbol(p, real=True) for p in param_names]
    local = {a: s for a, s in zip(axes, syms)} | {p: s for p, s in zip(param_names, psyms)}
    compiled = {}
    for name, text in exprs:
        e = sp.sympify(text, locals=local)
        if len(syms) == 2:
            x, y = syms
            ders = [e, sp.diff(e, x), sp.diff(e, y), sp.diff(e, x, 2), sp.diff(e, x, y),
                    sp.diff(e, y, 2)]
        else:
            (x,) = syms
            ders = [e, sp.diff(e, x), sp.diff(e, x, 2)]
        compiled[name] = sp.lambdify(syms + psyms, ders, modules="numpy")
    return compiled


def sympy_evaluator(axes: tuple[str, ...], exprs: dict[str, str]) -> Evaluator:
    items = tuple(exprs.items())

    def evaluate(*coords, params):
        names = tuple(sorted(params))
        fns = _compile(axes, items, names)
        pvals = [params[n] for n in names]
        out = {}
        for comp, fn in fns.items():
            vals = [_full(v, coords[0]) for v in fn(*coords, *pvals)]
            out[comp] = Partials(*vals) if len(coords) == 2 else Partials1(*vals)
        return out

    return evaluate


def _entry(name, role, paper_eq, exprs, params, loci=(), grid=None, description="",
           axes=None, mode=None, transform_grid=None) -> CatalogEntry:
    axes_t = tuple(axes or ROLE_AXES[role])
    return CatalogEntry(
        name=name, role=role, paper_eq=paper_eq,
        evaluator=sympy_evaluator(axes_t, exprs),
        params={k: float(v) for k, v in params.items()},
        singular_loci=tuple(loci), components=tuple(exprs), default_grid=grid,
        description=description, axis_names=axes, mode=mode, transform_grid=transform_grid,
    )


def _g2(names, x, y, n=129) -> Grid2:
    return Grid2.make(names, (x[0], x[1], n), (y[0], y[1], n))


_S2 = math.sqrt(2.0)
_UNIT = ((1.0, 2.0), (1.0, 2.0))


def _build_registry() -> dict[str, CatalogEntry]:
    lc = ("tau", "mu")
    zr = ("tau", "R")
    entries = [
        _entry("eq7-sqrt", "R_of_tau_mu", "eq7",
               {"R": "sign*sqrt(2)*sqrt(mu**2 + epsilon)/tau",
                "zeta": "-(mu**2 + epsilon/3)/tau**3",
                "kappa": "mu*(mu**2 + epsilon)/tau**4"},
               {"epsilon": 0.3, "sign": 1.0}, loci=[("tau", "0")], grid=_g2(lc, *_UNIT),
               description="level set (t^2+x^2+y^2-z^2)(t+z)^2 = C with C = 16 epsilon/3",
               mode=lambda p: (-1, -1, p["epsilon"] / 2)),
        _entry("eq7-drop", "R_of_tau_mu", "eq7",
               {"R": "sqrt(2)*mu/tau + epsilon*tau**2",
                "zeta": "-mu**2/tau**3 + 2*sqrt(2)*epsilon*mu + epsilon**2*tau**3",
                "kappa": "mu**3/tau**4 + 3*epsilon**2*tau**2*mu"
                         " + 2*sqrt(2)*epsilon**3*tau**5/5"},
               {"epsilon": 0.2}, loci=[("tau", "0")], grid=_g2(lc, *_UNIT),
               description="fast moving sharp drop, C = epsilon/4",
               mode=lambda p: (2, 0, p["epsilon"] / _S2),
               transform_grid=_g2(lc, (0.5, 1.0), (1.0, 2.0))),
        _entry("eq8-hyperboloid-R", "R_of_tau_mu", "eq8",
               {"R": "sign*sqrt(2)*mu/tau", "zeta": "-mu**2/tau**3", "kappa": "mu**3/tau**4"},
               {"sign": 1.0}, loci=[("tau", "0")], grid=_g2(lc, *_UNIT),
               description="moving hyperboloid in light-cone parametrization",
               mode=lambda p: (0, 0, 0.0)),
        _entry("eq8-hyperboloid", "zeta_of_tau_R", "eq8", {"zeta": "-R**2/(2*tau)"}, {},
               loci=[("tau", "0")], grid=_g2(zr, *_UNIT)),
        _entry("eq1-levelset", "zeta_of_tau_R", "eq1", {"zeta": "C/(8*tau**3) - R**2/(2*tau)"},
               {"C": 1.0}, loci=[("tau", "0")], grid=_g2(zr, *_UNIT),
               description="C = 16 epsilon/3 relative to eq7-sqrt"),
        _entry("eq2-drop", "zeta_of_tau_R", "eq2",
               {"zeta": "12*C*R*tau - 24*C**2*tau**3 - R**2/(2*tau)"}, {"C": 0.1},
               loci=[("tau", "0")], grid=_g2(zr, *_UNIT),
               description="C = epsilon/4 relative to eq7-drop"),
        _entry("eq37", "tau_of_zeta_R", "eq37", {"tau": "c/(2*zeta**3) - R**2/(2*zeta)"},
               {"c": 1.0}, loci=[("zeta", "0")], grid=_g2(("zeta", "R"), *_UNIT)),
        _entry("eq38", "tau_of_zeta_R", "eq38", {"tau": "c/2*zeta**5 + R**2/(2*zeta)"},
               {"c": 1.0}, loci=[("zeta", "0")], grid=_g2(("zeta", "R"), *_UNIT)),
        _entry("eq48", "zeta_of_tau_R", "eq48", {"zeta": "c/2*tau**5 + R**2/(2*tau)"},
               {"c": 1.0}, loci=[("tau", "0")], grid=_g2(zr, *_UNIT)),
        _entry("null-shift", "zeta_of_tau_R", "eq48", {"zeta": "R**2/(2*tau) + c"}, {"c": 0.5},
               loci=[("tau", "0")], grid=_g2(zr, *_UNIT),
               description="solves the zeta equation but is null (not a minimal 3-manifold)"),
        _entry("eq49-separable", "zeta_of_tau_R", "eq49",
               {"zeta": "R**2/2/(branch*(tau0 - tau))"}, {"tau0": 0.5, "branch": 1.0},
               loci=[("tau", "tau0")], grid=_g2(zr, *_UNIT),
               description="zeta = R^2 f/2 with the delta = 0 solution of f'' = 2 f^3"),
        _entry("eq51-general", "zeta_of_tau_R", "eq51",
               {"zeta": "R**2/(2*(tau0 - tau)) - C1 + C2/(3*(tau - tau0)**3)"},
               {"tau0": 0.5, "C1": 0.25, "C2": 0.5}, loci=[("tau", "tau0")],
               grid=_g2(zr, *_UNIT),
               description="R^2 D/2 - C1 - C2*int(exp(int 4D)) with D = 1/(tau0 - tau)"),
        _entry("eq60-orthonormal", "rz_of_t_phi", "eq60",
               {"r": "t*sqrt((sqrt(1 + 8*phi**2/t**4) + 1)/2 - 1)",
                "z": "t*sign*sqrt((sqrt(1 + 8*phi**2/t**4) + 1)/2)",
                "zeta": "t - t*sign*sqrt((sqrt(1 + 8*phi**2/t**4) + 1)/2)",
                "t": "t"},
               {"sign": 1.0}, loci=[("t", "0")], grid=_g2(("t", "phi"), *_UNIT),
               description="moving hyperboloid in orthonormal parametrization"),
        _entry("eq66-graph", "profile_1d", "eq66", {"h": "1 - x**2", "g": "sqrt(1 - x**2)"}, {},
               loci=[("x", "1"), ("x", "-1")], grid=Grid1.make("x", 0.0, 0.9, 129)),
        _entry("graph-null", "profile_1d", "eq70", {"h": "x**2 - 1", "g": "sqrt(x**2 - 1)"}, {},
               loci=[("x", "1"), ("x", "-1")], grid=Grid1.make("x", 1.1, 2.0, 129),
               description="unphysical graph solution; the factor 1 - rdot^2 + r'^2 vanishes"),
        _entry("eq66-ansatz", "profile_1d", "eq66",
               {"s": "sqrt((sqrt(1 + 8*u) - 1)/2)", "stilde": "sqrt((sqrt(1 + 8*u) + 1)/2)"}, {},
               grid=Grid1.make("u", 0.1, 1.0, 129), axes=("u",)),
        _entry("eq68-graph-r", "r_of_t_z", "eq66", {"r": "sqrt(z**2 - t**2)"}, {},
               grid=_g2(("t", "z"), (1.0, 2.0), (3.0, 4.0)),
               description="r = z g(t/z) with g^2 = 1 - x^2"),
        _entry("graph-null-r", "r_of_t_z", "eq70", {"r": "sqrt(t**2 - z**2)"}, {},
               grid=_g2(("t", "z"), (3.0, 4.0), (1.0, 2.0))),
        _entry("s-hyperboloid", "s_of_tau_zeta", "eq31", {"s": "sqrt(-2*tau*zeta)"}, {},
               loci=[("tau", "0"), ("zeta", "0")], grid=_g2(("tau", "zeta"), (1.0, 2.0), (-2.0, -1.0))),
        _entry("s-levelset", "s_of_tau_zeta", "eq31", {"s": "sqrt(C/(4*tau**2) - 2*tau*zeta)"},
               {"C": 1.0}, loci=[("tau", "0")],
               grid=_g2(("tau", "zeta"), (1.0, 2.0), (-2.0, -1.0)),
               description="eq1-levelset solved for R = s(tau, zeta)"),
        _entry("s-eq37", "s_of_tau_zeta", "eq37", {"s": "sqrt(c/zeta**2 - 2*tau*zeta)"},
               {"c": 1.0}, loci=[("zeta", "0")],
               grid=_g2(("tau", "zeta"), (1.0, 2.0), (-2.0, -1.0))),
    ]
    return {e.name: e for e in entries}


_REGISTRY = _build_registry()


def list_entries() -> list[tuple[str, str, str]]:
    return [(e.name, e.role, e.paper_eq) for e in _REGISTRY.values()]


def get_entry(name: str, **params: float) -> CatalogEntry:
    try:
        entry = _REGISTRY[name]
    except KeyError:
        raise CatalogError(f"unknown catalog entry {name!r}") from None
    return entry.with_params(**params) if params else entry


def register(entry: CatalogEntry) -> None:
    _REGISTRY[entry.name] = entry


def embed(entry: CatalogEntry, a, b, psi, zeta=None) -> np.ndarray:
    """Spacetime point (t, x, y, z) of the swept 3-manifold.

    For an ``R_of_tau_mu`` entry ``(a, b) = (tau, mu)`` and zeta comes from the
    entry's closed-form companion or the ``zeta`` argument; for a
    ``zeta_of_tau_R`` entry ``(a, b) = (tau, R)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if entry.role == "R_of_tau_mu":
        parts = entry.partials(a, b)
        radius = parts["R"].f
        if zeta is None:
            if "zeta" not in parts:
                raise CatalogError(f"{entry.name}: zeta unavailable; build it with build_char_pair")
            zeta = parts["zeta"].f
    elif entry.role == "zeta_of_tau_R":
        radius = b
        zeta = entry.value(a, b) if zeta is None else zeta
    else:
        raise CatalogError(f"embed needs an R_of_tau_mu or zeta_of_tau_R entry, got {entry.role}")
    zeta = np.asarray(zeta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    return np.stack(np.broadcast_arrays(a + zeta / 2, radius * np.cos(psi),
                                        radius * np.sin(psi), a - zeta / 2), axis=-1)


def series_eq10(epsilon: float, n_terms: int = 3) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Small-epsilon expansion of the level-set radius about sqrt(2) mu/tau.

    Only the first three terms are known in closed form.
    """
    if not 1 <= n_terms <= 3:
        raise CatalogError("series is only specified up to three terms")
    coeffs = (1.0, 0.5, -0.125)

    def radius(tau, mu):
        tau = np.asarray(tau, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if np.any(tau == 0) or np.any(mu == 0):
            raise CatalogError("series needs tau, mu != 0")
        terms = (mu / tau, epsilon / (mu * tau), epsilon**2 / (mu**3 * tau))
        return _S2 * sum(c * t for c, t in zip(coeffs[:n_terms], terms[:n_terms]))

    return radius
