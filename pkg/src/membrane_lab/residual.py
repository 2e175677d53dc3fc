"""Residuals of the governing equations for catalog entries and sampled fields.

Every equation is written once in terms of the value and partials of its
unknowns.  The partials come either from a catalog entry's analytic
evaluator or from second-order finite differences of sampled fields, so the
two paths share a single formula per equation.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .catalog import CatalogEntry, CatalogError, Partials, Partials1
from .grid import Field1, Field2, Grid1, Grid2, GridError, diff_array

DEGENERACY_THRESHOLD = 1e-8
SOLUTION_TOL = 1e-8
ORDER_WINDOW = (3.2, 4.8)


class ResidualError(ValueError):
    pass


class NonFiniteResidualError(ResidualError):
    pass


class EquationId(enum.Enum):
    EQ3_lightcone = "EQ3_lightcone"
    EQ31_s = "EQ31_s"
    EQ32_tau = "EQ32_tau"
    EQ33_zeta = "EQ33_zeta"
    EQ53_g = "EQ53_g"
    EQ57_wave = "EQ57_wave"
    EQ62_r = "EQ62_r"
    EQ64_wave_external = "EQ64_wave_external"
    EQ67_system = "EQ67_system"
    EQ68_graph = "EQ68_graph"
    EQ69_g_graph = "EQ69_g_graph"
    EQ70_h_graph = "EQ70_h_graph"
    EQ59_constraints = "EQ59_constraints"

    @classmethod
    def parse(cls, text: str | EquationId) -> EquationId:
        if isinstance(text, cls):
            return text
        key = str(text).strip()
        for eq in cls:
            if key in (eq.value, eq.value.lower(), eq.value.split("_")[0], eq.value.split("_")[0].lower()):
                return eq
        raise ResidualError(f"unknown equation {text!r}")


# --------------------------------------------------------------------------- formulas
# Each formula takes a dict of Partials (x, y are the grid axes, or Partials1 for
# profiles) plus the coordinate arrays and returns a list of (residual, terms)
# pairs; the terms are used for the local scale sum |term|.


def _lightcone(p, X, Y):
    R = p["R"]
    terms = [R.fxx, -R.f * R.fy**2, -R.f**2 * R.fyy]
    return [terms]


def _s_form(p, X, Y):
    s = p["s"]
    terms = [s.f * s.fxx * s.fy**2, s.f * s.fyy * s.fx**2, -2 * s.f * s.fx * s.fy * s.fxy,
             2 * s.f * s.fxy, -2 * s.fx * s.fy, np.ones_like(s.f)]
    return [terms]


def _hodograph(p, X, Y):
    # same expression for tau(zeta, R) and zeta(tau, R); Y is the radius
    F = p["F"]
    terms = [F.fxx, -2 * F.fx * F.fyy, 2 * F.fy * F.fxy, -F.fy**3 / Y, -2 * F.fy * F.fx / Y]
    return [terms]


def _g_form(p, X, Y):
    g = p["g"]
    terms = [g.fxx * g.fy**2, g.fyy * g.fx**2, -2 * g.fxy * g.fx * g.fy, 4 * g.f * g.fxy,
             -4 * g.fx * g.fy, 2 * g.f]
    return [terms]


def _wave(p, X, Y):
    Z, R = p["Z"], p["R"]
    return [[Z.fxx, -2 * R.f * R.fy * Z.fy, -R.f**2 * Z.fyy]]


def _r_orthonormal(p, X, Y):
    r, z = p["r"], p["z"]
    return [[r.fxx, -r.f**2 * r.fyy, -r.f * r.fy**2, r.f * z.fy**2]]


def _constraints(p, X, Y):
    r, z = p["r"], p["z"]
    c1 = [r.fx * r.fy, z.fx * z.fy]
    c2 = [r.fx**2, z.fx**2, r.f**2 * r.fy**2, r.f**2 * z.fy**2, -np.ones_like(r.f)]
    return [c1, c2]


def _graph_r(p, X, Y):
    r = p["r"]
    terms = [r.fxx, r.fxx * r.fy**2, -r.fyy, r.fyy * r.fx**2, -2 * r.fx * r.fy * r.fxy,
             1 / r.f, -r.fx**2 / r.f, r.fy**2 / r.f]
    return [terms]


def _graph_g(p, X, Y=None):
    g = p["g"]
    gd, gdd = g.d1, g.d2
    terms = [g.f * gdd * (1 + g.f**2 - X**2), -gd**2, (g.f - X * gd) ** 2, np.ones_like(g.f)]
    return [terms]


def _graph_h(p, X, Y=None):
    h = p["h"]
    hd, hdd = h.d1, h.d2
    lead = (2 * h.f * hdd - hd**2) * (1 + h.f - X**2)
    terms = [lead, -hd**2, 4 * h.f, (2 * h.f - X * hd) ** 2]
    return [terms]


def _system67(p, U, Y=None):
    s, t = p["s"], p["stilde"]
    a = s.f - 4 * U * s.d1
    b = t.f - 4 * U * t.d1
    e1 = [s.d1 * a, t.d1 * b]
    e2 = [a**2, b**2, 4 * U * s.f**2 * s.d1**2, 4 * U * s.f**2 * t.d1**2, -np.ones_like(U)]
    return [e1, e2]


@dataclass(frozen=True)
class _EqDef:
    formula: Callable
    slots: tuple[str, ...]
    roles: Mapping[str, Mapping[str, str]]     # role -> slot -> component
    dim: int = 2


_EQUATIONS: dict[EquationId, _EqDef] = {
    EquationId.EQ3_lightcone: _EqDef(_lightcone, ("R",), {"R_of_tau_mu": {"R": "R"}}),
    EquationId.EQ31_s: _EqDef(_s_form, ("s",), {"s_of_tau_zeta": {"s": "s"}}),
    EquationId.EQ32_tau: _EqDef(_hodograph, ("F",), {"tau_of_zeta_R": {"F": "tau"}}),
    EquationId.EQ33_zeta: _EqDef(_hodograph, ("F",), {"zeta_of_tau_R": {"F": "zeta"}}),
    EquationId.EQ53_g: _EqDef(_g_form, ("g",), {"s_of_tau_zeta": {"g": "g"}}),
    EquationId.EQ57_wave: _EqDef(_wave, ("Z", "R"), {"R_of_tau_mu": {"Z": "zeta", "R": "R"},
                                                    "rz_of_t_phi": {"Z": "z", "R": "r"}}),
    EquationId.EQ62_r: _EqDef(_r_orthonormal, ("r", "z"), {"rz_of_t_phi": {"r": "r", "z": "z"}}),
    EquationId.EQ64_wave_external: _EqDef(_wave, ("Z", "R"),
                                          {"rz_of_t_phi": {"Z": "zeta", "R": "r"},
                                           "R_of_tau_mu": {"Z": "zeta", "R": "R"}}),
    EquationId.EQ67_system: _EqDef(_system67, ("s", "stilde"),
                                   {"profile_1d": {"s": "s", "stilde": "stilde"}}, dim=1),
    EquationId.EQ68_graph: _EqDef(_graph_r, ("r",), {"r_of_t_z": {"r": "r"}}),
    EquationId.EQ69_g_graph: _EqDef(_graph_g, ("g",), {"profile_1d": {"g": "g"}}, dim=1),
    EquationId.EQ70_h_graph: _EqDef(_graph_h, ("h",), {"profile_1d": {"h": "h"}}, dim=1),
    EquationId.EQ59_constraints: _EqDef(_constraints, ("r", "z"), {"rz_of_t_phi": {"r": "r", "z": "z"}}),
}


def equation_slots(eq: EquationId | str) -> tuple[str, ...]:
    return _EQUATIONS[EquationId.parse(eq)].slots


# --------------------------------------------------------------------------- report


@dataclass
class ResidualReport:
    eq: EquationId
    entry: str | None
    grid: str
    max_residual: float
    l2_residual: float
    max_relative: float
    degenerate: bool = False
    method: str = "analytic"
    h_refinement_ratio: float | None = None
    parts: list[float] = field(default_factory=list)
    field: np.ndarray | None = field(default=None, repr=False)

    def passes(self, tol: float = SOLUTION_TOL) -> bool:
        return self.max_relative <= tol

    def as_dict(self) -> dict:
        return {
            "eq": self.eq.value,
            "entry": self.entry,
            "grid": self.grid,
            "method": self.method,
            "max_residual": float(self.max_residual),
            "l2_residual": float(self.l2_residual),
            "max_relative": float(self.max_relative),
            "parts": [float(v) for v in self.parts],
            "degenerate": bool(self.degenerate),
            "h_refinement_ratio": None if self.h_refinement_ratio is None
            else float(self.h_refinement_ratio),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


# --------------------------------------------------------------------------- partials


def _fd_partials2(values: np.ndarray, grid: Grid2) -> Partials:
    hx, hy = grid.ax.h, grid.ay.h
    fx = diff_array(values, hx, 0, 1)
    return Partials(values, fx, diff_array(values, hy, 1, 1), diff_array(values, hx, 0, 2),
                    diff_array(fx, hy, 1, 1), diff_array(values, hy, 1, 2))


def _fd_partials1(values: np.ndarray, grid: Grid1) -> Partials1:
    h = grid.h
    return Partials1(values, diff_array(values, h, 0, 1), diff_array(values, h, 0, 2))


def _g_from_s(s):
    # g = s^2/2 and its partials by the chain rule
    if isinstance(s, Partials1):
        return Partials1(s.f**2 / 2, s.f * s.d1, s.d1**2 + s.f * s.d2)
    return Partials(s.f**2 / 2, s.f * s.fx, s.f * s.fy, s.fx**2 + s.f * s.fxx,
                    s.fx * s.fy + s.f * s.fxy, s.fy**2 + s.f * s.fyy)


def _as_field_map(source) -> dict:
    if isinstance(source, (Field1, Field2)):
        return {None: source}
    if isinstance(source, Mapping):
        return dict(source)
    raise ResidualError(f"unsupported residual source {type(source).__name__}")


def _collect(eq: EquationId, source, grid, method: str, components: Mapping[str, str] | None):
    """Return (slot -> partials, entry name, role)."""
    spec = _EQUATIONS[eq]
    if isinstance(source, CatalogEntry):
        if spec.roles and source.role not in spec.roles:
            raise ResidualError(
                f"{eq.value} needs a source with role in {sorted(spec.roles)}, "
                f"entry {source.name} has role {source.role}")
        binding = dict(spec.roles[source.role])
        if components:
            binding.update(components)
        try:
            if method == "analytic":
                parts = source.partials_on(grid)
            elif method == "fd":
                raw = source.partials_on(grid)
                fd = _fd_partials1 if isinstance(grid, Grid1) else _fd_partials2
                parts = {k: fd(v.f, grid) for k, v in raw.items()}
            else:
                raise ResidualError(f"unknown method {method!r}")
        except CatalogError as exc:
            raise ResidualError(str(exc)) from exc
        out = {}
        for slot in spec.slots:
            comp = binding[slot]
            if comp in parts:
                out[slot] = parts[comp]
            elif slot == "g" and "s" in parts:
                out[slot] = _g_from_s(parts["s"])
            else:
                raise ResidualError(f"entry {source.name} has no component {comp!r} for {eq.value}")
        return out, source.name, source.role

    if method == "analytic":
        method = "fd"
    fields = _as_field_map(source)
    out = {}
    for slot in spec.slots:
        key = (components or {}).get(slot, slot)
        fld = fields.get(key, fields.get(None) if len(spec.slots) == 1 else None)
        if fld is None and slot == "g" and "s" in fields:
            f_s = fields["s"]
            fd = _fd_partials1 if isinstance(f_s, Field1) else _fd_partials2
            out[slot] = _g_from_s(fd(f_s.values, f_s.grid))
            continue
        if fld is None:
            raise ResidualError(f"{eq.value} needs a field for {slot!r}")
        if fld.grid != grid:
            raise ResidualError("field grid differs from residual grid")
        out[slot] = (_fd_partials1 if isinstance(fld, Field1) else _fd_partials2)(fld.values, grid)
    return out, None, None


def _coords(grid):
    if isinstance(grid, Grid1):
        return grid.points, None
    return grid.mesh()


def _interior(arr: np.ndarray, grid, margin: int = 1) -> np.ndarray:
    if isinstance(grid, Grid1):
        return arr[margin:-margin]
    return arr[grid.interior(margin)]


def _cell(grid) -> float:
    if isinstance(grid, Grid1):
        return grid.h
    return grid.ax.h * grid.ay.h


def residual(eq: EquationId | str, source, grid: Grid1 | Grid2 | None = None, *,
             method: str = "analytic", components: Mapping[str, str] | None = None,
             check_degeneracy: bool = True) -> ResidualReport:
    """Defect of one governing equation for a catalog entry or sampled field(s).

    Parameters
    ----------
    eq : EquationId or str
    source : CatalogEntry, Field2, Field1, or mapping slot -> field
        Sampled fields are always differentiated numerically.
    grid : Grid1 or Grid2, optional
        Defaults to the entry's default grid or the field's own grid.
    method : {"analytic", "fd"}
        Partials from the closed form or from finite differences of samples.
    components : mapping, optional
        Override which entry component feeds each equation slot.

    Returns
    -------
    ResidualReport
        Norms are taken over interior nodes (one node in from each edge).
    """
    eq = EquationId.parse(eq)
    spec = _EQUATIONS[eq]
    if grid is None:
        if isinstance(source, CatalogEntry):
            grid = source.default_grid
        else:
            grid = next(iter(_as_field_map(source).values())).grid
    if grid is None:
        raise ResidualError("no grid given and the source has no default grid")
    if (spec.dim == 1) != isinstance(grid, Grid1):
        raise ResidualError(f"{eq.value} is {'an ODE' if spec.dim == 1 else 'a PDE'}; grid mismatch")
    if isinstance(source, CatalogEntry) and spec.dim == 1 and source.role != "profile_1d":
        raise ResidualError(f"{eq.value} needs a profile entry")

    parts, name, role = _collect(eq, source, grid, method, components)
    X, Y = _coords(grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        groups = spec.formula(parts, X, Y)
        maxes, l2s, rels, fields_ = [], [], [], []
        for terms in groups:
            res = sum(terms)
            scale = sum(np.abs(t) for t in terms)
            res_i = _interior(res, grid)
            if not np.all(np.isfinite(res_i)):
                raise NonFiniteResidualError(f"{eq.value} residual is non-finite on the grid")
            scale_i = _interior(scale, grid)
            maxes.append(float(np.max(np.abs(res_i))))
            l2s.append(float(np.sqrt(_cell(grid) * np.sum(res_i**2))))
            rels.append(float(np.max(np.abs(res_i) / np.maximum(scale_i, np.finfo(float).tiny))))
            fields_.append(res)
    degenerate = False
    if check_degeneracy and role in _DEGENERACY_ROLES:
        try:
            ind = degeneracy(source, grid, role)
            degenerate = _flag(ind)
        except ResidualError:
            pass
    return ResidualReport(eq=eq, entry=name, grid=grid.spec(), max_residual=max(maxes),
                          l2_residual=float(np.sqrt(sum(v * v for v in l2s))),
                          max_relative=max(rels), degenerate=degenerate,
                          method=method if isinstance(source, CatalogEntry) else "fd",
                          parts=maxes, field=fields_[0] if len(fields_) == 1 else np.max(
                              np.abs(np.stack(fields_)), axis=0))


# --------------------------------------------------------------------------- degeneracy


def _deg_hodograph(p, X, Y):
    return p.fy**2 + 2 * p.fx


def _deg_lagrangian(p, X, Y):
    return p.fx**2 - p.f**2 * p.fy**2


def _deg_s(p, X, Y):
    return 1 - 2 * p.fx * p.fy


def _deg_graph_r(p, X, Y):
    return 1 - p.fx**2 + p.fy**2


def _deg_graph_1d(p, X, Y):
    # h = g^2 profile; 1 - rdot^2 + r'^2 with r = z g(t/z)
    g = np.sqrt(p.f)
    gd = p.d1 / (2 * g)
    return 1 - gd**2 + (g - X * gd) ** 2


_DEGENERACY_ROLES: dict[str, tuple[str, Callable]] = {
    "zeta_of_tau_R": ("zeta", _deg_hodograph),
    "tau_of_zeta_R": ("tau", _deg_hodograph),
    "R_of_tau_mu": ("R", _deg_lagrangian),
    "s_of_tau_zeta": ("s", _deg_s),
    "r_of_t_z": ("r", _deg_graph_r),
    "profile_1d": ("h", _deg_graph_1d),
}


def _flag(indicator) -> bool:
    vals = indicator.values
    return bool(np.min(np.abs(vals)) < DEGENERACY_THRESHOLD)


def degeneracy(source, grid: Grid1 | Grid2 | None = None, role: str | None = None):
    """Indicator whose vanishing marks a null (non-minimal) configuration.

    For ``zeta(tau, R)`` this is ``zeta_R^2 + 2 zeta_tau`` (likewise for
    ``tau(zeta, R)``); for ``R(tau, mu)`` it is ``Rdot^2 - R^2 R'^2``; for
    graphs ``r(t, z)`` it is ``1 - rdot^2 + r'^2``.  Returns a Field2 (or
    Field1 for profiles); the configuration is flagged when the indicator's
    magnitude drops below ``DEGENERACY_THRESHOLD`` anywhere.
    """
    if isinstance(source, CatalogEntry):
        role = role or source.role
        if role != source.role:
            raise ResidualError(f"entry {source.name} has role {source.role}, not {role}")
        grid = grid or source.default_grid
    if role not in _DEGENERACY_ROLES:
        raise ResidualError(f"no degeneracy indicator for role {role!r}")
    comp, fn = _DEGENERACY_ROLES[role]
    if isinstance(source, CatalogEntry):
        try:
            parts = source.partials_on(grid)
        except CatalogError as exc:
            raise ResidualError(str(exc)) from exc
        if comp not in parts:
            raise ResidualError(f"entry {source.name} has no component {comp!r}")
        p = parts[comp]
    else:
        fld = source if isinstance(source, (Field1, Field2)) else _as_field_map(source)[comp]
        grid = fld.grid
        p = (_fd_partials1 if isinstance(fld, Field1) else _fd_partials2)(fld.values, grid)
    X, Y = _coords(grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        ind = fn(p, X, Y)
    ind = np.where(np.isfinite(ind), ind, 0.0)
    return Field1(grid, ind) if isinstance(grid, Grid1) else Field2(grid, ind)


def is_degenerate(source, grid=None, role=None) -> bool:
    return _flag(degeneracy(source, grid, role))


# --------------------------------------------------------------------------- symmetries


def scaled_entry(entry: CatalogEntry, alpha: float, gamma: float) -> CatalogEntry:
    """``F~(x, R) = alpha F(alpha gamma^2 x, gamma R)`` for the hodograph roles."""
    if entry.role not in ("zeta_of_tau_R", "tau_of_zeta_R"):
        raise ResidualError("scaling symmetry acts on zeta(tau, R) or tau(zeta, R) entries")
    base = entry.evaluator
    sx, sy = alpha * gamma**2, gamma

    def evaluate(x, y, params):
        out = {}
        for k, p in base(sx * x, sy * y, params=params).items():
            out[k] = Partials(alpha * p.f, alpha * sx * p.fx, alpha * sy * p.fy,
                              alpha * sx * sx * p.fxx, alpha * sx * sy * p.fxy,
                              alpha * sy * sy * p.fyy)
        return out

    return replace(entry, name=f"{entry.name}~scaled", evaluator=evaluate, singular_loci=())


def reflected_entry(entry: CatalogEntry, e: float, a: float, b: float,
                    swap: bool = False, tol: float = 1e-12) -> CatalogEntry:
    """``s~(tau, zeta) = e s(a tau, b zeta)`` (optionally with tau, zeta swapped).

    Raises unless ``e^2 a b = 1``.
    """
    if entry.role != "s_of_tau_zeta":
        raise ResidualError("the s-form symmetry acts on s(tau, zeta) entries")
    if abs(e * e * a * b - 1.0) > tol:
        raise ResidualError(f"symmetry needs e^2 a b = 1, got {e * e * a * b!r}")
    base = entry.evaluator

    def evaluate(x, y, params):
        if swap:
            x, y = y, x
        out = {}
        for k, p in base(a * x, b * y, params=params).items():
            fx, fy = e * a * p.fx, e * b * p.fy
            fxx, fxy, fyy = e * a * a * p.fxx, e * a * b * p.fxy, e * b * b * p.fyy
            if swap:
                fx, fy, fxx, fyy = fy, fx, fyy, fxx
            out[k] = Partials(e * p.f, fx, fy, fxx, fxy, fyy)
        return out

    return replace(entry, name=f"{entry.name}~sym", evaluator=evaluate, singular_loci=())


def symmetry_check(eq: EquationId | str, entry: CatalogEntry, params: Mapping[str, float] | None = None,
                   grid: Grid2 | None = None, method: str = "analytic") -> ResidualReport:
    """Residual of the symmetry image of ``entry``.

    ``params`` holds ``alpha, gamma`` for the hodograph scaling (EQ32/EQ33),
    or ``e, a, b`` (and optionally ``swap``) for the s-form (EQ31/EQ53).
    Missing keys default to the identity.
    """
    eq = EquationId.parse(eq)
    params = dict(params or {})
    grid = grid or entry.default_grid
    if eq in (EquationId.EQ32_tau, EquationId.EQ33_zeta):
        unknown = set(params) - {"alpha", "gamma"}
        if unknown:
            raise ResidualError(f"unexpected symmetry parameters {sorted(unknown)}")
        alpha, gamma = params.get("alpha", 1.0), params.get("gamma", 1.0)
        if alpha == 0 or gamma == 0:
            raise ResidualError("scaling parameters must be non-zero")
        image = entry if alpha == 1 and gamma == 1 else scaled_entry(entry, alpha, gamma)
    elif eq in (EquationId.EQ31_s, EquationId.EQ53_g):
        unknown = set(params) - {"e", "a", "b", "swap"}
        if unknown:
            raise ResidualError(f"unexpected symmetry parameters {sorted(unknown)}")
        e, a, b = params.get("e", 1.0), params.get("a", 1.0), params.get("b", 1.0)
        swap = bool(params.get("swap", False))
        if e == a == b == 1 and not swap:
            image = entry
        else:
            image = reflected_entry(entry, e, a, b, swap)
    else:
        raise ResidualError(f"no symmetry registered for {eq.value}")
    rep = residual(eq, image, grid, method=method)
    rep.entry = entry.name
    return rep


# --------------------------------------------------------------------------- implicit P(y)


def p_of_y(y):
    """Positive root of ``P^2 (P^2 + 1) = 2 y^2``."""
    y = np.asarray(y)
    return np.sqrt((np.sqrt(1 + 8 * y * y) - 1) / 2)


def implicit_P_check(y_lo: float, y_hi: float, n: int = 201) -> float:
    """Largest defect among the implicit relations for P(y) on [y_lo, y_hi].

    Checks the quartic itself, the slope from implicit differentiation against
    a complex-step derivative of the closed-form root, and ``s~^2 - P^2 = 1``
    with ``s~`` evaluated at ``u = y^2``.
    """
    if not 0 < y_lo < y_hi:
        raise ResidualError("implicit_P_check needs 0 < y_lo < y_hi")
    y = np.linspace(y_lo, y_hi, n)
    P = p_of_y(y)
    quartic = np.abs(P**2 * (P**2 + 1) - 2 * y**2) / np.maximum(2 * y**2, 1e-300)
    hstep = 1e-30
    dP = np.imag(p_of_y(y + 1j * hstep)) / hstep
    slope = np.abs(dP - 2 * y / (P * (2 * P**2 + 1))) / np.maximum(np.abs(dP), 1e-300)
    stilde = np.sqrt((np.sqrt(1 + 8 * y**2) + 1) / 2)
    pair = np.abs(stilde**2 - P**2 - 1)
    return float(max(quartic.max(), slope.max(), pair.max()))


# --------------------------------------------------------------------------- convergence


@dataclass
class ConvergenceResult:
    reports: list[ResidualReport]
    ratios: list[float]
    exact: bool
    passed: bool
    window: tuple[float, float] = ORDER_WINDOW

    def as_dict(self) -> dict:
        return {"reports": [r.as_dict() for r in self.reports],
                "ratios": [float(r) for r in self.ratios],
                "exact": self.exact, "passed": self.passed, "window": list(self.window)}


def convergence_ladder(eq: EquationId | str, source, grid: Grid1 | Grid2 | None = None,
                       rungs: int = 3, components: Mapping[str, str] | None = None,
                       floor: float = 1e-11, window: tuple[float, float] = ORDER_WINDOW,
                       sampler: Callable | None = None) -> ConvergenceResult:
    """FD residual on successively halved grids, with refinement ratios.

    ``source`` is a catalog entry, or ``sampler(grid)`` builds the field(s)
    for each rung.  When every rung's relative residual is already below
    ``floor`` the discretization is exact for this solution (e.g. a quadratic
    profile) and the ratios carry only rounding; such ladders pass as exact.
    The floor of each rung is raised to the rounding level of a second
    difference, ``4 eps / h**2`` with ``h`` the rung's finest spacing.
    """
    eq = EquationId.parse(eq)
    if grid is None:
        grid = source.default_grid if isinstance(source, CatalogEntry) else None
    if grid is None:
        raise ResidualError("convergence ladder needs a coarsest grid")
    reports = []
    g = grid
    for _ in range(rungs):
        src = sampler(g) if sampler is not None else source
        reports.append(residual(eq, src, g, method="fd", components=components,
                                check_degeneracy=False))
        g = g.refined()
    ratios = []
    for coarse, fine in zip(reports, reports[1:]):
        ratio = coarse.max_residual / fine.max_residual if fine.max_residual > 0 else np.inf
        ratios.append(float(ratio))
        fine.h_refinement_ratio = float(ratio)
    exact = all(r.max_relative < max(floor, _roundoff_floor(g_))
                for r, g_ in zip(reports, _rung_grids(grid, rungs)))
    passed = exact or all(window[0] <= r <= window[1] for r in ratios)
    return ConvergenceResult(reports, ratios, exact, passed, window)


def _rung_grids(grid, rungs):
    out = [grid]
    for _ in range(rungs - 1):
        out.append(out[-1].refined())
    return out


def _roundoff_floor(grid) -> float:
    axes = (grid.ax, grid.ay) if isinstance(grid, Grid2) else (grid.axis,)
    h = min(a.h for a in axes)
    return 4 * np.finfo(float).eps / h**2


def fields_from_entry(entry: CatalogEntry, components: Sequence[str] | None = None) -> Callable:
    """Sampler for ``convergence_ladder`` that samples entry components as fields."""
    comps = tuple(components or entry.components)

    def sampler(grid):
        parts = entry.partials_on(grid)
        cls = Field1 if isinstance(grid, Grid1) else Field2
        return {c: cls(grid, parts[c].f) for c in comps}

    return sampler


__all__ = [
    "EquationId", "ResidualReport", "ResidualError", "ConvergenceResult", "residual", "degeneracy",
    "is_degenerate", "symmetry_check", "implicit_P_check", "p_of_y", "convergence_ladder",
    "fields_from_entry", "scaled_entry", "reflected_entry", "equation_slots",
    "DEGENERACY_THRESHOLD", "GridError",
]
