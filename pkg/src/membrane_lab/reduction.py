"""Self-similar reductions of the light-cone equation and their ODE solvers.

Four profile families are supported:

* ``F``: ``R = (mu/tau) f(x)``, ``x = tau^alpha' mu^beta'``, with the log-variable
  form and the Abel equation of the second kind it reduces to;
* ``T``: ``tau = zeta^A T(q)``, ``q = zeta^B R``, ``A + 2B + 1 = 0``;
* ``H``: ``zeta = -(R^2 / 2 tau) h(z)``, ``z = tau^a R^b``;
* ``Graph``: ``r = z g(t/z)`` written for ``h = g^2``.

Each reduced ODE is linear in its highest derivative.  The integrators use
that to solve for the second derivative and stop when its coefficient
vanishes.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly

from .catalog import CatalogEntry, Partials
from .exact import Poly, peval, pgcd, pmul, poly, psub, q, rational_roots, real_roots, to_str
from .grid import Field1, Grid2, diff_array

SINGULAR_TOL = 1e-10


class ReductionError(ValueError):
    pass


class SingularPointError(ReductionError):
    pass


class BlowUpError(ReductionError):
    pass


class Family(enum.Enum):
    F_profile = "F_profile"
    T_profile = "T_profile"
    H_profile = "H_profile"
    GraphProfile = "GraphProfile"


@dataclass(frozen=True)
class ReductionSpec:
    """Similarity ansatz with exact exponents.

    ``p, q`` are ``(alpha', beta')`` for F, ``(A, B)`` for T and ``(a, b)`` for H;
    the graph family has none.
    """

    family: Family
    p: Fraction = Fraction(0)
    q: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "p", q(self.p))
        object.__setattr__(self, "q", q(self.q))
        if self.family is Family.T_profile and self.p + 2 * self.q + 1 != 0:
            raise ReductionError(f"T profile needs A + 2B + 1 = 0, got A={self.p}, B={self.q}")

    @classmethod
    def F(cls, alpha, beta) -> ReductionSpec:
        return cls(Family.F_profile, alpha, beta)

    @classmethod
    def T(cls, A, B) -> ReductionSpec:
        return cls(Family.T_profile, A, B)

    @classmethod
    def H(cls, a, b) -> ReductionSpec:
        return cls(Family.H_profile, a, b)

    @classmethod
    def graph(cls) -> ReductionSpec:
        return cls(Family.GraphProfile)

    @property
    def variable(self) -> str:
        return {Family.F_profile: "x", Family.T_profile: "q", Family.H_profile: "z",
                Family.GraphProfile: "x"}[self.family]

    def terms(self, x, f, f1, f2) -> list:
        """Additive terms of the reduced ODE; their sum is the residual."""
        return _TERMS[self.family](self, x, f, f1, f2)

    def residual(self, x, f, f1, f2):
        return sum(self.terms(x, f, f1, f2))

    def leading(self, x, f, f1):
        """Coefficient of the second derivative."""
        return self.residual(x, f, f1, 1.0) - self.residual(x, f, f1, 0.0)

    def second_derivative(self, x, f, f1, tol: float = SINGULAR_TOL):
        lead = self.leading(x, f, f1)
        rest = self.residual(x, f, f1, 0.0)
        scale = max(1.0, abs(rest))
        if abs(lead) <= tol * scale:
            raise SingularPointError(
                f"leading coefficient of the {self.family.value} ODE vanishes near "
                f"{self.variable} = {x!r} (value {lead!r})")
        return -rest / lead

    def to_dict(self) -> dict:
        return {"family": self.family.value, "p": to_str(self.p), "q": to_str(self.q)}


def _terms_f(spec, x, f, f1, f2):
    a, b = float(spec.p), float(spec.q)
    u = f - a * x * f1                       # f - a' x f'
    du = f1 - a * f1 - a * x * f2
    v = f + b * x * f1                       # f + b' x f'
    dv = f1 + b * f1 + b * x * f2
    return [2 * u, -a * x * du, -b * x * f**2 * dv, -f * v**2]


def _terms_t(spec, q_, T, T1, T2):
    A, B = float(spec.p), float(spec.q)
    return [A * (A - 1) * T, B * (2 * A + B - 1) * T1 * q_, B * B * q_**2 * T2,
            -2 * A * (T2 * T - T1**2), -T1**3 / q_, -2 * T1 * A * T / q_]


def _terms_h(spec, z, h, h1, h2):
    a, b = float(spec.p), float(spec.q)
    P = h - a * z * h1                       # h - a z h'
    dP = h1 - a * h1 - a * z * h2
    S = 2 * h + b * z * h1                   # 2h + b z h'
    dS = 2 * h1 + b * h1 + b * z * h2
    return [a * z * dP, -2 * P, P * S, P * b * z * dS, -S * 2 * P, -S * b * z * dP,
            S**3 / 4, S * P]


def _terms_graph(spec, x, h, h1, h2):
    return [(2 * h * h2 - h1**2) * (1 + h - x**2), -h1**2, 4 * h, (2 * h - x * h1) ** 2]


_TERMS = {Family.F_profile: _terms_f, Family.T_profile: _terms_t, Family.H_profile: _terms_h,
          Family.GraphProfile: _terms_graph}


def log_form_residual(spec: ReductionSpec, u, g, g1, g2):
    """F-family ODE in the variable ``u = ln x`` for ``g(u) = f(e^u)``."""
    if spec.family is not Family.F_profile:
        raise ReductionError("the log form exists for the F family only")
    a, b = float(spec.p), float(spec.q)
    lhs = 2 * g - 3 * a * g1 + a * a * g2
    rhs = g2 * g**2 * b * b + 3 * b * g1 * g**2 + b * b * g * g1**2 + g**3
    return lhs - rhs


# --------------------------------------------------------------------------- profiles


@dataclass
class ProfileState:
    x: float
    value: float
    derivative: float


@dataclass
class ProfileSamples:
    """Sampled profile with first (and optionally second) derivative."""

    x: np.ndarray
    value: np.ndarray
    derivative: np.ndarray
    second: np.ndarray | None = None
    variable: str = "x"

    def state(self, i: int = 0) -> ProfileState:
        return ProfileState(float(self.x[i]), float(self.value[i]), float(self.derivative[i]))

    def to_csv(self) -> str:
        lines = [f"{self.variable},value,derivative"]
        for xv, f, d in zip(self.x, self.value, self.derivative):
            lines.append(f"{xv:.17g},{f:.17g},{d:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> ProfileSamples:
        rows = [ln for ln in text.strip().splitlines() if ln.strip()]
        var = rows[0].split(",")[0]
        data = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
        return cls(data[:, 0], data[:, 1], data[:, 2], variable=var)

    def interpolant(self, spec: ReductionSpec | None = None) -> BPoly:
        """Piecewise quintic (or cubic) Hermite interpolant of the samples."""
        second = self.second
        if second is None and spec is not None:
            second = np.array([spec.second_derivative(x, f, d)
                               for x, f, d in zip(self.x, self.value, self.derivative)])
        cols = [self.value, self.derivative] + ([second] if second is not None else [])
        return BPoly.from_derivatives(self.x, np.stack(cols, axis=1))


@lru_cache(maxsize=None)
def _compile_profile(expr: str, variable: str, names: tuple[str, ...]):
    v = sp.Symbol(variable, real=True)
    syms = {n: sp.Symbol(n, real=True) for n in names}
    e = sp.sympify(expr, locals={variable: v, **syms})
    return sp.lambdify([v, *syms.values()], [e, sp.diff(e, v), sp.diff(e, v, 2)], "numpy")


def analytic_profile(expr: str, x, variable: str = "x", **params: float) -> ProfileSamples:
    """Sample a closed-form profile (sympy syntax) with exact derivatives."""
    names = tuple(sorted(params))
    fn = _compile_profile(expr, variable, names)
    x = np.asarray(x, dtype=float)
    vals = [np.asarray(v, dtype=float) + np.zeros_like(x) for v in fn(x, *[params[n] for n in names])]
    return ProfileSamples(x, vals[0], vals[1], vals[2], variable=variable)


def ode_residual(spec: ReductionSpec, profile, relative: bool = False) -> float:
    """Max defect of the reduced ODE over the interior samples.

    ``profile`` is a ProfileSamples with a second derivative (used as is), a
    ProfileSamples without one or a Field1 (differentiated numerically), or a
    ``profile_1d`` CatalogEntry (analytic partials on its default grid).
    """
    if isinstance(profile, CatalogEntry):
        parts = profile.partials_on(profile.default_grid)
        p = parts[profile.primary]
        x = profile.default_grid.points
        f, f1, f2 = p.f, p.d1, p.d2
        sl = slice(None)
    elif isinstance(profile, Field1):
        x = profile.grid.points
        f = profile.values
        f1 = diff_array(f, profile.grid.h, 0, 1)
        f2 = diff_array(f, profile.grid.h, 0, 2)
        sl = slice(1, -1)
    elif isinstance(profile, ProfileSamples):
        x, f, f1 = profile.x, profile.value, profile.derivative
        if profile.second is not None:
            f2 = profile.second
            sl = slice(None)
        else:
            h = np.diff(x)
            if not np.allclose(h, h[0], rtol=1e-9):
                raise ReductionError("finite differences need uniformly spaced samples")
            f2 = diff_array(f1, h[0], 0, 1)
            sl = slice(1, -1)
    else:
        raise ReductionError(f"unsupported profile type {type(profile).__name__}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = spec.terms(x, f, f1, f2)
        res = sum(terms)[sl]
        if not np.all(np.isfinite(res)):
            raise SingularPointError("reduced ODE residual is non-finite; singular point in interval")
        if relative:
            scale = sum(np.abs(t) for t in terms)[sl]
            return float(np.max(np.abs(res) / np.maximum(scale, np.finfo(float).tiny)))
    return float(np.max(np.abs(res)))


# --------------------------------------------------------------------------- integrator


def _rk4_step(rhs, x, y, h):
    k1 = rhs(x, y)
    k2 = rhs(x + h / 2, y + h / 2 * k1)
    k3 = rhs(x + h / 2, y + h / 2 * k2)
    k4 = rhs(x + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_profile(spec: ReductionSpec, initial: ProfileState, interval: tuple[float, float],
                      step: float = 1e-3, nodes: Sequence[float] | None = None,
                      tol: float = SINGULAR_TOL) -> ProfileSamples:
    """Classical RK4 integration of the reduced ODE.

    Parameters
    ----------
    spec : ReductionSpec
    initial : ProfileState
        Value and derivative at ``interval[0]`` (``initial.x`` must match).
    interval : (start, end)
        May run backwards.
    step : float
        Maximal step; each gap between output nodes is split evenly.
    nodes : sequence of float, optional
        Output abscissae, monotone from start to end.  Defaults to the steps.

    Raises
    ------
    SingularPointError
        If the coefficient of the second derivative vanishes on the way.
    """
    x0, x1 = map(float, interval)
    if not math.isclose(initial.x, x0, rel_tol=0, abs_tol=1e-14):
        raise ReductionError(f"initial state at {initial.x} does not start the interval at {x0}")
    if step <= 0:
        raise ReductionError("step must be positive")
    y = np.array([initial.value, initial.derivative], dtype=float)
    if x1 == x0:
        return ProfileSamples(np.array([x0]), y[:1].copy(), y[1:].copy(),
                              np.array([spec.second_derivative(x0, *y, tol=tol)]), spec.variable)
    if nodes is None:
        n = max(1, int(math.ceil(abs(x1 - x0) / step - 1e-9)))
        nodes = np.linspace(x0, x1, n + 1)
    nodes = np.asarray(nodes, dtype=float)
    if nodes[0] != x0:
        nodes = np.concatenate([[x0], nodes])
    direction = np.sign(x1 - x0)
    if np.any(np.diff(nodes) * direction <= 0):
        raise ReductionError("output nodes must be strictly monotone along the interval")

    def rhs(x, state):
        return np.array([state[1], spec.second_derivative(x, state[0], state[1], tol=tol)])

    out = [y.copy()]
    x = x0
    for target in nodes[1:]:
        gap = target - x
        m = max(1, int(math.ceil(abs(gap) / step - 1e-9)))
        h = gap / m
        for _ in range(m):
            y = _rk4_step(rhs, x, y, h)
            x = x + h
            if not np.all(np.isfinite(y)):
                raise SingularPointError(f"profile became non-finite near {spec.variable} = {x!r}")
        x = target
        out.append(y.copy())
    out = np.array(out)
    second = np.array([spec.second_derivative(xv, f, d, tol=tol) for xv, (f, d) in zip(nodes, out)])
    return ProfileSamples(nodes, out[:, 0], out[:, 1], second, spec.variable)


# --------------------------------------------------------------------------- Abel form


@dataclass(frozen=True)
class AbelForm:
    """``G G' = f2 G^2 + f1 G + f0`` and its canonical ``w w' = F1 w + F0``."""

    spec: ReductionSpec

    @property
    def _ab(self):
        return float(self.spec.p), float(self.spec.q)

    def Q(self, g):
        a, b = self._ab
        return a * a - b * b * np.asarray(g) ** 2

    def check_domain(self, g) -> None:
        Q = self.Q(g)
        if np.any(Q <= 0):
            a, b = self._ab
            raise ReductionError(
                f"canonical Abel form needs alpha'^2 - beta'^2 g^2 > 0; fails for alpha'={a}, beta'={b} "
                f"on g in [{np.min(g)}, {np.max(g)}]")

    def f2(self, g):
        a, b = self._ab
        return b * b * g / self.Q(g)

    def f1(self, g):
        a, b = self._ab
        return 3 * (b * g**2 + a) / self.Q(g)

    def f0(self, g):
        return (g**3 - 2 * g) / self.Q(g)

    def F1(self, g):
        a, b = self._ab
        self.check_domain(g)
        return 3 * (a + b * np.asarray(g) ** 2) / np.sqrt(self.Q(g))

    @staticmethod
    def F0(g):
        g = np.asarray(g)
        return g * (g**2 - 2)

    def w_from_G(self, g, G):
        self.check_domain(g)
        return np.sqrt(self.Q(g)) * G

    def G_from_w(self, g, w):
        self.check_domain(g)
        return w / np.sqrt(self.Q(g))

    def second_kind_residual(self, g, G, dG):
        return G * dG - (self.f2(g) * G**2 + self.f1(g) * G + self.f0(g))

    def canonical_residual(self, g, w, dw):
        return w * dw - (self.F1(g) * w + self.F0(g))


def to_abel(spec: ReductionSpec, g_interval: tuple[float, float] | None = None) -> AbelForm:
    """Abel coefficients of an F-family reduction.

    Raises if ``alpha'^2 - beta'^2 g^2`` is not positive on ``g_interval``.
    """
    if spec.family is not Family.F_profile:
        raise ReductionError("the Abel reduction applies to F profiles")
    form = AbelForm(spec)
    if g_interval is not None:
        form.check_domain(np.linspace(g_interval[0], g_interval[1], 257))
    return form


@dataclass
class AbelRoundTrip:
    g: np.ndarray
    w: np.ndarray
    w_exact: np.ndarray
    x: np.ndarray
    f_exact: np.ndarray
    w_error: float
    f_error: float


def abel_round_trip(spec: ReductionSpec, profile: Callable, x_interval: tuple[float, float],
                    n: int = 65, rtol: float = 1e-12) -> AbelRoundTrip:
    """Map a known profile into the canonical Abel form, integrate, and map back.

    ``profile(x)`` returns ``(f, f')``.  Initial data ``w(g0)`` come from the
    profile at ``x_interval[0]``; the canonical equation is integrated in ``g``
    together with ``u = ln x`` (``du/dg = sqrt(Q)/w``), and the result is
    compared with the profile at ``x = exp(u)``.
    """
    form = to_abel(spec)
    x0, x1 = x_interval
    if x0 <= 0 or x1 <= 0:
        raise ReductionError("the log variable needs x > 0")
    xs = np.linspace(x0, x1, n)
    f, df = (np.asarray(v, dtype=float) for v in profile(xs))
    g = f
    if np.any(np.diff(g) == 0) or not (np.all(np.diff(g) > 0) or np.all(np.diff(g) < 0)):
        raise ReductionError("profile must be strictly monotone to use g as the variable")
    form.check_domain(g)
    G = xs * df
    w_exact = form.w_from_G(g, G)

    def rhs(gv, state):
        w, _u = state
        return [form.F1(gv) + form.F0(gv) / w, np.sqrt(form.Q(gv)) / w]

    sol = solve_ivp(rhs, (g[0], g[-1]), [w_exact[0], math.log(x0)], t_eval=g, method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2)
    if not sol.success:
        raise ReductionError(f"Abel integration failed: {sol.message}")
    w = sol.y[0]
    x_back = np.exp(sol.y[1])
    f_back = np.asarray(profile(x_back)[0], dtype=float)
    return AbelRoundTrip(g=g, w=w, w_exact=w_exact, x=x_back, f_exact=f_back,
                         w_error=float(np.max(np.abs(w - w_exact))),
                         f_error=float(np.max(np.abs(f_back - g))))


def lift_profile(spec: ReductionSpec, samples: ProfileSamples) -> Callable:
    """``R(tau, mu) = (mu/tau) f(tau^alpha' mu^beta')`` from sampled F-profile data."""
    if spec.family is not Family.F_profile:
        raise ReductionError("lifting to R(tau, mu) needs an F profile")
    interp = samples.interpolant(spec)
    a, b = float(spec.p), float(spec.q)
    lo, hi = float(np.min(samples.x)), float(np.max(samples.x))

    def radius(tau, mu):
        x = tau**a * mu**b
        if np.min(x) < lo - 1e-12 or np.max(x) > hi + 1e-12:
            raise ReductionError(f"similarity variable range [{np.min(x)}, {np.max(x)}] exceeds profile data")
        return mu / tau * interp(x)

    return radius


# --------------------------------------------------------------------------- polynomial ansatz

# Each condition maps a monomial d^i e^j to a polynomial in a (low -> high),
# for b = -1.  The reference conditions are the tabulated ones for this ansatz.
_REFERENCE = {
    "plus": [
        {(1, 0): poly([-2, -1, 1])},
        {(0, 1): poly([2, -2, -4]), (2, 0): poly(["3/2"])},
        {(3, 0): poly(["1/4"]), (1, 1): poly([1, -2])},
    ],
    "minus": [
        {(1, 0): poly([1, -5, 1])},
        {(2, 0): poly(["1/4"]), (0, 1): poly([1, "-7/3", "2/3"])},
        {(3, 0): poly(["1/4"]), (1, 1): poly([1, -2])},
    ],
}


@lru_cache(maxsize=None)
def _derived_conditions(form: str) -> tuple:
    """Order-z conditions obtained by substituting the quadratic ansatz into the H ODE."""
    a, d, e, z = sp.symbols("a d e z")
    h0 = 1 if form == "plus" else -1
    h = h0 + d * z + e * z**2
    b = -1
    P = h - a * z * sp.diff(h, z)
    S = 2 * h + b * z * sp.diff(h, z)
    expr = (a * z * sp.diff(P, z) - 2 * P + P * (S + b * z * sp.diff(S, z))
            - S * (2 * P + b * z * sp.diff(P, z)) + S * (S**2 / 4 + P))
    expr = sp.expand(expr)
    out = []
    for order in (1, 2, 3):
        coeff = sp.Poly(expr.coeff(z, order), d, e)
        cond = {}
        for (i, j), c in coeff.terms():
            pa = sp.Poly(c, a).all_coeffs()[::-1]
            cond[(i, j)] = poly(Fraction(int(sp.fraction(x)[0]), int(sp.fraction(x)[1])) for x in pa)
        out.append(cond)
    return tuple(tuple(sorted(c.items())) for c in out)


def ansatz_conditions(form: str, source: str = "reference") -> list[dict]:
    """Conditions at orders z, z^2, z^3 for ``h = +-1 + d z + e z^2`` with b = -1.

    ``source="reference"`` gives the tabulated conditions;
    ``source="derived"`` recomputes them by substitution into the reduced ODE.
    """
    if form not in ("plus", "minus"):
        raise ReductionError(f"ansatz form must be 'plus' or 'minus', got {form!r}")
    if source == "reference":
        return [dict(c) for c in _REFERENCE[form]]
    if source == "derived":
        return [dict(c) for c in _derived_conditions(form)]
    raise ReductionError(f"unknown condition source {source!r}")


@dataclass(frozen=True)
class AnsatzFamily:
    """Solution family ``h = h0 + d z + e z^2``.

    With ``d_zero`` the family is ``d = 0`` and free ``e != 0``; otherwise
    ``d != 0`` is free and ``e = k d^2``.
    """

    form: str
    a: Fraction
    d_zero: bool
    k: Fraction | None = None
    trivial_shift: bool = False

    def to_dict(self) -> dict:
        return {"form": self.form, "a": to_str(self.a), "b": "-1",
                "d": "0" if self.d_zero else "free",
                "e": "free" if self.d_zero else f"{to_str(self.k)}*d^2",
                "trivial_shift": self.trivial_shift}

    def coefficients(self, d: float = 1.0, e: float = 1.0) -> tuple[float, float]:
        if self.d_zero:
            return 0.0, e
        return d, float(self.k) * d * d


def _weight(cond: dict) -> int:
    ws = {i + 2 * j for (i, j) in cond}
    if len(ws) != 1:
        raise ReductionError("ansatz condition is not weighted-homogeneous in (d, e)")
    return ws.pop()


def ansatz_coefficients(form: str, source: str = "reference", exclude_base: bool = True
                        ) -> list[AnsatzFamily]:
    """Exact solution families of the order-by-order ansatz conditions.

    Each condition is weighted-homogeneous (weight 1 for d, 2 for e), so with
    ``d != 0`` and ``e = k d^2`` it becomes ``P0(a) + k P1(a) = 0``; with
    ``d = 0`` only the ``e``-linear parts survive.  The base solution
    ``d = e = 0`` is excluded by default.
    """
    conds = ansatz_conditions(form, source)
    families: list[AnsatzFamily] = []

    # d != 0, e = k d^2: condition of weight w reads P0 + k P1 with P0 on d^w, P1 on d^(w-2) e
    pairs = []
    for c in conds:
        w = _weight(c)
        p0 = c.get((w, 0), ())
        p1 = c.get((w - 2, 1), ()) if w >= 2 else ()
        extra = set(c) - {(w, 0), (w - 2, 1)}
        if extra:
            raise ReductionError(f"unsupported monomials {sorted(extra)} in ansatz condition")
        pairs.append((p0, p1))
    families += _solve_pairs(form, pairs)

    # d = 0: surviving terms are those without d, i.e. e^j with i = 0
    e_polys = [c.get((0, 1), ()) for c in conds if any(j > 0 and i == 0 for (i, j) in c)]
    if e_polys:
        g = ()
        for p in e_polys:
            g = pgcd(g, p) if g else p
        for a in rational_roots(g):
            families.append(AnsatzFamily(form, a, True, None, trivial_shift=(a == Fraction(1, 2))))
    elif not exclude_base:
        raise ReductionError("d = 0 leaves no condition; every a solves")
    return sorted(families, key=lambda fam: (fam.d_zero, fam.a))


def _solve_pairs(form: str, pairs: list[tuple[Poly, Poly]]) -> list[AnsatzFamily]:
    """Common solutions (a, k) of P0_i(a) + k P1_i(a) = 0 over all i."""
    # polynomial in a that every solution must annihilate
    elim: Poly = ()
    for i, (p0, p1) in enumerate(pairs):
        if not p1:
            elim = pgcd(elim, p0) if elim else p0
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            (a0, a1), (b0, b1) = pairs[i], pairs[j]
            if a1 and b1:
                r = psub(pmul(a0, b1), pmul(b0, a1))
                elim = pgcd(elim, r) if elim else r
    if not elim:
        raise ReductionError("ansatz conditions leave a free; no isolated family")
    out = []
    for a in real_roots(elim):
        if not isinstance(a, Fraction):
            # irrational a: consistent only if every condition fixes the same k
            continue
        ks = set()
        ok = True
        for p0, p1 in pairs:
            v0 = peval(p0, a)
            v1 = peval(p1, a)
            if v1 == 0:
                ok = ok and v0 == 0
            else:
                ks.add(-v0 / v1)
        if ok and len(ks) == 1:
            out.append(AnsatzFamily(form, a, False, ks.pop()))
    return out


def ansatz_entry_expr(family: AnsatzFamily, d: float = 1.0, e: float = 1.0) -> str:
    """Closed form of ``zeta(tau, R)`` for a family member, in sympy syntax."""
    dv, ev = family.coefficients(d, e)
    h0 = 1 if family.form == "plus" else -1
    z = f"(tau**({family.a.numerator}/{family.a.denominator})/R)"
    return f"-R**2/(2*tau)*({h0} + ({dv!r})*{z} + ({ev!r})*{z}**2)"


def families_to_json(families: Sequence[AnsatzFamily]) -> str:
    return json.dumps([f.to_dict() for f in families])


# --------------------------------------------------------------------------- separable family


@dataclass
class SeparableTrajectory:
    tau: np.ndarray
    D: np.ndarray
    Ddot: np.ndarray
    z1: np.ndarray
    z1dot: np.ndarray
    invariant: np.ndarray

    @property
    def drift(self) -> float:
        return float(np.max(np.abs(self.invariant - self.invariant[0])))


def integrate_separable(D0: float, Ddot0: float, C1: float, C2: float,
                        tau_interval: tuple[float, float], step: float = 1e-3,
                        blowup: float = 1e8) -> SeparableTrajectory:
    """RK4 for ``Dddot = 2 D^3`` together with ``z1ddot = 4 D z1dot``.

    ``z1`` is the R-independent part of zeta, started at ``-C1`` with slope
    ``-C2`` so that ``z1 = -C1 - C2 int exp(int 4D)`` from ``tau_interval[0]``.
    """
    t0, t1 = map(float, tau_interval)
    if not t1 > t0:
        raise ReductionError("tau interval must be increasing")
    n = max(1, int(math.ceil((t1 - t0) / step - 1e-9)))
    h = (t1 - t0) / n
    taus = np.linspace(t0, t1, n + 1)

    def rhs(_t, y):
        D, Dd, _z, zd = y
        return np.array([Dd, 2 * D**3, zd, 4 * D * zd])

    y = np.array([D0, Ddot0, -C1, -C2], dtype=float)
    out = np.empty((n + 1, 4))
    out[0] = y
    for i in range(n):
        y = _rk4_step(rhs, taus[i], y, h)
        if not np.all(np.isfinite(y)) or abs(y[0]) > blowup:
            raise BlowUpError(f"D blows up before tau = {taus[i + 1]!r} (|D| > {blowup:g})")
        out[i + 1] = y
    inv = out[:, 1] ** 2 - out[:, 0] ** 4
    return SeparableTrajectory(taus, out[:, 0], out[:, 1], out[:, 2], out[:, 3], inv)


def separable_family(D0: float, Ddot0: float | None = None, C1: float = 0.0, C2: float = 0.0,
                     tau_interval: tuple[float, float] = (1.0, 2.0), *, delta: float | None = None,
                     branch: float = 1.0, step: float = 1e-3,
                     R_interval: tuple[float, float] = (1.0, 2.0)) -> CatalogEntry:
    """``zeta = R^2 D(tau)/2 + z1(tau)`` from numerically integrated D and z1.

    Give either ``Ddot0`` or the invariant ``delta = Ddot^2 - D^4`` (then
    ``Ddot0 = branch * sqrt(delta + D0^4)``).  The returned entry evaluates
    through quintic Hermite interpolation of the trajectory; its tau
    derivatives are those of the interpolant.
    """
    if Ddot0 is None:
        if delta is None:
            raise ReductionError("give Ddot0 or delta")
        rad = delta + D0**4
        if rad < 0:
            raise ReductionError("delta + D0^4 must be non-negative")
        Ddot0 = math.copysign(math.sqrt(rad), branch)
    traj = integrate_separable(D0, Ddot0, C1, C2, tau_interval, step)
    D = BPoly.from_derivatives(traj.tau, np.stack([traj.D, traj.Ddot, 2 * traj.D**3], axis=1))
    Z = BPoly.from_derivatives(traj.tau, np.stack([traj.z1, traj.z1dot, 4 * traj.D * traj.z1dot], axis=1))
    dD, ddD = D.derivative(1), D.derivative(2)
    dZ, ddZ = Z.derivative(1), Z.derivative(2)
    lo, hi = tau_interval

    def evaluate(tau, R, params):
        tau = np.asarray(tau, dtype=float)
        R = np.asarray(R, dtype=float)
        inside = (tau >= lo - 1e-12) & (tau <= hi + 1e-12)
        t = np.where(inside, tau, np.nan)
        Dv, Dd, Ddd = D(t), dD(t), ddD(t)
        zeta = Partials(R**2 * Dv / 2 + Z(t), R**2 * Dd / 2 + dZ(t), R * Dv,
                        R**2 * Ddd / 2 + ddZ(t), R * Dd, Dv + 0 * R)
        return {"zeta": zeta}

    grid = Grid2.make(("tau", "R"), (lo, hi, 129), (R_interval[0], R_interval[1], 129))
    entry = CatalogEntry(
        name="eq51-general", role="zeta_of_tau_R", paper_eq="eq51", evaluator=evaluate,
        params={"D0": float(D0), "Ddot0": float(Ddot0), "C1": float(C1), "C2": float(C2)},
        components=("zeta",), default_grid=grid,
        description="separable family from integrated D and linear z1 equation")
    object.__setattr__(entry, "trajectory", traj)
    return entry


# --------------------------------------------------------------------------- linear part exponents


def linear_part_exponents(sign: str) -> list:
    """Roots a of ``a^2 + a(-3 -+ 4) + 2(1 +- 2) = 0`` (exact)."""
    s = _sign(sign)
    return real_roots(poly([2 * (1 + 2 * s), -3 - 4 * s, 1]))


def linear_part_condition(a, b, sign: str) -> bool:
    """Two-exponent condition for the perturbation ``tau^a zeta^b`` of g."""
    s = _sign(sign)
    a, b = q(a), q(b)
    return a * a + b * b + 2 * a * b * (2 * s - 1) + (a + b) * (-3 - 4 * s) + 2 * (1 + 2 * s) == 0


def _sign(sign) -> int:
    if sign in ("+", "plus", 1, +1):
        return 1
    if sign in ("-", "minus", -1):
        return -1
    raise ReductionError(f"sign must be '+' or '-', got {sign!r}")


__all__ = [
    "Family", "ReductionSpec", "ReductionError", "SingularPointError", "BlowUpError",
    "ProfileState", "ProfileSamples", "analytic_profile", "ode_residual", "log_form_residual",
    "integrate_profile", "AbelForm", "to_abel", "abel_round_trip", "AbelRoundTrip", "lift_profile",
    "ansatz_conditions", "ansatz_coefficients", "AnsatzFamily", "ansatz_entry_expr",
    "families_to_json", "integrate_separable", "separable_family", "SeparableTrajectory",
    "linear_part_exponents", "linear_part_condition",
]
