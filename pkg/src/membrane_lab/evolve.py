"""Method-of-lines evolution of the light-cone equation ``R_tt = R (R R')'``.

Space is discretized with second-order central differences of ``R**2 / 2``
(``R (R R')' = R (R**2 / 2)''``) and time with classical RK4 applied to the
first-order system ``(R, V)``, ``V = R_t``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .catalog import CatalogEntry, Partials
from .grid import Field2, Grid1, Grid2

# Linearized about a frozen R the scheme is a wave equation with speed |R|;
# the RK4 stability interval on the imaginary axis is 2*sqrt(2) and the
# central Laplacian has spectral radius 4/h**2, giving dt <= sqrt(2) h / |R|.
STABILITY_CONSTANT = math.sqrt(2.0)
GROWTH_LIMIT = 10.0
BOUNDARY_FLOOR = 1e-12
BOUNDARY_MODES = ("dirichlet", "dirichlet-exact", "extrapolating")


class EvolutionError(RuntimeError):
    """Base class for evolution failures."""


class InstabilityError(EvolutionError):
    pass


class BoundaryError(EvolutionError):
    pass


class NonMonotoneError(EvolutionError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    """Space-time discretization for one run.

    Parameters
    ----------
    mu_lo, mu_hi, n : float, float, int
        Spatial interval and number of points (boundaries included).
    tau0, tau1 : float
        Start and end of the evolution.
    step : float, optional
        Requested time step. It is shrunk so that an integer number of steps
        lands exactly on ``tau1``. ``None`` picks ``safety`` times the bound.
    boundary : {"dirichlet", "dirichlet-exact", "extrapolating"}
        ``"dirichlet"`` advances the boundary nodes through the same RK4
        stages as the interior, driven by the entry's exact acceleration,
        and resets them to the entry's values after every step.
        ``"dirichlet-exact"`` imposes the entry's values at every stage
        time; this is the textbook choice but it costs two orders of time
        accuracy next to the boundary.  ``"extrapolating"`` fills the
        boundary by quadratic extrapolation of the interior.
    safety : float
        Fraction of the stability bound used when ``step`` is ``None``.
    """

    mu_lo: float = 1.0
    mu_hi: float = 2.0
    n: int = 257
    tau0: float = 1.0
    tau1: float = 1.5
    step: float | None = None
    boundary: str = "dirichlet"
    safety: float = 0.5

    def __post_init__(self):
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {self.boundary!r}")
        if not self.mu_hi > self.mu_lo or self.n < 5:
            raise ValueError("need mu_hi > mu_lo and at least 5 points")
        if not self.tau1 > self.tau0:
            raise ValueError("need tau1 > tau0")
        if self.step is not None and not self.step > 0:
            raise ValueError("time step must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")

    @property
    def h(self) -> float:
        return (self.mu_hi - self.mu_lo) / (self.n - 1)

    @property
    def space(self) -> Grid1:
        return Grid1.make("mu", self.mu_lo, self.mu_hi, self.n)

    def step_bound(self, r_max: float) -> float:
        return STABILITY_CONSTANT * self.h / max(r_max, 1e-300)

    def with_n(self, n: int) -> EvolutionConfig:
        return EvolutionConfig(**{**asdict(self), "n": int(n)})

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> EvolutionConfig:
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> EvolutionConfig:
        return cls.from_dict(json.loads(text))


@dataclass
class Evolution:
    """Result of :func:`evolve`; ``field`` holds every time level."""

    field: Field2
    config: EvolutionConfig
    step: float
    steps: int
    step_bound: float
    boundary: str
    low_confidence: bool
    runtime: float

    @property
    def final(self) -> np.ndarray:
        return self.field.values[-1]

    def report(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "step": self.step,
            "steps": self.steps,
            "step_bound": self.step_bound,
            "stability_constant": STABILITY_CONSTANT,
            "boundary": self.boundary,
            "low_confidence": self.low_confidence,
            "runtime": self.runtime,
        }


def _accel(R: np.ndarray, h: float) -> np.ndarray:
    """Interior values of ``R (R**2/2)''``."""
    S = 0.5 * R * R
    return R[1:-1] * (S[2:] - 2 * S[1:-1] + S[:-2]) / (h * h)


def _extrapolate(R: np.ndarray) -> None:
    # quadratic extrapolation from the three nearest interior points
    R[0] = 3 * R[1] - 3 * R[2] + R[3]
    R[-1] = 3 * R[-2] - 3 * R[-3] + R[-4]


def initial_data(entry: CatalogEntry, config: EvolutionConfig) -> tuple[np.ndarray, np.ndarray]:
    """``R`` and ``R_tau`` of a catalog entry at ``tau0``."""
    mu = config.space.points
    part = entry.partials(np.full_like(mu, config.tau0), mu)[entry.primary]
    return part.f.copy(), part.fx.copy()


def evolve(R0, V0, config: EvolutionConfig, entry: CatalogEntry | None = None) -> Evolution:
    """Evolve initial data ``R(tau0, .)``, ``R_tau(tau0, .)`` to ``tau1``.

    Parameters
    ----------
    R0, V0 : array_like
        Initial profile and its time derivative on ``config.space``.
    config : EvolutionConfig
    entry : CatalogEntry, optional
        Source of Dirichlet boundary values. Required when
        ``config.boundary == "dirichlet"``.

    Returns
    -------
    Evolution
        The space-time field over ``(tau, mu)`` with run metadata.

    Raises
    ------
    InstabilityError
        If ``max|R|`` grows past ``GROWTH_LIMIT`` times its initial value or
        the requested step violates the stability bound.
    BoundaryError
        If boundary values are missing, non-finite or collapse to zero.
    """
    t_start = time.perf_counter()
    R = np.array(R0, dtype=float)
    V = np.array(V0, dtype=float)
    n = config.n
    if R.shape != (n,) or V.shape != (n,):
        raise ValueError(f"initial data must have shape ({n},)")
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(V))):
        raise ValueError("initial data must be finite")
    dirichlet = config.boundary != "extrapolating"
    exact_stages = config.boundary == "dirichlet-exact"
    if dirichlet and entry is None:
        raise BoundaryError("dirichlet boundaries need a catalog entry")

    r_max0 = float(np.max(np.abs(R)))
    bound = config.step_bound(r_max0)
    if config.step is None:
        target = config.safety * bound
    else:
        if config.step > bound:
            raise InstabilityError(f"time step {config.step:.3g} exceeds stability bound {bound:.3g}")
        target = config.step
    span = config.tau1 - config.tau0
    steps = max(4, math.ceil(span / target - 1e-9))
    dt = span / steps
    h = config.h
    mu_edges = np.array([config.mu_lo, config.mu_hi])

    def edges(t: float) -> Partials:
        part = entry.partials(np.full(2, t), mu_edges)[entry.primary]
        if not np.all(np.isfinite(part.f)) or np.any(np.abs(part.f) < BOUNDARY_FLOOR):
            raise BoundaryError(f"boundary values degenerate at tau = {t}")
        return part

    def with_boundary(Ri: np.ndarray, t: float, Rb=None) -> np.ndarray:
        full = np.empty(n)
        full[1:-1] = Ri
        if dirichlet:
            full[[0, -1]] = Rb
        else:
            _extrapolate(full)
            if np.any(np.abs(full[[0, -1]]) < BOUNDARY_FLOOR):
                raise BoundaryError(f"extrapolated boundary collapsed at tau = {t}")
        return full

    out = np.empty((steps + 1, n))
    out[0] = R
    Ri, Vi = R[1:-1].copy(), V[1:-1].copy()
    t = config.tau0
    limit = GROWTH_LIMIT * r_max0
    if dirichlet:
        b0 = edges(t)
        Rb, Vb = b0.f, b0.fx
    else:
        Rb = Vb = None
    for k in range(steps):
        th = t + dt / 2
        t1 = t + dt
        if exact_stages:
            b2 = b3 = edges(th).f
            b4 = edges(t1).f
        elif dirichlet:
            # boundary stages follow the same RK4 combination as the interior
            a0, ah = edges(t).fxx, edges(th).fxx
            b2 = Rb + dt / 2 * Vb
            b3 = Rb + dt / 2 * (Vb + dt / 2 * a0)
            b4 = Rb + dt * (Vb + dt / 2 * ah)
        else:
            b2 = b3 = b4 = None
        k1r, k1v = Vi, _accel(with_boundary(Ri, t, Rb), h)
        k2r, k2v = Vi + dt / 2 * k1v, _accel(with_boundary(Ri + dt / 2 * k1r, th, b2), h)
        k3r, k3v = Vi + dt / 2 * k2v, _accel(with_boundary(Ri + dt / 2 * k2r, th, b3), h)
        k4r, k4v = Vi + dt * k3v, _accel(with_boundary(Ri + dt * k3r, t1, b4), h)
        Ri = Ri + dt / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
        Vi = Vi + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        # the final time level is computed from the exact span to avoid drift
        t = config.tau0 + (k + 1) * dt
        if dirichlet:
            b1 = edges(t)
            Rb, Vb = b1.f, b1.fx
        full = with_boundary(Ri, t, Rb)
        peak = np.max(np.abs(full))
        if not np.isfinite(peak) or peak > limit:
            raise InstabilityError(f"max|R| = {peak:.3g} exceeds {GROWTH_LIMIT}x initial at tau = {t:.6g}")
        out[k + 1] = full

    grid = Grid2.make(("tau", "mu"), (config.tau0, config.tau1, steps + 1),
                      (config.mu_lo, config.mu_hi, n))
    return Evolution(
        field=Field2(grid, out), config=config, step=dt, steps=steps, step_bound=bound,
        boundary=config.boundary, low_confidence=not dirichlet,
        runtime=time.perf_counter() - t_start,
    )


def evolve_entry(entry: CatalogEntry, config: EvolutionConfig) -> Evolution:
    """Evolve an entry's own initial data, with its boundary values if Dirichlet."""
    R0, V0 = initial_data(entry, config)
    return evolve(R0, V0, config, entry if config.boundary != "extrapolating" else None)


def final_error(entry: CatalogEntry, run: Evolution) -> float:
    """Max deviation from the closed form at the final time."""
    cfg = run.config
    mu = cfg.space.points
    exact = entry.value(np.full_like(mu, cfg.tau1), mu)
    return float(np.max(np.abs(run.final - exact)))


@dataclass
class ConvergenceStudy:
    sizes: list           # spatial points or step counts, one per rung
    spacings: list        # h or dt
    errors: list
    order: float
    ratios: list
    kind: str

    def as_dict(self) -> dict:
        return asdict(self)


def _fit_order(spacings, errors, kind, sizes) -> ConvergenceStudy:
    errs = np.asarray(errors, dtype=float)
    if np.any(errs <= 0) or np.any(np.diff(errs) >= 0):
        raise NonMonotoneError(f"errors do not decrease under refinement: {list(errs)}")
    slope = np.polyfit(np.log(spacings), np.log(errs), 1)[0]
    ratios = list(errs[:-1] / errs[1:])
    return ConvergenceStudy(sizes=list(sizes), spacings=list(spacings), errors=list(errs),
                            order=float(slope), ratios=[float(r) for r in ratios], kind=kind)


def convergence_study(entry: CatalogEntry, configs) -> ConvergenceStudy:
    """Observed order from a ladder of configurations.

    Each configuration is evolved from the entry's data and compared with the
    closed form at ``tau1``; the order is the least-squares slope of
    ``log(error)`` against ``log(h)``.
    """
    configs = list(configs)
    if len(configs) < 3:
        raise ValueError("a convergence study needs at least 3 resolutions")
    errors = [final_error(entry, evolve_entry(entry, c)) for c in configs]
    return _fit_order([c.h for c in configs], errors, "space", [c.n for c in configs])


def spatial_ladder(entry: CatalogEntry, base: EvolutionConfig, sizes=(65, 129, 257)) -> ConvergenceStudy:
    return convergence_study(entry, [base.with_n(n) for n in sizes])


def time_ladder(entry: CatalogEntry, base: EvolutionConfig, steps=None) -> ConvergenceStudy:
    """Order in time at fixed spatial resolution.

    Meaningful for data whose spatial discretization is exact, so the error
    is set by the time stepper alone. The default ladder starts at the
    coarsest step count allowed by ``base.safety`` and doubles twice.
    """
    span = base.tau1 - base.tau0
    if steps is None:
        R0, _ = initial_data(entry, base)
        s0 = math.ceil(span / (base.safety * base.step_bound(float(np.max(np.abs(R0))))))
        steps = (s0, 2 * s0, 4 * s0)
    errors = []
    for s in steps:
        cfg = EvolutionConfig(**{**asdict(base), "step": span / s})
        errors.append(final_error(entry, evolve_entry(entry, cfg)))
    return _fit_order([span / s for s in steps], errors, "time", steps)
