"""Uniform parameter grids, sampled fields and second-order finite differences."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .catalog import CatalogEntry

AXES = ("tau", "mu", "zeta", "kappa", "R", "t", "phi", "z", "x", "u", "y", "q")
MIN_POINTS = 5


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    n: int

    def __post_init__(self) -> None:
        if self.name not in AXES:
            raise GridError(f"unknown axis {self.name!r}; expected one of {AXES}")
        if self.n < MIN_POINTS:
            raise GridError(f"axis {self.name} needs at least {MIN_POINTS} points, got {self.n}")
        if not self.hi > self.lo:
            raise GridError(f"axis {self.name} has non-positive extent [{self.lo}, {self.hi}]")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def spec(self) -> str:
        return f"{self.name}:{self.lo!r}:{self.hi!r}:{self.n}"


@dataclass(frozen=True)
class Grid1:
    """One-dimensional uniform grid, used for reduced ODE profiles."""

    axis: Axis

    @classmethod
    def make(cls, name: str, lo: float, hi: float, n: int) -> Grid1:
        return cls(Axis(name, float(lo), float(hi), int(n)))

    @property
    def points(self) -> np.ndarray:
        return self.axis.points

    @property
    def h(self) -> float:
        return self.axis.h

    @property
    def names(self) -> tuple[str]:
        return (self.axis.name,)

    def refined(self) -> Grid1:
        return Grid1(Axis(self.axis.name, self.axis.lo, self.axis.hi, 2 * self.axis.n - 1))

    def spec(self) -> str:
        return self.axis.spec()


@dataclass(frozen=True)
class Grid2:
    """Rectangular tensor grid; arrays are indexed ``[i_x, i_y]``."""

    ax: Axis
    ay: Axis

    def __post_init__(self) -> None:
        if self.ax.name == self.ay.name:
            raise GridError("grid axes must be distinct")

    @classmethod
    def make(cls, names: tuple[str, str], x: tuple[float, float, int],
             y: tuple[float, float, int]) -> Grid2:
        return cls(Axis(names[0], float(x[0]), float(x[1]), int(x[2])),
                   Axis(names[1], float(y[0]), float(y[1]), int(y[2])))

    @classmethod
    def parse(cls, text: str) -> Grid2:
        """Parse ``"ax1:min:max:n,ax2:min:max:n"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise GridError(f"grid spec needs two axes: {text!r}")
        axes = []
        for part in parts:
            bits = part.split(":")
            if len(bits) != 4:
                raise GridError(f"bad axis spec {part!r}")
            axes.append(Axis(bits[0], float(bits[1]), float(bits[2]), int(bits[3])))
        return cls(*axes)

    @property
    def names(self) -> tuple[str, str]:
        return (self.ax.name, self.ay.name)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ax.n, self.ay.n)

    @property
    def x(self) -> np.ndarray:
        return self.ax.points

    @property
    def y(self) -> np.ndarray:
        return self.ay.points

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def axis_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GridError(f"axis {name!r} not in grid {self.names}") from None

    def spacing(self, name: str) -> float:
        return (self.ax, self.ay)[self.axis_index(name)].h

    def refined(self) -> Grid2:
        """Same rectangle with the spacing halved on both axes."""
        return Grid2(Axis(self.ax.name, self.ax.lo, self.ax.hi, 2 * self.ax.n - 1),
                     Axis(self.ay.name, self.ay.lo, self.ay.hi, 2 * self.ay.n - 1))

    def renamed(self, names: tuple[str, str]) -> Grid2:
        return Grid2(Axis(names[0], self.ax.lo, self.ax.hi, self.ax.n),
                     Axis(names[1], self.ay.lo, self.ay.hi, self.ay.n))

    def interior(self, margin: int = 1) -> tuple[slice, slice]:
        return (slice(margin, self.ax.n - margin), slice(margin, self.ay.n - margin))

    def spec(self) -> str:
        return f"{self.ax.spec()},{self.ay.spec()}"


DEFAULT_GRID = Grid2.make(("tau", "mu"), (1.0, 2.0, 129), (1.0, 2.0, 129))


@dataclass(frozen=True, eq=False)
class Field2:
    grid: Grid2
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _combine(self, other, op) -> Field2:
        if isinstance(other, Field2):
            if other.grid != self.grid:
                raise GridError("fields live on different grids")
            other = other.values
        return Field2(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def interior_values(self, margin: int = 1) -> np.ndarray:
        return self.values[self.grid.interior(margin)]

    def to_csv(self) -> str:
        """Row-major CSV, 17 significant digits, header from the axis names."""
        buf = io.StringIO()
        buf.write(f"{self.grid.ax.name},{self.grid.ay.name},value\n")
        for i, xv in enumerate(self.grid.x):
            for j, yv in enumerate(self.grid.y):
                buf.write(f"{xv:.17g},{yv:.17g},{self.values[i, j]:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> Field2:
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        names = tuple(lines[0].split(",")[:2])
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        grid = Grid2.make(names, (xs[0], xs[-1], len(xs)), (ys[0], ys[-1], len(ys)))
        return cls(grid, data[:, 2].reshape(len(xs), len(ys)))


@dataclass(frozen=True, eq=False)
class Field1:
    grid: Grid1
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.axis.n,):
            raise GridError(f"profile shape {vals.shape} does not match grid ({self.grid.axis.n},)")
        if not np.all(np.isfinite(vals)):
            raise GridError("profile contains non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def diff_array(values: np.ndarray, h: float, axis: int, order: int) -> np.ndarray:
    """Second-order central differences with second-order one-sided ends."""
    if order not in (1, 2):
        raise GridError(f"derivative order must be 1 or 2, got {order}")
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = f.shape[0]
    if n < MIN_POINTS:
        raise GridError(f"need at least {MIN_POINTS} points along the axis, got {n}")
    out = np.empty_like(f)
    if order == 1:
        out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    else:
        out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def diff(field: Field2, axis: str, order: int = 1) -> Field2:
    idx = field.grid.axis_index(axis)
    return Field2(field.grid, diff_array(field.values, field.grid.spacing(axis), idx, order))


def mixed_diff(field: Field2) -> Field2:
    g = field.grid
    inner = diff_array(field.values, g.ax.h, 0, 1)
    return Field2(g, diff_array(inner, g.ay.h, 1, 1))


def sample(entry: CatalogEntry, grid: Grid2 | Grid1, component: str | None = None):
    """Evaluate a catalog entry's value pointwise on ``grid``."""
    parts = entry.partials_on(grid)
    name = component or entry.primary
    if name not in parts:
        raise GridError(f"entry {entry.name} has no component {name!r}")
    if isinstance(grid, Grid1):
        return Field1(grid, parts[name].f)
    return Field2(grid, parts[name].f)
