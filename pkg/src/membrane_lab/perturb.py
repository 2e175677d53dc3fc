"""Exact algebra of perturbative modes about the moving hyperboloid.

A mode ``(alpha, beta, delta)`` perturbs the base ``R0 = s sqrt(2) mu/tau`` as
``R = s sqrt(2) (mu/tau + delta tau^alpha mu^beta)``; the linearized equation
admits it iff ``beta^2 + beta + 1 = alpha (alpha - 1)/2``.  The
solution-generating transformation maps a mode to a new one (the star
map) with flipped base sign.

Exponents are Fractions.  Amplitudes are :class:`~membrane_lab.exact.Pow2`
values so that factors of ``sqrt(2)`` stay exact; every amplitude relation is
linear in ``delta``, with a rational ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .exact import Pow2, RationalLike, q, to_str
from .grid import Field2

STAR_MATRIX = ((-3, -4), (2, 3))
SHIFT_MATRIX = ((-3, 2), (-4, 3))


class PerturbError(ValueError):
    pass


class ModeFitError(PerturbError):
    pass


def _amp(value) -> Pow2:
    if isinstance(value, Pow2):
        return value
    return Pow2(q(value))


def _amp_str(value: Pow2) -> str:
    return value.to_str()


def amplitude_from_str(text: str) -> Pow2:
    """Parse ``"p/q"`` or ``"p/q*sqrt(2)"``."""
    text = text.strip()
    if text.endswith("*sqrt(2)"):
        return Pow2(Fraction(text[: -len("*sqrt(2)")]), Fraction(1, 2))
    return Pow2(Fraction(text))


def check_constraint(alpha: RationalLike, beta: RationalLike) -> bool:
    """``beta^2 + beta + 1 == alpha (alpha - 1) / 2`` in exact arithmetic."""
    a, b = q(alpha), q(beta)
    return b * b + b + 1 == a * (a - 1) / 2


def _parity(alpha: Fraction) -> int:
    if alpha.denominator != 1:
        raise PerturbError(f"(-1)^alpha is only defined for integer alpha, got {to_str(alpha)}")
    return -1 if alpha.numerator % 2 else 1


@dataclass(frozen=True)
class Mode:
    alpha: Fraction
    beta: Fraction
    delta: Pow2 = Pow2(Fraction(1))
    base_sign: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", q(self.alpha))
        object.__setattr__(self, "beta", q(self.beta))
        object.__setattr__(self, "delta", _amp(self.delta))
        if self.base_sign not in (1, -1):
            raise PerturbError("base sign must be +1 or -1")

    @property
    def valid(self) -> bool:
        return check_constraint(self.alpha, self.beta)

    @property
    def singular(self) -> bool:
        return self.beta in (-1, -2)

    def as_dict(self) -> dict:
        return {"alpha": to_str(self.alpha), "beta": to_str(self.beta),
                "delta": _amp_str(self.delta), "base_sign": self.base_sign}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    @classmethod
    def from_dict(cls, data: dict) -> Mode:
        return cls(Fraction(data["alpha"]), Fraction(data["beta"]), amplitude_from_str(data["delta"]),
                   int(data.get("base_sign", 1)))

    def radius(self, tau, mu):
        """Leading-order radius ``s sqrt(2)(mu/tau + delta tau^alpha mu^beta)``."""
        tau = np.asarray(tau, dtype=float)
        mu = np.asarray(mu, dtype=float)
        pert = float(self.delta) * _signed_power(tau, self.alpha) * _signed_power(mu, self.beta)
        return self.base_sign * math.sqrt(2.0) * (mu / tau + pert)


def _signed_power(x: np.ndarray, e: Fraction) -> np.ndarray:
    if e.denominator == 1:
        return x ** int(e)
    return np.power(x, float(e))


@dataclass(frozen=True)
class StarResult:
    alpha: Fraction
    beta: Fraction
    delta: Pow2
    tau1: Pow2
    mu1: Pow2
    delta_prime: Pow2
    base_sign: int
    path: str

    @property
    def mode(self) -> Mode:
        return Mode(self.alpha, self.beta, self.delta, self.base_sign)

    def as_dict(self) -> dict:
        return {"alpha": to_str(self.alpha), "beta": to_str(self.beta),
                "delta": _amp_str(self.delta), "tau1": _amp_str(self.tau1),
                "mu1": _amp_str(self.mu1), "delta_prime": _amp_str(self.delta_prime),
                "base_sign": self.base_sign, "path": self.path}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def star_exponents(alpha: RationalLike, beta: RationalLike) -> tuple[Fraction, Fraction]:
    a, b = q(alpha), q(beta)
    return -3 * a - 4 * b, 2 * a + 3 * b


def delta_prime_ratio(alpha: RationalLike, beta: RationalLike) -> Fraction:
    """``delta' / delta``; the doubly singular mode uses ``-1/3``."""
    a, b = q(alpha), q(beta)
    if a == -1 and b == -1:
        return Fraction(-1, 3)
    if b == -1:
        raise PerturbError(f"delta' is singular for beta = -1 (alpha = {to_str(a)})")
    return (a - b) / (b + 1)


def shift_ratios(alpha: RationalLike, beta: RationalLike) -> tuple[Fraction, Fraction]:
    """First-order shifts ``(tau1, mu1) / delta``."""
    a, b = q(alpha), q(beta)
    if b == -2:
        raise PerturbError("mode with beta = -2 has a singular shift")
    sgn = _parity(a)
    dp = delta_prime_ratio(a, b)
    vec = (Fraction(-1), (a - 2) / (b + 2))
    pref = 2 * dp * sgn
    tau1 = pref * (SHIFT_MATRIX[0][0] * vec[0] + SHIFT_MATRIX[0][1] * vec[1])
    mu1 = pref * (SHIFT_MATRIX[1][0] * vec[0] + SHIFT_MATRIX[1][1] * vec[1])
    return tau1, mu1


def star_amplitude_ratio(alpha: RationalLike, beta: RationalLike) -> Fraction:
    """``delta* / delta`` from the shifts: ``mu1 - tau1 - (-1)^alpha``."""
    a = q(alpha)
    tau1, mu1 = shift_ratios(alpha, beta)
    return mu1 - tau1 - _parity(a)


def star_amplitude_closed_form(alpha: RationalLike, beta: RationalLike) -> Fraction:
    """``(-1)^alpha (2 (alpha-beta)/(beta+1) (1 + (alpha-2)/(beta+2)) - 1)`` for regular modes."""
    a, b = q(alpha), q(beta)
    if b in (-1, -2):
        raise PerturbError("closed-form amplitude needs beta not in {-1, -2}")
    return _parity(a) * (2 * (a - b) / (b + 1) * (1 + (a - 2) / (b + 2)) - 1)


def star(mode: Mode) -> StarResult:
    """Image of a mode under the solution-generating transformation.

    Raises
    ------
    PerturbError
        For invalid modes, non-integer alpha, ``beta = -2``, or ``beta = -1``
        away from ``alpha = -1``.
    """
    if not mode.valid:
        raise PerturbError(f"({to_str(mode.alpha)}, {to_str(mode.beta)}) violates the mode constraint")
    a, b = mode.alpha, mode.beta
    _parity(a)
    if b == -2:
        raise PerturbError("star map is singular for beta = -2")
    tau1, mu1 = shift_ratios(a, b)
    ratio = mu1 - tau1 - _parity(a)
    path = "singular" if b == -1 else "regular"
    if path == "regular" and ratio != star_amplitude_closed_form(a, b):
        raise PerturbError("internal inconsistency between amplitude formulas")  # pragma: no cover
    a_s, b_s = star_exponents(a, b)
    d = mode.delta
    return StarResult(alpha=a_s, beta=b_s, delta=d * ratio, tau1=d * tau1, mu1=d * mu1,
                      delta_prime=d * delta_prime_ratio(a, b), base_sign=-mode.base_sign, path=path)


def double_star_ratio(alpha: RationalLike, beta: RationalLike) -> Fraction:
    """Product formula for ``delta** / delta``."""
    a, b = q(alpha), q(beta)
    a_s, b_s = star_exponents(a, b)
    for val, name in ((b, "beta"), (b_s, "beta*")):
        if val in (-1, -2):
            raise PerturbError(f"{name} = {to_str(val)} makes the ratio singular")

    def factor(x, y):
        return 1 + 2 * (x - y) / ((y + 1) * (y + 2))

    return factor(a, b) * factor(a_s, b_s)


def auxiliary_identities(alpha: RationalLike, beta: RationalLike) -> dict[str, tuple[Fraction, Fraction]]:
    """Left and right sides of two rational identities that hold on valid modes."""
    a, b = q(alpha), q(beta)
    if b in (-1, -2):
        raise PerturbError("identities need beta not in {-1, -2}")
    return {
        "first": ((a - 2) * (a - b) / (b + 1), 2 - a + 2 * b),
        "second": ((a - b) * (a - 2) * (a - 3) / ((b + 1) * (b + 2)), 2 * a - 2 * b - 4),
    }


@dataclass(frozen=True)
class LevelSetTerm:
    """Leading term ``coefficient * R^r_exp * tau^tau_exp`` of ``R^2 + 2 zeta tau``."""

    r_exp: Fraction
    tau_exp: Fraction
    coefficient: Pow2

    def as_dict(self) -> dict:
        return {"r_exp": to_str(self.r_exp), "tau_exp": to_str(self.tau_exp),
                "coefficient": self.coefficient.to_str()}


def level_set_form(mode: Mode) -> LevelSetTerm:
    """Leading correction ``2^((3-beta)/2) (delta + delta') R^(beta+1) tau^(alpha+beta)``."""
    if not mode.valid:
        raise PerturbError("level-set form needs a valid mode")
    a, b = mode.alpha, mode.beta
    ratio = 1 + delta_prime_ratio(a, b)
    return LevelSetTerm(b + 1, a + b, Pow2(ratio, (3 - b) / 2) * mode.delta)


def valid_modes(count: int, max_abs_alpha: int = 10**6) -> Iterator[tuple[Fraction, Fraction]]:
    """Integer-alpha solutions of the mode constraint, by increasing |alpha|.

    The constraint reads ``(2 beta + 1)^2 = 2 alpha (alpha - 1) - 3``, so beta is
    rational only when the right side is a perfect (odd) square, which makes
    beta an integer.
    """
    found = 0
    for k in range(0, max_abs_alpha):
        for a in sorted({k, -k}, reverse=True):
            rhs = 2 * a * (a - 1) - 3
            if rhs < 0:
                continue
            m = math.isqrt(rhs)
            if m * m != rhs:
                continue
            for b in sorted({(-1 + m) // 2, (-1 - m) // 2}):
                yield Fraction(a), Fraction(b)
                found += 1
                if found >= count:
                    return


# --------------------------------------------------------------------------- numeric fit


@dataclass
class ModeFit:
    alpha: float
    beta: float
    delta: float
    alpha_stderr: float
    beta_stderr: float
    fit_residual: float
    base_sign: int

    def rounded(self) -> tuple[int, int]:
        return round(self.alpha), round(self.beta)

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in vars(self).items()}


def _slopes(logx: np.ndarray, logd: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of per-line least-squares slopes (lines along axis 0)."""
    slopes = []
    for col in logd.T:
        A = np.vstack([logx, np.ones_like(logx)]).T
        coef, *_ = np.linalg.lstsq(A, col, rcond=None)
        slopes.append(coef[0])
    slopes = np.asarray(slopes)
    err = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else 0.0
    return float(np.mean(slopes)), err


def numeric_mode_fit(field: Field2, base_sign: int = 1, noise_floor: float = 1e-12) -> ModeFit:
    """Estimate ``(alpha, beta, delta)`` from a sampled radius.

    The perturbation ``d = R / (s sqrt 2) - y/x`` is fitted by two-stage
    log-log regression: slopes along the first axis (one per column) give
    alpha, slopes along the second axis give beta, and the mean remaining
    offset gives ``|delta|``.  The sign of delta uses the rounded exponents,
    so negative coordinates are allowed.
    """
    if base_sign not in (1, -1):
        raise ModeFitError("base sign must be +1 or -1")
    g = field.grid
    X, Y = g.mesh()
    if np.any(X == 0) or np.any(Y == 0):
        raise ModeFitError("fit grid touches a coordinate axis")
    base = Y / X
    d = field.values / (base_sign * math.sqrt(2.0)) - base
    if np.max(np.abs(d)) <= noise_floor * np.max(np.abs(base)):
        raise ModeFitError("perturbation is below the noise floor")
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ModeFitError("perturbation changes sign on the grid; degenerate regression")
    logd = np.log(np.abs(d))
    lx, ly = np.log(np.abs(g.x)), np.log(np.abs(g.y))
    if np.ptp(lx) == 0 or np.ptp(ly) == 0:
        raise ModeFitError("degenerate regression: an axis has a single magnitude")
    alpha, a_err = _slopes(lx, logd)
    beta, b_err = _slopes(ly, logd.T)
    model = alpha * lx[:, None] + beta * ly[None, :]
    offset = logd - model
    log_amp = float(np.mean(offset))
    ar, br = round(alpha), round(beta)
    sgn_model = np.sign(X) ** ar * np.sign(Y) ** br
    sign = float(np.sign(np.median(np.sign(d) * sgn_model)))
    resid = float(np.sqrt(np.mean((offset - log_amp) ** 2)))
    return ModeFit(alpha, beta, sign * math.exp(log_amp), a_err, b_err, resid, base_sign)


__all__ = [
    "Mode", "StarResult", "PerturbError", "ModeFitError", "check_constraint", "star",
    "star_exponents", "delta_prime_ratio", "shift_ratios", "star_amplitude_ratio",
    "star_amplitude_closed_form", "double_star_ratio", "auxiliary_identities", "level_set_form",
    "LevelSetTerm", "valid_modes", "numeric_mode_fit", "ModeFit",
]
