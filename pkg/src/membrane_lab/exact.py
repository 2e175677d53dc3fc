"""Exact rational helpers: serialization, univariate polynomials over Q, surds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

RationalLike = Union[int, Fraction, str]


def q(value: RationalLike) -> Fraction:
    """Coerce ints, Fractions and "p/q" strings to Fraction; floats are rejected."""
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, float):
        raise TypeError(f"refusing inexact float {value!r}; pass a Fraction or 'p/q' string")
    return Fraction(value)


def to_str(value: Fraction) -> str:
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def from_str(text: str) -> Fraction:
    return Fraction(text.strip())


# --- polynomials, coefficient lists low -> high degree -------------------------

Poly = tuple


def poly(coeffs: Iterable[RationalLike]) -> Poly:
    """Build a normalized polynomial from low-to-high coefficients."""
    out = [q(c) for c in coeffs]
    while out and out[-1] == 0:
        out.pop()
    return tuple(out)


def degree(p: Poly) -> int:
    return len(p) - 1 if p else -1


def padd(a: Poly, b: Poly) -> Poly:
    n = max(len(a), len(b))
    return poly((a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(n))


def pscale(a: Poly, c: RationalLike) -> Poly:
    c = q(c)
    return poly(x * c for x in a)


def pmul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return ()
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return poly(out)


def psub(a: Poly, b: Poly) -> Poly:
    return padd(a, pscale(b, -1))


def peval(p: Poly, x: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(p):
        acc = acc * x + c
    return acc


def pdivmod(a: Poly, b: Poly) -> tuple[Poly, Poly]:
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    rem = list(a)
    quot = [Fraction(0)] * max(len(a) - len(b) + 1, 0)
    lead = b[-1]
    while len(rem) >= len(b) and any(rem):
        shift = len(rem) - len(b)
        coef = rem[-1] / lead
        quot[shift] = coef
        for i, c in enumerate(b):
            rem[shift + i] -= coef * c
        rem = list(poly(rem))
    return poly(quot), poly(rem)


def monic(p: Poly) -> Poly:
    return pscale(p, 1 / p[-1]) if p else ()


def pgcd(a: Poly, b: Poly) -> Poly:
    a, b = poly(a), poly(b)
    while b:
        a, b = b, pdivmod(a, b)[1]
    return monic(a)


def _divisors(n: int) -> list[int]:
    n = abs(n)
    if n == 0:
        return [0]
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


@dataclass(frozen=True)
class QuadSurd:
    """The real number ``rational + coefficient * sqrt(radicand)``."""

    rational: Fraction
    coefficient: Fraction
    radicand: int

    def __float__(self) -> float:
        return float(self.rational) + float(self.coefficient) * math.sqrt(self.radicand)

    def __str__(self) -> str:
        sign = "+" if self.coefficient >= 0 else "-"
        return f"{to_str(self.rational)} {sign} {to_str(abs(self.coefficient))}*sqrt({self.radicand})"


Root = Union[Fraction, QuadSurd]


def rational_roots(p: Poly) -> list[Fraction]:
    """All distinct rational roots, by the rational root theorem."""
    p = poly(p)
    if degree(p) < 1:
        return []
    lcm = 1
    for c in p:
        lcm = lcm * c.denominator // math.gcd(lcm, c.denominator)
    ints = [int(c * lcm) for c in p]
    roots: set[Fraction] = set()
    # strip zero roots
    k = 0
    while ints[k] == 0:
        k += 1
    if k:
        roots.add(Fraction(0))
    ints = ints[k:]
    if len(ints) > 1:
        for num in _divisors(ints[0]):
            for den in _divisors(ints[-1]):
                for cand in (Fraction(num, den), Fraction(-num, den)):
                    if peval(p, cand) == 0:
                        roots.add(cand)
    return sorted(roots)


def _sqrt_fraction(x: Fraction) -> Fraction | None:
    if x < 0:
        return None
    n, d = math.isqrt(x.numerator), math.isqrt(x.denominator)
    if n * n == x.numerator and d * d == x.denominator:
        return Fraction(n, d)
    return None


def quadratic_roots(a: RationalLike, b: RationalLike, c: RationalLike) -> list[Root]:
    """Real roots of ``a x^2 + b x + c`` as Fractions or QuadSurds, ascending."""
    a, b, c = q(a), q(b), q(c)
    if a == 0:
        if b == 0:
            raise ValueError("degenerate quadratic")
        return [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    root = _sqrt_fraction(disc)
    if root is not None:
        return sorted({(-b - root) / (2 * a), (-b + root) / (2 * a)})
    # sqrt(p/q) = sqrt(p*q)/q; pull the square part out of p*q
    num = disc.numerator * disc.denominator
    square = 1
    for f in range(2, math.isqrt(num) + 1):
        while num % (f * f) == 0:
            num //= f * f
            square *= f
    coef = Fraction(square, disc.denominator) / (2 * a)
    base = -b / (2 * a)
    pair = [QuadSurd(base, -abs(coef), num), QuadSurd(base, abs(coef), num)]
    return pair


def real_roots(p: Poly) -> list[Root]:
    """Roots of a polynomial whose irrational part is at most quadratic."""
    p = poly(p)
    roots: list[Root] = []
    rest = p
    for r in rational_roots(p):
        roots.append(r)
        while True:
            quot, rem = pdivmod(rest, poly([-r, 1]))
            if rem:
                break
            rest = quot
    if degree(rest) == 2:
        roots.extend(quadratic_roots(rest[2], rest[1], rest[0]))
    elif degree(rest) > 2:
        raise NotImplementedError(f"irreducible factor of degree {degree(rest)}")
    return roots


@dataclass(frozen=True)
class Pow2:
    """Exact value ``factor * 2**exponent`` with a half-integer exponent."""

    factor: Fraction
    exponent: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        if (2 * self.exponent).denominator != 1:
            raise ValueError("exponent of 2 must be a half-integer")
        # fold the integer part of the exponent into the factor
        whole = math.floor(self.exponent)
        if whole:
            object.__setattr__(self, "factor", Fraction(self.factor) * Fraction(2) ** whole)
            object.__setattr__(self, "exponent", Fraction(self.exponent) - whole)

    def __mul__(self, other: Pow2 | RationalLike) -> Pow2:
        if isinstance(other, Pow2):
            return Pow2(self.factor * other.factor, self.exponent + other.exponent)
        return Pow2(self.factor * q(other), self.exponent)

    __rmul__ = __mul__

    def __float__(self) -> float:
        return float(self.factor) * 2.0 ** float(self.exponent)

    @property
    def is_rational(self) -> bool:
        return self.exponent == 0 or self.factor == 0

    def to_str(self) -> str:
        if self.is_rational:
            return to_str(self.factor)
        return f"{to_str(self.factor)}*sqrt(2)"


def as_fractions(values: Sequence[RationalLike]) -> tuple[Fraction, ...]:
    return tuple(q(v) for v in values)
