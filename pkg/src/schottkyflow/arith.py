"""Exact 2x2 integer matrices, Mobius boundary actions and hyperbolic lengths.

Entries are Python ints, so products of long words never overflow; everything
real-valued is double precision.  The boundary is the real line of the upper
half-plane model and the point at infinity is the float ``inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import NotHyperbolicError, NotUnimodularError, PoleError

INF = math.inf


@dataclass(frozen=True)
class IntMatrix2:
    """Element of SL(2, Z); unimodularity is checked at construction."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if det != 1:
            raise NotUnimodularError(f"determinant is {det}, expected 1")

    @staticmethod
    def identity() -> "IntMatrix2":
        return IntMatrix2(1, 0, 0, 1)

    def __mul__(self, other: "IntMatrix2") -> "IntMatrix2":
        return IntMatrix2(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def inverse(self) -> "IntMatrix2":
        return IntMatrix2(self.d, -self.b, -self.c, self.a)

    @property
    def trace(self) -> int:
        return self.a + self.d

    def entries(self):
        return (self.a, self.b, self.c, self.d)

    def is_hyperbolic(self) -> bool:
        return abs(self.trace) > 2

    def __repr__(self):
        return f"[[{self.a},{self.b}],[{self.c},{self.d}]]"


@dataclass(frozen=True)
class ModElement:
    """Entrywise reduction of an IntMatrix2 into Z/qZ (determinant 1 mod q)."""

    a: int
    b: int
    c: int
    d: int
    q: int

    def __mul__(self, other: "ModElement") -> "ModElement":
        if self.q != other.q:
            raise ValueError("moduli differ")
        q = self.q
        return ModElement(
            (self.a * other.a + self.b * other.c) % q,
            (self.a * other.b + self.b * other.d) % q,
            (self.c * other.a + self.d * other.c) % q,
            (self.c * other.b + self.d * other.d) % q,
            q,
        )

    def inverse(self) -> "ModElement":
        q = self.q
        return ModElement(self.d % q, (-self.b) % q, (-self.c) % q, self.a % q, q)

    def is_identity(self) -> bool:
        q = self.q
        return (self.a % q, self.b % q, self.c % q, self.d % q) == (1 % q, 0, 0, 1 % q)

    def entries(self):
        return (self.a, self.b, self.c, self.d)


def mobius_apply(g: IntMatrix2, x):
    """Boundary action (a*x+b)/(c*x+d); accepts and may return inf.

    Exact when x is a Fraction and the result is finite.
    """
    if x == INF:
        if g.c == 0:
            return INF
        if isinstance(x, Fraction):  # preserve exactness of finite results
            return Fraction(g.a, g.c)
        return g.a / g.c
    den = g.c * x + g.d
    if den == 0:
        return INF
    return (g.a * x + g.b) / den


def mobius_derivative(g: IntMatrix2, x) -> float:
    """|g'(x)| = 1/(c*x+d)^2 for the boundary action; x must avoid the pole."""
    den = g.c * x + g.d
    if den == 0:
        raise PoleError(f"{g} has a pole at x={x}")
    if isinstance(x, Fraction):
        return Fraction(1, 1) / (den * den)
    return 1.0 / float(den * den)


def trace_length(g: IntMatrix2) -> float:
    """Geodesic length 2*ln((|t| + sqrt(t^2-4))/2) of the closed geodesic of [g]."""
    t = abs(g.trace)
    if t <= 2:
        raise NotHyperbolicError(g.trace)
    if t < 10**7:
        return 2.0 * math.log((t + math.sqrt(t * t - 4)) / 2.0)
    # huge traces: 2*ln(t) - 4/t^2 + O(t^-4); correction below double precision
    return 2.0 * math.log(t)


def orbit_distance(g: IntMatrix2) -> float:
    """Hyperbolic distance d(i, g.i) = arccosh((a^2+b^2+c^2+d^2)/2)."""
    s = g.a * g.a + g.b * g.b + g.c * g.c + g.d * g.d  # exact integer
    if s <= 2:
        return 0.0 if s == 2 else math.acosh(s / 2.0)
    if s < 10**15:
        return math.acosh(s / 2.0)
    # arccosh(s/2) = ln(s) - 1/s^2 + ...; log of a big int stays accurate
    return math.log(s)


def point_distance(z: complex, w: complex) -> float:
    """Hyperbolic distance between two points of the upper half plane."""
    num = abs(z - w) ** 2
    return math.acosh(1.0 + num / (2.0 * z.imag * w.imag))


def mobius_apply_h2(g: IntMatrix2, z: complex) -> complex:
    """Action on the upper half plane."""
    return (g.a * z + g.b) / (g.c * z + g.d)


def reduce_mod(g: IntMatrix2, q: int) -> ModElement:
    """Entrywise reduction into Z/qZ; a homomorphism for each q >= 1."""
    if q < 1:
        raise ValueError("q must be >= 1")
    return ModElement(g.a % q, g.b % q, g.c % q, g.d % q, q)
