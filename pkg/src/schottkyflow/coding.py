"""Symbolic model: subshift, expanding boundary map, roof function, cocycle.

The Bowen-Series map T sends x in I_s to s^-1 . x; the roof is tau = log|T'|
and the group-valued cocycle attached to a one-sided coding is the generator
labelled by the first symbol (this is the Schottky specialisation: it is
locally constant on one-symbol cylinders, stronger than needed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from .arith import IntMatrix2, mobius_apply, mobius_derivative
from .errors import (
    InadmissibleWordError,
    PointNotInIntervalError,
    SchottkyFlowError,
)
from .schottky import SchottkyGroup


@dataclass(frozen=True)
class Subshift:
    """Transition data of the coding; mixing because k >= 4 gives Tr^2 > 0."""

    k: int
    transition: np.ndarray  # k x k boolean
    theta: float

    def admissible(self, word: Sequence[int]) -> bool:
        return all(self.transition[word[i], word[i + 1]] for i in range(len(word) - 1))

    def is_topologically_mixing(self) -> bool:
        m = self.transition.astype(np.int64)
        p = m.copy()
        for _ in range(self.k):
            if (p > 0).all():
                return True
            p = p @ m
        return bool((p > 0).all())


def subshift(g: SchottkyGroup, theta: float | None = None) -> Subshift:
    k = g.n_symbols
    tr = np.ones((k, k), dtype=bool)
    for i in range(k):
        tr[i, g.sbar(i)] = False
    if theta is None:
        theta = default_theta(g)
    return Subshift(k=k, transition=tr, theta=theta)


def default_theta(g: SchottkyGroup) -> float:
    """theta = 1/kappa with kappa the measured expansion rate (conservative)."""
    kappa = math.sqrt(min(g.expansion_min))
    return 1.0 / kappa


def is_admissible(g: SchottkyGroup, word: Sequence[int]) -> bool:
    return all(word[i + 1] != g.sbar(word[i]) for i in range(len(word) - 1))


def expanding_map(g: SchottkyGroup, x: float, s: int) -> Tuple[float, Tuple[int, ...]]:
    """One step of the boundary map on I_s; returns (T x, allowed next symbols)."""
    lo, hi = g.interval_float(s)
    if not (lo <= x <= hi):
        raise PointNotInIntervalError(f"{x} not in interval of symbol {s}")
    tx = mobius_apply(g.matrix(s).inverse(), x)
    return tx, g.allowed_after(s)


def roof(g: SchottkyGroup, x: float, s: int) -> float:
    """tau(x) = log|T'(x)| on I_s; zero exactly on the isometric circle."""
    lo, hi = g.interval_float(s)
    if not (lo <= x <= hi):
        raise PointNotInIntervalError(f"{x} not in interval of symbol {s}")
    return math.log(mobius_derivative(g.matrix(s).inverse(), x))


def cocycle_of(g: SchottkyGroup, s: int) -> IntMatrix2:
    """Group element crossed in one step from a point with first symbol s."""
    return g.matrix(s)


def cocycle_word(g: SchottkyGroup, word: Sequence[int]) -> IntMatrix2:
    """c_n over a word: exact left-to-right product of its symbol matrices."""
    return g.word_matrix(word)


def d_theta(x: Sequence[int], y: Sequence[int], theta: float) -> float:
    """theta^(first index of disagreement); 0 for equal sequences."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0,1)")
    n = min(len(x), len(y))
    for j in range(n):
        if x[j] != y[j]:
            return theta**j
    if len(x) == len(y):
        return 0.0
    return theta**n


def cylinder_interval_exact(
    g: SchottkyGroup, word: Sequence[int]
) -> Tuple[Fraction, Fraction]:
    """Exact rational endpoints of the cylinder interval prefix(word)(I_last)."""
    if len(word) == 0:
        raise InadmissibleWordError("empty word has no cylinder")
    if not is_admissible(g, word):
        raise InadmissibleWordError(f"word {word} is not admissible")
    m = IntMatrix2.identity()
    for s in word[:-1]:
        m = m * g.matrix(s)
    lo, hi = g.intervals[word[-1]]
    e1 = mobius_apply(m, lo)
    e2 = mobius_apply(m, hi)
    return (e1, e2) if e1 <= e2 else (e2, e1)


def cylinder_interval(g: SchottkyGroup, word: Sequence[int]) -> Tuple[float, float]:
    """Float cylinder interval, endpoints rounded outward from the exact ones."""
    lo, hi = cylinder_interval_exact(g, word)
    flo, fhi = float(lo), float(hi)
    if Fraction(flo) > lo:
        flo = math.nextafter(flo, -math.inf)
    if Fraction(fhi) < hi:
        fhi = math.nextafter(fhi, math.inf)
    return flo, fhi


def cylinders(g: SchottkyGroup, depth: int) -> Iterator[Tuple[Tuple[int, ...], Tuple[float, float]]]:
    """Yield (word, float interval) for all admissible words of given length.

    The interval is prefix(word)(I_last): the matrix product excludes the
    last symbol, whose interval seeds the contraction.
    """

    def rec(word: Tuple[int, ...], mat: IntMatrix2):
        if len(word) == depth:
            lo, hi = g.intervals[word[-1]]
            e1, e2 = mobius_apply(mat, lo), mobius_apply(mat, hi)
            yield word, (float(min(e1, e2)), float(max(e1, e2)))
            return
        nxt = range(g.n_symbols) if not word else g.allowed_after(word[-1])
        for s in nxt:
            if len(word) + 1 == depth:
                yield from rec(word + (s,), mat)
            else:
                yield from rec(word + (s,), mat * g.matrix(s))

    yield from rec((), IntMatrix2.identity())


def coding_of_point(g: SchottkyGroup, x: float, depth: int) -> Tuple[int, ...]:
    """Coding symbols of a point, up to `depth`.

    Points off the limit set eventually land in a gap; the coding stops
    there (shorter tuple), which is exactly the deepest cylinder containing
    the point.
    """
    out = []
    for _ in range(depth):
        try:
            s = g.symbol_of_point(x)
        except SchottkyFlowError:
            break
        out.append(s)
        x = mobius_apply(g.matrix(s).inverse(), x)
    return tuple(out)


def point_of_sequence(g: SchottkyGroup, word: Sequence[int]) -> float:
    """Limit point of a finite coding, closed up by a fixed admissible tail.

    The tail repeats one allowed symbol, so the point is prefix(word) applied
    to the attracting fixed point of that symbol's matrix.
    """
    if not is_admissible(g, word):
        raise InadmissibleWordError(f"word {word} is not admissible")
    tail = g.allowed_after(word[-1])[0] if word else 0
    m = g.matrix(tail)
    # attracting fixed point of m inside I_tail
    a, b, c, d = m.a, m.b, m.c, m.d
    disc = math.sqrt((a + d) ** 2 - 4)
    for sign in (+1, -1):
        lam = ((a + d) + sign * disc) / 2.0
        if abs(lam) > 1.0:  # attracting fixed point has multiplier lam^-2
            x = (lam - d) / c
            break
    prefix = IntMatrix2.identity()
    for s in word:
        prefix = prefix * g.matrix(s)
    return mobius_apply(prefix, x)


def roof_sum(g: SchottkyGroup, x: float, word: Sequence[int]) -> float:
    """Birkhoff sum tau_n along the orbit of x whose coding starts with word."""
    total = 0.0
    for s in word:
        total += roof(g, x, s)
        x = mobius_apply(g.matrix(s).inverse(), x)
    return total


def hyperbolicity_constants(g: SchottkyGroup, n_max: int = 6) -> Tuple[float, float, float]:
    """Measured (c0, kappa, kappa1) for the two-sided expansion estimate.

    For every cylinder of word length n <= n_max the derivative extremes of
    the n-step map over the cylinder interval are computed from the word
    matrix at the interval endpoints; kappa is the conservative square root
    of the one-step minimum, and c0, kappa1 are fitted to bound all samples.
    """
    mins = {}
    maxs = {}

    def extremes(word):
        # n-step map on C[word + (t,)] is the inverse of the prefix contraction
        m = IntMatrix2.identity()
        for s in word:
            m = m * g.matrix(s)
        n = len(word)
        vals = []
        lo, hi = g.intervals[word[-1]] if n == len(word) else (None, None)
        # evaluate |(sigma^n)'| = 1/|prefix'(y)| at the endpoints of I_t
        for t in (range(g.n_symbols) if n == 0 else g.allowed_after(word[-1])):
            lo_t, hi_t = g.intervals[t]
            for y in (lo_t, hi_t):
                der = 1.0 / float(mobius_derivative(m, y))
                vals.append(der)
        return min(vals), max(vals)

    def rec(word):
        n = len(word)
        if 1 <= n <= n_max:
            lo, hi = extremes(word)
            mins[n] = min(mins.get(n, math.inf), lo)
            maxs[n] = max(maxs.get(n, 0.0), hi)
        if n == n_max:
            return
        nxt = range(g.n_symbols) if not word else g.allowed_after(word[-1])
        for s in nxt:
            rec(word + (s,))

    rec(())
    kappa = math.sqrt(mins[1])
    c0 = min(1.0, min(mins[n] / kappa**n for n in mins))
    kappa1 = max(kappa, max(maxs[n] ** (1.0 / n) for n in maxs))
    return c0, kappa, kappa1


def cylinder_diameter_constants(g: SchottkyGroup, m_max: int = 8):
    """Fit (lower_c, kappa1, C1, rho1) with lower_c*kappa1^-m <= diam <= C1*rho1^m."""
    diam_min = {}
    diam_max = {}
    for m in range(1, m_max + 1):
        lo = math.inf
        hi = 0.0
        for _, (a, b) in cylinders(g, m):
            d = b - a
            lo = min(lo, d)
            hi = max(hi, d)
        diam_min[m] = lo
        diam_max[m] = hi
    # geometric envelopes through the measured extremes
    kappa1 = max((diam_min[1] / diam_min[m]) ** (1.0 / (m - 1)) for m in diam_min if m > 1)
    lower_c = min(diam_min[m] * kappa1 ** (m - 1) for m in diam_min)
    rho1 = max(
        (diam_max[m] / diam_max[1]) ** (1.0 / (m - 1)) for m in diam_max if m > 1
    )
    rho1 = min(rho1, 0.999999)
    C1 = max(diam_max[m] / rho1 ** (m - 1) for m in diam_max)
    report = {
        "lower_c": lower_c,
        "kappa1": kappa1,
        "C1": C1,
        "rho1": rho1,
        "diam_min": diam_min,
        "diam_max": diam_max,
    }
    return report


def contraction_ratio_constants(g: SchottkyGroup, depth: int = 6):
    """Measured (rho, p0, p1): one-step children keep >= rho of the parent
    diameter, p0-step descendants fall below rho of it, and rho^(p1-1) <= 1/8.
    """
    ratios = {}  # offset -> (min ratio, max ratio) of descendant/parent diameters
    by_depth = {}
    for m in range(1, depth + 1):
        by_depth[m] = dict(cylinders(g, m))
    for m, words in by_depth.items():
        for word, (a, b) in words.items():
            d = b - a
            for off in range(1, depth - m + 1):
                for other, (a2, b2) in by_depth[m + off].items():
                    if other[:m] != word:
                        continue
                    r = (b2 - a2) / d
                    lo, hi = ratios.get(off, (math.inf, 0.0))
                    ratios[off] = (min(lo, r), max(hi, r))
    rho = ratios[1][0]  # every child keeps at least rho of the parent
    p0 = next((off for off in sorted(ratios) if ratios[off][1] <= rho), max(ratios))
    p1 = max(2, 1 + math.ceil(math.log(1.0 / 8.0) / math.log(rho)))
    return {"rho": rho, "p0": p0, "p1": p1, "ratios": ratios}
