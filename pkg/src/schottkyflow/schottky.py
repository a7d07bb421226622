"""Schottky group data: ping-pong intervals, word balls, box-count dimension.

Symbols are indexed 0..2l-1; symbol 2i is the i-th generator and symbol 2i+1
its inverse, so the involution s -> sbar is just ``s ^ 1``.  The interval of a
symbol s is the diameter of the isometric disk of s^-1, which is where the
expanding Bowen-Series map T = s^-1 acts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np

from .arith import IntMatrix2, mobius_apply
from .errors import (
    IntervalsOverlapError,
    NotHyperbolicError,
    ResourceLimitError,
    SchottkyFlowError,
)

WORD_BALL_CAP = 5_000_000


@dataclass(frozen=True)
class ReducedWord:
    """Reduced word over the symbol alphabet with its exact matrix product."""

    symbols: Tuple[int, ...]
    matrix: IntMatrix2

    def __len__(self):
        return len(self.symbols)


@dataclass(frozen=True)
class SchottkyGroup:
    generators: Tuple[IntMatrix2, ...]
    matrices: Tuple[IntMatrix2, ...]          # one per symbol
    intervals: Tuple[Tuple[Fraction, Fraction], ...]  # closed [lo, hi] per symbol
    expansion_min: Tuple[float, ...]          # min |(s^-1)'| over allowed cylinders
    expansion_max: Tuple[float, ...]

    @property
    def n_symbols(self) -> int:
        return len(self.matrices)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    def sbar(self, s: int) -> int:
        return s ^ 1

    def matrix(self, s: int) -> IntMatrix2:
        return self.matrices[s]

    def interval_float(self, s: int) -> Tuple[float, float]:
        lo, hi = self.intervals[s]
        return float(lo), float(hi)

    def allowed_after(self, s: int) -> Tuple[int, ...]:
        return tuple(t for t in range(self.n_symbols) if t != self.sbar(s))

    def symbol_of_point(self, x: float) -> int:
        for s in range(self.n_symbols):
            lo, hi = self.interval_float(s)
            if lo <= x <= hi:
                return s
        raise SchottkyFlowError(f"point {x} lies in no symbol interval")

    def word_matrix(self, word: Sequence[int]) -> IntMatrix2:
        m = IntMatrix2.identity()
        for s in word:
            m = m * self.matrices[s]
        return m

    def is_reduced(self, word: Sequence[int]) -> bool:
        return all(word[i + 1] != self.sbar(word[i]) for i in range(len(word) - 1))


def _isometric_interval(m_inv: IntMatrix2) -> Tuple[Fraction, Fraction]:
    # isometric circle of m_inv: |c x + d| = 1, center -d/c, radius 1/|c|
    c, d = m_inv.c, m_inv.d
    if c == 0:
        raise NotHyperbolicError(m_inv.trace)
    center = Fraction(-d, c)
    radius = Fraction(1, abs(c))
    return (center - radius, center + radius)


def validate(generators: Sequence[IntMatrix2]) -> SchottkyGroup:
    """Check hyperbolicity and strict ping-pong; return the validated group.

    Intervals are computed exactly (rational endpoints); disjointness and the
    ping-pong inclusions s(I_t) in int(I_s) are endpoint checks, exact because
    each Mobius map is monotone on intervals avoiding its pole.
    """
    gens = tuple(generators)
    if len(gens) < 2:
        raise SchottkyFlowError("need at least 2 generators (non-elementary)")
    matrices: List[IntMatrix2] = []
    for i, g in enumerate(gens):
        if not g.is_hyperbolic():
            raise NotHyperbolicError(g.trace, symbol=2 * i)
        matrices.append(g)
        matrices.append(g.inverse())

    intervals = [_isometric_interval(m.inverse()) for m in matrices]

    n = len(matrices)
    for s in range(n):
        for t in range(s + 1, n):
            lo_s, hi_s = intervals[s]
            lo_t, hi_t = intervals[t]
            overlap = min(hi_s, hi_t) - max(lo_s, lo_t)
            if overlap >= 0:
                raise IntervalsOverlapError(s, t, float(overlap))

    # ping-pong inclusions and per-symbol expansion of T = s^-1 on the
    # cylinders s(I_t); (c x + d)^2 of s^-1 is monotone there, endpoints suffice
    exp_min = [math.inf] * n
    exp_max = [0.0] * n
    for s in range(n):
        m_s = matrices[s]
        m_inv = m_s.inverse()
        lo_s, hi_s = intervals[s]
        for t in range(n):
            if t == (s ^ 1):
                continue
            pts = intervals[t]
            images = sorted(mobius_apply(m_s, x) for x in pts)
            if not (lo_s < images[0] and images[1] < hi_s):
                raise SchottkyFlowError(
                    f"ping-pong failure: image of interval {t} under symbol {s} "
                    f"is not interior to interval {s}"
                )
            for x in pts:
                # |T'| at the image point s(x) equals (c_s x + d_s)^2
                expansion = float((m_s.c * x + m_s.d) ** 2)
                exp_min[s] = min(exp_min[s], expansion)
                exp_max[s] = max(exp_max[s], expansion)
        if exp_min[s] <= 1.0:
            raise SchottkyFlowError(
                f"symbol {s} is not uniformly expanding on its cylinders"
            )

    return SchottkyGroup(
        generators=gens,
        matrices=tuple(matrices),
        intervals=tuple(intervals),
        expansion_min=tuple(exp_min),
        expansion_max=tuple(exp_max),
    )


def word_ball(g: SchottkyGroup, m: int, cap: int = WORD_BALL_CAP) -> List[ReducedWord]:
    """All reduced words of length <= m, identity first, without duplicates."""
    k = g.n_symbols
    expected = word_ball_size(k // 2, m)
    if expected > cap:
        raise ResourceLimitError(f"word ball of size {expected} exceeds cap {cap}")
    out = [ReducedWord((), IntMatrix2.identity())]
    frontier = out[:]
    for _ in range(m):
        nxt = []
        for w in frontier:
            last = w.symbols[-1] if w.symbols else None
            for s in range(k):
                if last is not None and s == g.sbar(last):
                    continue
                nxt.append(ReducedWord(w.symbols + (s,), w.matrix * g.matrices[s]))
        out.extend(nxt)
        frontier = nxt
    return out


def word_ball_size(n_generators: int, m: int) -> int:
    """Closed-form count of reduced words of length <= m in a rank-l free group."""
    k = 2 * n_generators
    if m == 0:
        return 1
    return 1 + k * ((k - 1) ** m - 1) // (k - 2)


def _refine_to_diameter(g: SchottkyGroup, eps: float, depth_cap: int):
    """Maximal cylinders with diameter <= eps, as float interval arrays.

    Vectorised tree walk: a cylinder with word w ending in symbol t has
    interval prefix(w)(I_t); children append one allowed symbol.
    """
    los, his, syms = [], [], []
    # frontier rows: (2x2 prefix matrix flattened, last symbol)
    mats = []
    last = []
    for s in range(g.n_symbols):
        mats.append([1.0, 0.0, 0.0, 1.0])
        last.append(s)
    mats = np.array(mats)
    last = np.array(last, dtype=np.int64)

    done_lo, done_hi = [], []
    for _ in range(depth_cap):
        if len(last) == 0:
            break
        lo_t = np.array([g.interval_float(s)[0] for s in last])
        hi_t = np.array([g.interval_float(s)[1] for s in last])
        a, b, c, d = mats.T
        e1 = (a * lo_t + b) / (c * lo_t + d)
        e2 = (a * hi_t + b) / (c * hi_t + d)
        lo = np.minimum(e1, e2)
        hi = np.maximum(e1, e2)
        small = (hi - lo) <= eps
        done_lo.append(lo[small])
        done_hi.append(hi[small])
        keep = ~small
        mats = mats[keep]
        last = last[keep]
        if len(last) == 0:
            break
        new_mats, new_last = [], []
        for row, t in zip(mats, last):
            a, b, c, d = row
            for u in range(g.n_symbols):
                if u == g.sbar(t):
                    continue
                mu = g.matrices[u]
                new_mats.append(
                    [
                        a * mu.a + b * mu.c,
                        a * mu.b + b * mu.d,
                        c * mu.a + d * mu.c,
                        c * mu.b + d * mu.d,
                    ]
                )
                new_last.append(u)
        mats = np.array(new_mats)
        last = np.array(new_last, dtype=np.int64)
    if len(last) > 0:
        # depth cap hit; include the unfinished cylinders as-is
        lo_t = np.array([g.interval_float(s)[0] for s in last])
        hi_t = np.array([g.interval_float(s)[1] for s in last])
        a, b, c, d = mats.T
        e1 = (a * lo_t + b) / (c * lo_t + d)
        e2 = (a * hi_t + b) / (c * hi_t + d)
        done_lo.append(np.minimum(e1, e2))
        done_hi.append(np.maximum(e1, e2))
    return np.concatenate(done_lo), np.concatenate(done_hi)


def boxcount_dimension(
    g: SchottkyGroup,
    depth: int = 10,
    eps_range: Tuple[float, float] = (1e-11, 1e-3),
    n_scales: int = 15,
    full_output: bool = False,
):
    """Box-counting estimate of the limit-set dimension (coarse oracle).

    Covers the limit set by maximal cylinders of diameter <= eps and counts
    occupied eps-grid boxes; the dimension is the regression slope of
    log N(eps) against log(1/eps).  Only a cross-check for the pressure root;
    the report carries the residual and a low-confidence flag above 0.05.
    """
    eps_lo, eps_hi = eps_range
    epss = np.exp(np.linspace(math.log(eps_hi), math.log(eps_lo), n_scales))
    counts = []
    for eps in epss:
        lo, hi = _refine_to_diameter(g, eps, depth_cap=depth * 3)
        boxes = set()
        ilo = np.floor(lo / eps).astype(np.int64)
        ihi = np.floor(hi / eps).astype(np.int64)
        for i0, i1 in zip(ilo, ihi):
            boxes.update(range(i0, i1 + 1))
        counts.append(len(boxes))
    xs = np.log(1.0 / epss)
    ys = np.log(np.array(counts, dtype=float))
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = float(np.sqrt(np.mean((ys - (slope * xs + intercept)) ** 2)))
    report = {
        "dimension": float(slope),
        "residual": resid,
        "low_confidence": resid > 0.05,
        "scales": epss.tolist(),
        "counts": counts,
    }
    if full_output:
        return float(slope), report
    return float(slope)


def load_group(path) -> SchottkyGroup:
    """Read a group file: one generator per line as 'a b c d', '#' comments."""
    gens = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise SchottkyFlowError(f"bad generator line: {line!r}")
            a, b, c, d = (int(p) for p in parts)
            gens.append(IntMatrix2(a, b, c, d))
    return validate(gens)


def save_group(g: SchottkyGroup, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# schottky group generators: a b c d per line\n")
        for m in g.generators:
            fh.write(f"{m.a} {m.b} {m.c} {m.d}\n")


def reference_group() -> SchottkyGroup:
    """The fixed golden-test group: traces 5 and 6, congruence-surjective
    at 2 and 3 (its observed bad levels are exactly the multiples of 5)."""
    return validate(
        [IntMatrix2(4, 1, 3, 1), IntMatrix2(29, -167, 4, -23)]
    )


def congruence_friendly_group() -> SchottkyGroup:
    """Auxiliary ping-pong pair admissible at every level q <= 13.

    Used for diagnostics that need several admissible primes at once; the
    reference group stays the golden-test group but is inadmissible at 5.
    """
    return validate(
        [IntMatrix2(4, 1, 3, 1), IntMatrix2(9, -169, 4, -75)]
    )
