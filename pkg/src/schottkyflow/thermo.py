"""Transfer operators by Chebyshev collocation: pressure, Gibbs data, dimension.

Functions live on the 2l symbol intervals, one polynomial per interval sampled
at Chebyshev-Lobatto nodes.  The weighted pushforward over inverse branches

    (L_s h)(x) = sum_{u admissible before the symbol of x} |u'(x)|^s h(u . x)

is exactly the operator with weight e^{-s tau} since tau(u.x) = -log|u'(x)|.
Branch maps are analytic contractions between intervals, so eigendata
converges super-exponentially in the order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .arith import IntMatrix2, mobius_apply, mobius_derivative, orbit_distance
from .coding import is_admissible
from .errors import (
    InadmissibleWordError,
    NoBracketError,
    NonPerronError,
)
from .schottky import ReducedWord, SchottkyGroup


def _lobatto(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto points on [-1,1] and their barycentric weights."""
    j = np.arange(n)
    x = np.cos(np.pi * j / (n - 1))
    w = np.where(j % 2 == 0, 1.0, -1.0)
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


class CollocationGrid:
    """Per-symbol Chebyshev-Lobatto nodes with branch data for the operator."""

    def __init__(self, g: SchottkyGroup, order: int):
        if order < 4:
            raise ValueError("order must be >= 4")
        self.group = g
        self.order = order
        self.k = g.n_symbols
        ref, bw = _lobatto(order)
        self._bary = bw
        nodes = np.empty((self.k, order))
        for s in range(self.k):
            lo, hi = g.interval_float(s)
            nodes[s] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * ref
        self.nodes = nodes
        self.node_flat = nodes.reshape(-1)
        # branch_points[t][u] = u . nodes_t, branch_absder[t][u] = |u'(nodes_t)|
        self.branch_points = {}
        self.branch_absder = {}
        for t in range(self.k):
            for u in range(self.k):
                if t == g.sbar(u):
                    continue
                m = g.matrix(u)
                x = nodes[t]
                den = m.c * x + m.d
                self.branch_points[(t, u)] = (m.a * x + m.b) / den
                self.branch_absder[(t, u)] = 1.0 / den**2
        self._eval_cache = {}

    def sym_slice(self, s: int) -> slice:
        return slice(s * self.order, (s + 1) * self.order)

    def eval_weights(self, s: int, pts: np.ndarray) -> np.ndarray:
        """Barycentric evaluation matrix from the nodes of interval s to pts."""
        pts = np.asarray(pts, dtype=float)
        xs = self.nodes[s]
        diff = pts[:, None] - xs[None, :]
        out = np.zeros((len(pts), self.order))
        exact = np.isclose(diff, 0.0, atol=1e-300)
        hit = exact.any(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = self._bary[None, :] / diff
            out = q / q.sum(axis=1)[:, None]
        if hit.any():
            rows = np.nonzero(hit)[0]
            out[rows] = 0.0
            for r in rows:
                out[r, np.nonzero(exact[r])[0][0]] = 1.0
        return out

    def interpolate(self, s: int, values_s: np.ndarray, pts) -> np.ndarray:
        return self.eval_weights(s, np.atleast_1d(np.asarray(pts, float))) @ values_s

    def branch_eval_matrix(self, t: int, u: int) -> np.ndarray:
        key = (t, u)
        if key not in self._eval_cache:
            self._eval_cache[key] = self.eval_weights(u, self.branch_points[key])
        return self._eval_cache[key]


@dataclass
class TransferOperator:
    """Dense collocation matrix of L_{-s tau} (raw) or of the normalized family."""

    s: complex
    order: int
    grid: CollocationGrid
    matrix: np.ndarray
    normalized: bool = False
    log_weight: Optional[np.ndarray] = None  # d(matrix)/ds = matrix * log_weight

    @property
    def group(self):
        return self.grid.group


@dataclass
class GibbsData:
    """Leading eigendata of the operator at s = delta + a.

    nu are dual weights at nodes with nu . 1 = 1 and nu . h = 1; for a = 0 and
    calibrated delta the eigenvalue is 1 to discretisation accuracy.
    """

    a: Optional[float]
    lam: float
    h: np.ndarray
    nu: np.ndarray
    grid: CollocationGrid
    delta: Optional[float] = None
    base: Optional["GibbsData"] = None
    _lam_cache: dict = field(default_factory=dict, repr=False)

    @property
    def group(self):
        return self.grid.group

    @property
    def invariant_weights(self) -> np.ndarray:
        """Node weights of the shift-invariant probability nu_inv = h0 d(nu)."""
        root = self.base if self.base is not None else self
        return root.nu * root.h

    def lam_at(self, a: float) -> float:
        """Leading eigenvalue of the raw operator at s = delta + a (cached)."""
        root = self.base if self.base is not None else self
        if a == 0.0:
            return root.lam
        if a not in root._lam_cache:
            op = build(root.group, root.delta + a, root.grid.order, grid=root.grid)
            root._lam_cache[a] = leading(op).lam
        return root._lam_cache[a]

    def gibbs_at(self, a: float) -> "GibbsData":
        root = self.base if self.base is not None else self
        if a == 0.0:
            return root
        key = ("gd", a)
        if key not in root._lam_cache:
            op = build(root.group, root.delta + a, root.grid.order, grid=root.grid)
            gd = leading(op)
            gd.a = a
            gd.delta = root.delta
            gd.base = root
            root._lam_cache[key] = gd
            root._lam_cache[a] = gd.lam
        return root._lam_cache[key]


def build(
    g: SchottkyGroup, s: complex, order: int, grid: Optional[CollocationGrid] = None
) -> TransferOperator:
    """Collocation matrix of the raw transfer operator with weight e^{-s tau}."""
    if grid is None:
        grid = CollocationGrid(g, order)
    k, p = grid.k, grid.order
    n = k * p
    cplx = isinstance(s, complex)
    mat = np.zeros((n, n), dtype=complex if cplx else float)
    logw = np.zeros((n, n))
    for t in range(k):
        rows = grid.sym_slice(t)
        for u in range(k):
            if t == g.sbar(u):
                continue
            w = grid.branch_absder[(t, u)]
            lw = np.log(w)
            ev = grid.branch_eval_matrix(t, u)
            block = (np.exp(s * lw))[:, None] * ev  # w^s = e^{-s tau} rowwise
            mat[rows, grid.sym_slice(u)] = block
            logw[rows, grid.sym_slice(u)] = lw[:, None]
    return TransferOperator(
        s=s, order=order, grid=grid, matrix=mat, normalized=False, log_weight=logw
    )


def leading(op: TransferOperator) -> GibbsData:
    """Leading eigen-triple (lam, h, nu) of a real-parameter operator.

    Raises NonPerron when the leading eigenvalue is not simple, real and
    positive with a positive eigenfunction -- the discretisation failed.
    """
    if np.iscomplexobj(op.matrix) and abs(complex(op.s).imag) > 0:
        raise NonPerronError("leading eigendata requires a real parameter s")
    m = np.real(op.matrix)
    vals, vecs = np.linalg.eig(m)
    idx = np.argsort(-np.abs(vals))
    lam = vals[idx[0]]
    if abs(lam.imag) > 1e-9 * abs(lam) or lam.real <= 0:
        raise NonPerronError(f"leading eigenvalue {lam} is not real positive")
    if len(idx) > 1 and abs(vals[idx[1]] / lam) > 1.0 - 1e-9:
        raise NonPerronError("leading eigenvalue is not simple")
    h = np.real(vecs[:, idx[0]])
    if h.sum() < 0:
        h = -h
    if (h <= 0).any():
        raise NonPerronError("leading eigenvector is not strictly positive")
    lvals, lvecs = np.linalg.eig(m.T)
    lidx = int(np.argmin(np.abs(lvals - lam)))
    nu = np.real(lvecs[:, lidx])
    if nu.sum() < 0:
        nu = -nu
    nu = nu / nu.sum()  # nu(1) = 1
    h = h / (nu @ h)  # nu(h) = 1
    return GibbsData(a=None, lam=float(lam.real), h=h, nu=nu, grid=op.grid)


def pressure(g: SchottkyGroup, s: float, order: int, grid=None) -> float:
    """log of the leading eigenvalue; strictly decreasing and convex in s."""
    return math.log(leading(build(g, s, order, grid=grid)).lam)


def _pressure_and_slope(g, s, order, grid):
    op = build(g, s, order, grid=grid)
    gd = leading(op)
    num = gd.nu @ (op.matrix * op.log_weight) @ gd.h
    den = gd.nu @ gd.h
    lam_prime = num / den
    return math.log(gd.lam), lam_prime / gd.lam


def solve_delta(
    g: SchottkyGroup,
    order: int = 28,
    tol: float = 1e-13,
    grid: Optional[CollocationGrid] = None,
) -> float:
    """Root of pressure(s) = 0 in (0,1): bisection to 1e-4, then Newton."""
    if grid is None:
        grid = CollocationGrid(g, order)
    p0 = pressure(g, 0.0, order, grid=grid)
    p1 = pressure(g, 1.0, order, grid=grid)
    if p0 <= 0 or p1 >= 0:
        raise NoBracketError(f"pressure(0)={p0}, pressure(1)={p1}: no root bracket")
    lo, hi = 0.0, 1.0
    while hi - lo > 1e-4:
        mid = 0.5 * (lo + hi)
        if pressure(g, mid, order, grid=grid) > 0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    for _ in range(60):
        val, slope = _pressure_and_slope(g, s, order, grid)
        step = val / slope
        s = s - step
        if abs(val) < tol and abs(step) < 1e-15 + tol:
            break
    return s


def gibbs_system(
    g: SchottkyGroup,
    order: int = 28,
    delta: Optional[float] = None,
    tol: float = 1e-13,
) -> GibbsData:
    """Calibrated a = 0 Gibbs data: delta solved so the eigenvalue is 1."""
    grid = CollocationGrid(g, order)
    if delta is None:
        delta = solve_delta(g, order, tol=tol, grid=grid)
    gd = leading(build(g, delta, order, grid=grid))
    gd.a = 0.0
    gd.delta = delta
    return gd


def normalized_matrix(gd: GibbsData, a: float, b: float) -> np.ndarray:
    """Dense matrix of the normalized operator with weight e^{f^(a) + ib tau}.

    Conjugation by h0 and division by lam_a; at a = b = 0 the constant
    function is fixed and the dual fixes the invariant weights.
    """
    root = gd.base if gd.base is not None else gd
    s = complex(root.delta + a, 0.0) - 1j * b if b != 0.0 else root.delta + a
    # weight w^(delta+a-ib) with w = |branch derivative|; e^{-s tau} = w^s
    op = build(root.group, s if b != 0.0 else float(root.delta + a), root.grid.order, grid=root.grid)
    lam_a = root.lam_at(a)
    h0 = root.h
    return (op.matrix * h0[None, :]) / (lam_a * h0[:, None])


def pressure_curve(g: SchottkyGroup, s_values: Sequence[float], order: int):
    """Rows (s, log_lambda, order) for the CSV emitter."""
    grid = CollocationGrid(g, order)
    return [(float(s), pressure(g, float(s), order, grid=grid), order) for s in s_values]


def gibbs_cylinder_measure(gd: GibbsData, word: Sequence[int]) -> float:
    """Conformal measure nu_a of the cylinder C[word].

    For a word of n+1 symbols this is lam_a^-n nu_a(|v'|^(delta+a) 1_{I_last})
    with v the contraction by the first n symbols, evaluated through the
    discretised dual weights on the last interval.
    """
    g = gd.group
    if len(word) == 0:
        raise InadmissibleWordError("empty word")
    if not is_admissible(g, word):
        raise InadmissibleWordError(f"word {word} is not admissible")
    root = gd.base if gd.base is not None else gd
    a = gd.a if gd.a is not None else 0.0
    delta = root.delta
    lam = gd.lam
    grid = gd.grid
    n = len(word) - 1
    last = word[-1]
    if n == 0:
        return float(gd.nu[grid.sym_slice(last)].sum())
    v = IntMatrix2.identity()
    for s in word[:-1]:
        v = v * g.matrix(s)
    y = grid.nodes[last]
    den = v.c * y + v.d
    absder = 1.0 / den**2
    weights = absder ** (delta + a)
    nu_last = gd.nu[grid.sym_slice(last)]
    return float(lam ** (-n) * (nu_last @ weights))


def invariant_cylinder_measure(gd: GibbsData, word: Sequence[int]) -> float:
    """Shift-invariant measure (h0 weighted) of the cylinder C[word]."""
    g = gd.group
    root = gd.base if gd.base is not None else gd
    if not is_admissible(g, word):
        raise InadmissibleWordError(f"word {word} is not admissible")
    grid = root.grid
    delta = root.delta
    n = len(word) - 1
    last = word[-1]
    nu_last = root.nu[grid.sym_slice(last)]
    if n == 0:
        h_last = root.h[grid.sym_slice(last)]
        return float(nu_last @ h_last)
    v = IntMatrix2.identity()
    for s in word[:-1]:
        v = v * g.matrix(s)
    y = grid.nodes[last]
    den = v.c * y + v.d
    absder = 1.0 / den**2
    vy = (v.a * y + v.b) / den
    h_at_vy = grid.interpolate(word[0], root.h[grid.sym_slice(word[0])], vy)
    return float(root.lam ** (-n) * (nu_last @ (absder**delta * h_at_vy)))


# ---------------------------------------------------------------------------
# shadow lemma diagnostic


def _geodesic_point_distance_sinh(z: complex, xi: float) -> float:
    """sinh of the distance from z to the full geodesic through i and xi."""
    xistar = -1.0 / xi
    c = 0.5 * (xi + xistar)
    rho = 0.5 * abs(xi - xistar)
    return abs(abs(z - c) ** 2 - rho**2) / (2.0 * rho * z.imag)


def shadow_interval(z: complex, r: float) -> Tuple[float, float]:
    """Boundary interval of directions from i whose geodesics pass B_r(z)."""
    # endpoint of the ray from i through z
    x, y = z.real, z.imag
    if abs(x) < 1e-12:
        x = 1e-12
    x0 = (abs(z) ** 2 - 1.0) / (2.0 * x)
    rad = math.sqrt(1.0 + x0 * x0)
    xi0 = x0 + rad if x > 0 else x0 - rad
    target = math.sinh(r)

    def f(xi):
        return _geodesic_point_distance_sinh(z, xi) - target

    # expand brackets outward from xi0 on both sides, then bisect
    out = []
    for direction in (+1, -1):
        step = max(1e-6, abs(xi0) * 1e-6)
        a = xi0
        b = xi0 + direction * step
        while f(b) < 0:
            step *= 2.0
            a = b
            b = xi0 + direction * step
            if abs(step) > 1e12:
                break
        lo, hi = (a, b) if direction > 0 else (b, a)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (f(mid) < 0) == (direction > 0):
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    hi_side, lo_side = out
    return (min(lo_side, hi_side), max(lo_side, hi_side))


@dataclass
class ShadowReport:
    ratio: float
    r: float
    distance: float
    shadow: Tuple[float, float]
    measure: float


def shadow_check(
    g: SchottkyGroup,
    gd: GibbsData,
    gamma: ReducedWord,
    r: float = 1.5,
    depth_cap: int = 24,
) -> ShadowReport:
    """Measured Sullivan shadow ratio mu(shadow) * e^(delta d(i, gamma i)).

    The shadow of B_r(gamma.i) seen from i is intersected with the cylinder
    tree; cylinders inside count fully, straddlers are refined to the cap.
    """
    from .coding import cylinder_interval  # local import to avoid cycle

    root = gd.base if gd.base is not None else gd
    m = gamma.matrix
    z = complex(m.a * 1j + m.b) / complex(m.c * 1j + m.d)
    dist = orbit_distance(m)
    lo, hi = shadow_interval(z, r)

    total = 0.0

    def rec(word):
        nonlocal total
        a, b = cylinder_interval(g, word)
        if b < lo or a > hi:
            return
        if lo <= a and b <= hi:
            total += gibbs_cylinder_measure(root, word)
            return
        if len(word) >= depth_cap:
            total += gibbs_cylinder_measure(root, word)
            return
        for s in g.allowed_after(word[-1]):
            rec(word + (s,))

    for s0 in range(g.n_symbols):
        rec((s0,))

    ratio = total * math.exp(root.delta * dist)
    return ShadowReport(ratio=ratio, r=r, distance=dist, shadow=(lo, hi), measure=total)
