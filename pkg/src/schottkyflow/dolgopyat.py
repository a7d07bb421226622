"""Damped transfer operators: cones, sections, oscillation, contraction audit.

Everything here evaluates the operators by exact N-step branch sums at
arbitrary points (the damping sets are far below any node resolution), and
integrates against the invariant measure by positive cylinder quadrature.
The audit verifies the stated operator properties at desk scale: cone
preservation, pointwise domination of the twisted operator, and strict L^2
contraction; working constants are measured and recorded, never assumed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arith import IntMatrix2, mobius_apply
from .coding import (
    coding_of_point,
    contraction_ratio_constants,
    cylinder_interval,
    cylinders,
    hyperbolicity_constants,
    is_admissible,
)
from .errors import (
    InadmissibleWordError,
    NonPositiveError,
    NotDenseError,
    SchottkyFlowError,
)
from .schottky import SchottkyGroup
from .thermo import GibbsData, invariant_cylinder_measure


# ---------------------------------------------------------------------------
# the cylinder metric and cones


def metric_D(g: SchottkyGroup, u: float, up: float, depth_cap: int = 30) -> float:
    """Infimum of diameters of cylinders containing both points.

    Points in different base intervals share no cylinder; the convention
    value is the larger base-interval diameter (callers treat it as flagged).
    """
    if u == up:
        return 0.0
    su = g.symbol_of_point(u)
    sv = g.symbol_of_point(up)
    if su != sv:
        du = g.interval_float(su)
        dv = g.interval_float(sv)
        return max(du[1] - du[0], dv[1] - dv[0])
    cu = coding_of_point(g, u, depth_cap)
    cv = coding_of_point(g, up, depth_cap)
    kmax = min(len(cu), len(cv), depth_cap)
    k = 0
    while k < kmax and cu[k] == cv[k]:
        k += 1
    word = cu[: max(k, 1)]
    lo, hi = cylinder_interval(g, word)
    return hi - lo


def cone_check(
    g: SchottkyGroup,
    pts: np.ndarray,
    h_vals: np.ndarray,
    E: float,
    d_matrix: Optional[np.ndarray] = None,
) -> bool:
    """True iff |h(u)-h(u')| <= E h(u') D(u,u') over same-interval pairs."""
    if (np.asarray(h_vals) <= 0).any():
        raise NonPositiveError("cone functions must be strictly positive")
    return cone_ratio(g, pts, h_vals, d_matrix) <= E * (1 + 1e-12)


def cone_ratio(
    g: SchottkyGroup,
    pts: np.ndarray,
    h_vals: np.ndarray,
    d_matrix: Optional[np.ndarray] = None,
) -> float:
    """max over same-interval pairs of |h(u)-h(u')| / (h(u') D(u,u'))."""
    pts = np.asarray(pts, float)
    h_vals = np.asarray(h_vals, float)
    if d_matrix is None:
        d_matrix = pairwise_D(g, pts)
    best = 0.0
    n = len(pts)
    for i in range(n):
        for j in range(n):
            if i == j or not np.isfinite(d_matrix[i, j]) or d_matrix[i, j] <= 0:
                continue
            r = abs(h_vals[i] - h_vals[j]) / (h_vals[j] * d_matrix[i, j])
            best = max(best, r)
    return best


def pairwise_D(g: SchottkyGroup, pts: np.ndarray, depth_cap: int = 30) -> np.ndarray:
    """D over all pairs; inf (excluded from checks) across base intervals."""
    pts = np.asarray(pts, float)
    n = len(pts)
    syms = [g.symbol_of_point(x) for x in pts]
    codes = [coding_of_point(g, x, depth_cap) for x in pts]
    out = np.full((n, n), np.inf)
    cache: Dict[Tuple[int, ...], float] = {}
    for i in range(n):
        out[i, i] = 0.0
        for j in range(i + 1, n):
            if syms[i] != syms[j]:
                continue
            kmax = min(len(codes[i]), len(codes[j]), depth_cap)
            k = 0
            while k < kmax and codes[i][k] == codes[j][k]:
                k += 1
            word = codes[i][: max(k, 1)]
            if word not in cache:
                lo, hi = cylinder_interval(g, word)
                cache[word] = hi - lo
            out[i, j] = out[j, i] = cache[word]
    return out


# ---------------------------------------------------------------------------
# inverse-branch sections


@dataclass(frozen=True)
class Section:
    """Inverse branch of the N-step map given by a fixed admissible word."""

    word: Tuple[int, ...]
    matrix: IntMatrix2

    @property
    def depth(self) -> int:
        return len(self.word)

    def __call__(self, x):
        m = self.matrix
        return (m.a * np.asarray(x) + m.b) / (m.c * np.asarray(x) + m.d)

    def abs_derivative(self, x):
        m = self.matrix
        return 1.0 / (m.c * np.asarray(x) + m.d) ** 2

    def domain_symbols(self, g: SchottkyGroup) -> Tuple[int, ...]:
        return g.allowed_after(self.word[-1])


def branch_sections(
    g: SchottkyGroup, N: int, w1: Sequence[int], w2: Sequence[int]
) -> Tuple[Section, Section]:
    """Two sections of the N-step shift with disjoint closed images.

    The words must be admissible of length N, have distinct first symbols
    (so their image cylinders sit in different base intervals) and the same
    last symbol (so they are defined over the same targets).
    """
    w1, w2 = tuple(w1), tuple(w2)
    for w in (w1, w2):
        if len(w) != N or not is_admissible(g, w):
            raise InadmissibleWordError(f"word {w} is not an admissible length-{N} word")
    if w1[0] == w2[0]:
        raise SchottkyFlowError("sections need distinct first symbols")
    if w1[-1] != w2[-1]:
        raise SchottkyFlowError("sections need identical last symbols")
    m1 = IntMatrix2.identity()
    for s in w1:
        m1 = m1 * g.matrix(s)
    m2 = IntMatrix2.identity()
    for s in w2:
        m2 = m2 * g.matrix(s)
    return Section(w1, m1), Section(w2, m2)


def default_sections(g: SchottkyGroup, N: int) -> Tuple[Section, Section]:
    """Golden choice: powers of the first generator vs one leading second
    generator; both end in symbol 0, so the common domain misses only I_1."""
    w1 = (0,) * N
    w2 = (2,) + (0,) * (N - 1)
    return branch_sections(g, N, w1, w2)


def temporal_distance(
    g: SchottkyGroup,
    v1: Section,
    v2: Section,
    N: int,
    u: float,
    up: float,
) -> Tuple[float, float]:
    """(Delta(u) - Delta(u'), |difference| / d(u, u')) for the section pair.

    Delta = tau_N o v2 - tau_N o v1 = log|v1'| - log|v2'|; the ratio is the
    finite-difference estimate of the non-integrability constant.
    """
    def delta(x):
        return math.log(abs(v1.abs_derivative(x))) - math.log(abs(v2.abs_derivative(x)))

    diff = delta(u) - delta(up)
    d = abs(u - up)
    return diff, (abs(diff) / d if d > 0 else 0.0)


def nli_delta0(
    g: SchottkyGroup,
    v1: Section,
    v2: Section,
    interval: Tuple[float, float],
    n_grid: int = 64,
) -> float:
    """Measured infimum of the oscillation ratio over well-separated pairs."""
    lo, hi = interval
    xs = np.linspace(lo, hi, n_grid)
    best = math.inf
    min_sep = (hi - lo) / 4
    for i in range(n_grid):
        for j in range(i + 1, n_grid):
            if xs[j] - xs[i] < min_sep:
                continue
            _, ratio = temporal_distance(g, v1, v2, v1.depth, xs[i], xs[j])
            best = min(best, ratio)
    return best


# ---------------------------------------------------------------------------
# cylinder families and damping weights


@dataclass
class CylinderFamily:
    """Maximal cylinders below the frequency scale with their sub-cylinders."""

    b: float
    eps1: float
    n1: int
    offset: int
    base_symbol: int
    members: List[dict]          # word, interval, paper length
    subcylinders: List[dict]     # word, interval, member index, Z data
    sections: Tuple[Section, Section]
    x_intervals: Dict[Tuple[int, int], Tuple[float, float]]
    length_violations: List[int]

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def n_sub(self) -> int:
        return len(self.subcylinders)

    def subs_of_member(self, m: int) -> List[int]:
        return [j for j, d in enumerate(self.subcylinders) if d["member"] == m]


def build_family(
    g: SchottkyGroup,
    b: float,
    eps1: float,
    sections: Optional[Tuple[Section, Section]] = None,
    base_symbol: int = 0,
    offset: Optional[int] = None,
    n1: int = 1,
    depth_cap: int = 40,
) -> CylinderFamily:
    """Maximal cylinders inside the base interval with diam <= eps1/|b|.

    Top-down refinement guarantees maximality (a member's parent exceeded the
    target diameter).  Sub-cylinders extend members by `offset` symbols
    (measured p0*p1 by default, capped for feasibility); their shift images
    Z_j and section images X_{i,j} are recorded for the damping weights.
    """
    if abs(b) < 1.0:
        raise SchottkyFlowError("the family needs |b| >= 1")
    if sections is None:
        sections = default_sections(g, max(2, n1 + 1))
    v1, v2 = sections
    target = eps1 / abs(b)
    members = []

    # maximal cylinders below the target diameter, refined further when
    # needed to honour the length >= n1+1 floor (automatic for the paper's
    # tiny eps1, explicit at desk scale)
    def rec(word):
        lo, hi = cylinder_interval(g, word)
        if hi - lo <= target and len(word) - 1 >= n1 + 1:
            members.append({"word": word, "interval": (lo, hi), "length": len(word) - 1})
            return
        if len(word) >= depth_cap:
            return
        for s in g.allowed_after(word[-1]):
            rec(word + (s,))

    for s in g.allowed_after(base_symbol):
        rec((base_symbol, s))

    if offset is None:
        rep = contraction_ratio_constants(g, 5)
        offset = min(2, rep["p0"] * rep["p1"])

    violations = [i for i, m in enumerate(members) if m["length"] < n1 + 1]

    subcylinders = []
    x_intervals = {}
    for mi, m in enumerate(members):
        stack = [m["word"]]
        for _ in range(offset):
            stack = [w + (s,) for w in stack for s in g.allowed_after(w[-1])]
        for w in stack:
            z_word = w[n1:]
            z_lo, z_hi = cylinder_interval(g, z_word)
            # sections are defined on targets allowed after their last symbol
            if z_word[0] == g.sbar(v1.word[-1]) or z_word[0] == g.sbar(v2.word[-1]):
                continue
            j = len(subcylinders)
            lo, hi = cylinder_interval(g, w)
            subcylinders.append(
                {
                    "word": w,
                    "interval": (lo, hi),
                    "member": mi,
                    "z_word": z_word,
                    "z_interval": (z_lo, z_hi),
                }
            )
            for i, v in ((1, v1), (2, v2)):
                e1, e2 = float(v(z_lo)), float(v(z_hi))
                x_intervals[(i, j)] = (min(e1, e2), max(e1, e2))

    return CylinderFamily(
        b=b,
        eps1=eps1,
        n1=n1,
        offset=offset,
        base_symbol=base_symbol,
        members=members,
        subcylinders=subcylinders,
        sections=sections,
        x_intervals=x_intervals,
        length_violations=violations,
    )


@dataclass
class DolgopyatWeights:
    """Damping data: index set J over (branch i, subcylinder j) pairs."""

    J: frozenset
    mu_param: float
    family: CylinderFamily
    forced: bool = False

    def is_dense(self) -> bool:
        covered = {self.family.subcylinders[j]["member"] for (_, j) in self.J}
        return covered == set(range(self.family.n_members))

    def validate(self):
        if not (0.0 < self.mu_param < 1.0) and self.J:
            raise SchottkyFlowError("mu must lie in (0,1)")
        if not self.forced and not self.is_dense():
            raise NotDenseError(
                f"J covers {len({self.family.subcylinders[j]['member'] for (_, j) in self.J})}"
                f" of {self.family.n_members} maximal cylinders"
            )

    def damping_for_word(self, word: Tuple[int, ...], x: np.ndarray) -> np.ndarray:
        """beta_J at the branch points of `word` over targets x.

        v_word(x) lies in X_(i,j) iff word is the section word w_i and x lies
        in the shifted subcylinder Z_j; this membership is exact.
        """
        out = np.ones(len(x))
        v1, v2 = self.family.sections
        for i, v in ((1, v1), (2, v2)):
            if word != v.word:
                continue
            for (ii, j) in self.J:
                if ii != i:
                    continue
                z_lo, z_hi = self.family.subcylinders[j]["z_interval"]
                mask = (x >= z_lo) & (x <= z_hi)
                out[mask] = 1.0 - self.mu_param
        return out


# ---------------------------------------------------------------------------
# exact N-step branch evaluation


def _admissible_words(g: SchottkyGroup, N: int) -> List[Tuple[Tuple[int, ...], IntMatrix2]]:
    out = []

    def rec(word, mat):
        if len(word) == N:
            out.append((word, mat))
            return
        nxt = range(g.n_symbols) if not word else g.allowed_after(word[-1])
        for s in nxt:
            rec(word + (s,), mat * g.matrix(s))

    rec((), IntMatrix2.identity())
    return out


class BranchEvaluator:
    """Evaluates normalized N-step branch sums at arbitrary points.

    Weight of branch word w at target x:
        lam_a^-N |w'(x)|^(delta+a) h0(w.x)/h0(x) e^{-i b log|w'(x)|}
    which is exactly e^{(f_N^(a) + i b tau_N)(w.x)}.
    """

    def __init__(self, g: SchottkyGroup, gd: GibbsData, N: int, mg=None):
        self.g = g
        root = gd.base if gd.base is not None else gd
        self.gd = root
        self.N = N
        self.words = _admissible_words(g, N)
        self.word_perms = None
        if mg is not None and mg.order > 1:
            self.word_perms = {}
            inv = mg.inverse_indices()
            for word, mat in self.words:
                j = mg.idx_of(mat)
                self.word_perms[word] = mg.right_mult_perm(int(inv[j]))
        # h0 as per-symbol Chebyshev coefficients: interpolation in the hot
        # loop is a chebval, not a barycentric matrix build
        grid = root.grid
        ref = np.cos(np.pi * np.arange(grid.order) / (grid.order - 1))
        self._maps = []
        self._coeffs = []
        for s in range(grid.k):
            lo, hi = g.interval_float(s)
            mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
            self._maps.append((mid, rad))
            vals = root.h[grid.sym_slice(s)]
            self._coeffs.append(np.polynomial.chebyshev.chebfit(ref, vals, grid.order - 1))

    def h0_at(self, x: np.ndarray, sym: int) -> np.ndarray:
        mid, rad = self._maps[sym]
        z = (np.asarray(x, float) - mid) / rad
        return np.polynomial.chebyshev.chebval(z, self._coeffs[sym])

    def sum(
        self,
        x: np.ndarray,
        target_symbol: int,
        func: Callable[[np.ndarray, int], np.ndarray],
        a: float = 0.0,
        b: float = 0.0,
        weights: Optional[DolgopyatWeights] = None,
    ):
        """sum over branches of weight * [beta] * func(branch point)."""
        g, gd = self.g, self.gd
        x = np.asarray(x, float)
        lam_a = gd.lam_at(a)
        delta = gd.delta
        h0x = self.h0_at(x, target_symbol)
        out = None
        for word, mat in self.words:
            if target_symbol == g.sbar(word[-1]):
                continue
            den = mat.c * x + mat.d
            absder = 1.0 / den**2
            y = (mat.a * x + mat.b) / den
            w = (absder ** (delta + a)) * self.h0_at(y, word[0]) / (
                lam_a**self.N * h0x
            )
            if b != 0.0:
                w = w * np.exp(-1j * b * np.log(absder))
            if weights is not None:
                w = w * weights.damping_for_word(word, x)
            vals = func(y, word[0])
            vals = np.asarray(vals)
            if vals.ndim == 2:
                if self.word_perms is not None:
                    vals = vals[:, self.word_perms[word]]
                term = w[:, None] * vals
            else:
                term = w * vals
            out = term if out is None else out + term
        return out


def dolgopyat_apply(
    g: SchottkyGroup,
    gd: GibbsData,
    weights: DolgopyatWeights,
    a: float,
    N: int,
    h: np.ndarray,
) -> np.ndarray:
    """Damped operator on node data: L^N_{a0}(beta_J h) evaluated at nodes."""
    weights.validate()
    root = gd.base if gd.base is not None else gd
    if (np.asarray(h) <= 0).any():
        raise NonPositiveError("cone functions must be positive")
    ev = BranchEvaluator(g, root, N)
    grid = root.grid

    def h_func(pts, sym):
        return grid.interpolate(sym, np.asarray(h)[grid.sym_slice(sym)], pts)

    out = np.empty(grid.k * grid.order)
    for t in range(grid.k):
        pts = grid.nodes[t]
        out[grid.sym_slice(t)] = np.real(
            ev.sum(pts, t, h_func, a=a, b=0.0, weights=weights)
        )
    return out


# ---------------------------------------------------------------------------
# shape constants and quadrature


def measured_T0(g: SchottkyGroup, gd: GibbsData, a_values=(0.0, 0.05, -0.05)) -> float:
    """Essential d-Lipschitz bound for tau and f^(a) over one-cylinders,
    plus the sup-norm part, measured on depth-3 cylinder endpoints."""
    root = gd.base if gd.base is not None else gd
    grid = root.grid
    delta = root.delta
    sup_tau = 0.0
    lip = 0.0
    sup_f = 0.0
    for word, (lo, hi) in cylinders(g, 3):
        s0, s1 = word[0], word[1]
        minv = g.matrix(s0).inverse()

        def tau_at(x):
            return math.log(1.0 / (minv.c * x + minv.d) ** 2)

        def h0_at(x, sym):
            return float(grid.interpolate(sym, root.h[grid.sym_slice(sym)], [x])[0])

        t_lo, t_hi = tau_at(lo), tau_at(hi)
        sup_tau = max(sup_tau, abs(t_lo), abs(t_hi))
        d = hi - lo
        if d > 0:
            lip = max(lip, abs(t_hi - t_lo) / d)
        for aa in a_values:
            for x, t in ((lo, t_lo), (hi, t_hi)):
                sx = mobius_apply(minv, x)
                f = (
                    -(delta + aa) * t
                    + math.log(h0_at(x, s0))
                    - math.log(h0_at(sx, s1))
                    - math.log(root.lam_at(aa))
                )
                sup_f = max(sup_f, abs(f))
        for aa in a_values:
            f_lo = -(delta + aa) * t_lo
            f_hi = -(delta + aa) * t_hi
            if d > 0:
                lip = max(lip, abs((f_hi - f_lo)) / d)
    return max(sup_f + sup_tau, lip)


@dataclass
class AuditConfig:
    """Working constants for the audit, derived from measured quantities.

    The exact sufficiency thresholds are recorded (`*_shape`) but the used
    values are clamped to remain numerically visible; the audit verifies the
    operator inequalities with the used values.
    """

    N: int
    E: float
    eps1: float
    mu: float
    n1: int
    c0: float
    kappa: float
    kappa1: float
    T0: float
    A0_shape: float
    eps1_shape: float
    mu_shape: float
    rho: float
    p0: int
    p1: int
    delta0_hat: float
    offset: int

    def as_dict(self):
        return dict(self.__dict__)


def default_config(g: SchottkyGroup, gd: GibbsData, N: Optional[int] = None) -> AuditConfig:
    c0, kappa, kappa1 = hyperbolicity_constants(g, 4)
    kappa1_step = max(g.expansion_max)
    T0 = measured_T0(g, gd)
    A0 = 2.0 / c0 * math.exp(T0 / (c0 * (kappa - 1))) * max(1.0, T0 / (kappa - 1))
    rep = contraction_ratio_constants(g, 5)
    rho, p0, p1 = rep["rho"], rep["p0"], rep["p1"]
    n1 = 1
    E = max(4.0, 2.0 * T0 / (kappa - 1))
    if N is None:
        N = max(n1 + 1, math.ceil(math.log(max(E / (4 * c0), 6.0)) / math.log(kappa)))
        N = min(N, 3)
    r0 = min(hi - lo for lo, hi in (g.interval_float(s) for s in range(g.n_symbols))) / 2
    v1, v2 = default_sections(g, N)
    lo0, hi0 = g.interval_float(0)
    delta0_hat = nli_delta0(g, v1, v2, (lo0, hi0))
    eps1_shape = min(
        c0**2 * (kappa - 1) / (16 * T0 * kappa1_step),
        c0 * r0 / kappa1_step,
        delta0_hat / 2 if delta0_hat > 0 else math.inf,
    )
    offset = min(2, p0 * p1)
    c2 = delta0_hat * rho / 16
    mu_shape = min(
        0.25,
        c0**2 * rho ** (p0 * p1 + 2) * eps1_shape / (4 * kappa1_step**N),
        c2**2 * eps1_shape**2 / 256,
    )
    eps1 = max(eps1_shape, 5e-3)  # keep members at tractable depth
    mu = min(max(mu_shape, 1e-12), 0.25)
    return AuditConfig(
        N=N,
        E=E,
        eps1=eps1,
        mu=mu,
        n1=n1,
        c0=c0,
        kappa=kappa,
        kappa1=kappa1,
        T0=T0,
        A0_shape=A0,
        eps1_shape=eps1_shape,
        mu_shape=mu_shape,
        rho=rho,
        p0=p0,
        p1=p1,
        delta0_hat=delta0_hat,
        offset=offset,
    )


class CylinderQuadrature:
    """Midpoint cylinder quadrature for the invariant measure."""

    def __init__(self, g: SchottkyGroup, gd: GibbsData, depth: int = 6):
        root = gd.base if gd.base is not None else gd
        pts = {t: [] for t in range(g.n_symbols)}
        wts = {t: [] for t in range(g.n_symbols)}
        for word, (lo, hi) in cylinders(g, depth):
            pts[word[0]].append(0.5 * (lo + hi))
            wts[word[0]].append(invariant_cylinder_measure(root, word))
        self.points = {t: np.array(v) for t, v in pts.items()}
        self.weights = {t: np.array(v) for t, v in wts.items()}
        self.total = sum(w.sum() for w in self.weights.values())

    def integrate(self, func: Callable[[np.ndarray, int], np.ndarray]) -> float:
        total = 0.0
        for t, xs in self.points.items():
            if len(xs) == 0:
                continue
            total += float(self.weights[t] @ np.asarray(func(xs, t), float))
        return total


# ---------------------------------------------------------------------------
# the audit


def _chi_values(
    ev: BranchEvaluator,
    family: CylinderFamily,
    mu: float,
    a: float,
    b: float,
    H_func,
    h_func,
    j: int,
    grid_n: int = 3,
    perms: Optional[dict] = None,
    n_gamma: int = 1,
):
    """chi^(1), chi^(2) maxima over a grid in the shifted subcylinder Z_j."""
    g = ev.g
    gd = ev.gd
    sub = family.subcylinders[j]
    z_lo, z_hi = sub["z_interval"]
    us = np.linspace(z_lo + 1e-12, z_hi - 1e-12, grid_n)
    sym = sub["z_word"][0]
    v1, v2 = family.sections
    lam_a = gd.lam_at(a)
    delta = gd.delta
    h0u = ev.h0_at(us, sym)
    num = np.zeros((grid_n, n_gamma), dtype=complex)
    dens = []
    for i, v in ((1, v1), (2, v2)):
        den = v.matrix.c * us + v.matrix.d
        absder = 1.0 / den**2
        y = (v.matrix.a * us + v.matrix.b) / den
        ef = (absder ** (delta + a)) * ev.h0_at(y, v.word[0]) / (lam_a**ev.N * h0u)
        phase = np.exp(-1j * b * np.log(absder))
        Hv = np.atleast_2d(H_func(y, v.word[0]))
        if Hv.shape[0] != grid_n:
            Hv = Hv.T
        if perms is not None:
            Hv = Hv[:, perms[i]]
        num += (ef * phase)[:, None] * Hv
        dens.append(ef * h_func(y, v.word[0]))
    absnum = np.linalg.norm(num, axis=1) if n_gamma > 1 else np.abs(num[:, 0])
    chi1 = absnum / ((1 - mu) * dens[0] + dens[1])
    chi2 = absnum / (dens[0] + (1 - mu) * dens[1])
    return float(chi1.max()), float(chi2.max())


def select_J(
    ev: BranchEvaluator,
    family: CylinderFamily,
    mu: float,
    a: float,
    b: float,
    H_func,
    h_func,
    perms=None,
    n_gamma: int = 1,
) -> Tuple[frozenset, List[int]]:
    """Constructive rule: (1,j) whenever chi1 <= 1 on Z_j, else (2,j) when
    chi2 <= 1; returns the set and the members left uncovered."""
    J = set()
    covered = set()
    for j in range(family.n_sub):
        c1, c2 = _chi_values(ev, family, mu, a, b, H_func, h_func, j,
                             perms=perms, n_gamma=n_gamma)
        if c1 <= 1.0:
            J.add((1, j))
            covered.add(family.subcylinders[j]["member"])
        elif c2 <= 1.0:
            J.add((2, j))
            covered.add(family.subcylinders[j]["member"])
    missing = [m for m in range(family.n_members) if m not in covered]
    return frozenset(J), missing


def _sample_cone_function(rng, g, E_abs: float):
    """Positive h = exp(small smooth oscillation), safely inside the cone."""
    amp = rng.uniform(0.2, 0.6)
    om = rng.uniform(0.5, 2.0)
    ph = rng.uniform(0, 2 * math.pi)

    def h(x, sym=None):
        x = np.asarray(x, float)
        return np.exp(amp * np.sin(om * x + ph))

    return h


def _sample_test_H(rng, g, h_func, b: float, kind: str, n_gamma: int = 1):
    """|H| <= h with an E|b|-Lipschitz phase; modulus-contrast trials also
    scale the modulus into [0.3, 0.7]."""
    om = rng.uniform(0.5, 2.0)
    ph = rng.uniform(0, 2 * math.pi)
    rho = 1.0 if kind == "phase" else rng.uniform(0.3, 0.7)
    if n_gamma == 1:
        def H(x, sym=None):
            x = np.asarray(x, float)
            return rho * h_func(x) * np.exp(1j * (b * om * x + ph))
        return H
    vec = rng.standard_normal(n_gamma) + 1j * rng.standard_normal(n_gamma)
    vec -= vec.mean()
    vec /= np.linalg.norm(vec)

    def H(x, sym=None):
        x = np.asarray(x, float)
        base = rho * h_func(x) * np.exp(1j * (b * om * x + ph))
        return base[:, None] * vec[None, :]

    return H


@dataclass
class AuditReport:
    a: float
    b: float
    config: dict
    trials: List[dict]
    n_members: int
    n_sub: int
    delta0_hat: float
    pass_fraction: float
    failures: List[dict]

    def to_json(self) -> str:
        return json.dumps(
            {
                "a": self.a,
                "b": self.b,
                "constants": self.config,
                "n_members": self.n_members,
                "n_subcylinders": self.n_sub,
                "delta0_hat": self.delta0_hat,
                "pass_fraction": self.pass_fraction,
                "trials": self.trials,
                "failures": self.failures,
            },
            indent=2,
            default=float,
        )


def contraction_audit(
    g: SchottkyGroup,
    gd: GibbsData,
    a: float,
    b: float,
    trials: int = 100,
    seed: int = 0,
    config: Optional[AuditConfig] = None,
    mg=None,
    quad_depth: int = 6,
) -> AuditReport:
    """Verify the damped-operator properties on sampled cone pairs (h, H).

    Per trial: select J by the constructive rule, then check
      (1) the damped image stays in the cone K_{E|b|},
      (2) |M^N_{ab} H| <= N_{J,a} h pointwise on nodes, subcylinder grids
          and random points,
      (3) the L^2 contraction factor of h is strictly below one.
    Failures carry the member/subcylinder diagnostics instead of aborting.
    """
    root = gd.base if gd.base is not None else gd
    if config is None:
        config = default_config(g, root)
    rng = np.random.default_rng(seed)
    ev = BranchEvaluator(g, root, config.N, mg=mg)
    family = build_family(
        g, b, config.eps1, sections=default_sections(g, config.N),
        offset=config.offset, n1=config.n1,
    )
    quad = CylinderQuadrature(g, root, quad_depth)
    E_abs = config.E * abs(b)

    n_gamma = 1
    perms = None
    if mg is not None and mg.q > 1:
        n_gamma = mg.order
        perms = {}
        for i, v in ((1, family.sections[0]), (2, family.sections[1])):
            jdx = mg.idx_of(v.matrix)
            jinv = int(mg.inverse_indices()[jdx])
            perms[i] = mg.right_mult_perm(jinv)

    # check points: cylinder-quadrature points plus subcylinder grids
    check_pts = {t: [quad.points[t]] for t in range(g.n_symbols)}
    for sub in family.subcylinders:
        z_lo, z_hi = sub["z_interval"]
        t = sub["z_word"][0]
        check_pts[t].append(np.linspace(z_lo, z_hi, 5))
    check_pts = {t: np.concatenate(v) for t, v in check_pts.items() if v}

    results = []
    failures = []
    for trial in range(trials):
        kind = "phase" if trial % 2 == 0 else "contrast"
        mu = config.mu if kind == "phase" else min(0.05, 1.0 - 0.75)
        h_func0 = _sample_cone_function(rng, g, E_abs)
        h_func = lambda x, sym=None: h_func0(x)
        H_func = _sample_test_H(rng, g, h_func0, b, kind, n_gamma=n_gamma)
        J, missing = select_J(ev, family, mu, a, b, H_func, h_func,
                              perms=perms, n_gamma=n_gamma)
        weights = DolgopyatWeights(J=J, mu_param=mu, family=family)
        dense = weights.is_dense()

        # N h and M^N H on the check points
        dom_margin = math.inf
        worst = None
        num = 0.0
        den = 0.0
        for t, xs in check_pts.items():
            Nh = np.real(ev.sum(xs, t, h_func, a=a, b=0.0, weights=weights))
            MH = ev.sum(xs, t, H_func, a=a, b=b, weights=None)
            if perms is not None:
                # vector-valued: branch sums already applied the cocycle
                pass
            absMH = np.linalg.norm(np.atleast_2d(MH), axis=1) if n_gamma > 1 else np.abs(MH)
            margin = (Nh - absMH) / np.maximum(Nh, 1e-300)
            m = float(margin.min())
            if m < dom_margin:
                dom_margin = m
                worst = (t, float(xs[int(np.argmin(margin))]))

        # L2 contraction on the quadrature
        def nh2(xs, t):
            val = np.real(ev.sum(xs, t, h_func, a=a, b=0.0, weights=weights))
            return val**2

        def h2(xs, t):
            return np.asarray(h_func(xs)) ** 2

        num = quad.integrate(nh2)
        den = quad.integrate(h2)
        factor = num / den

        # cone preservation on a per-interval grid
        cone_ok = True
        out_ratio = 0.0
        for t in range(g.n_symbols):
            lo, hi = g.interval_float(t)
            xs = np.linspace(lo + 1e-9, hi - 1e-9, 9)
            vals = np.real(ev.sum(xs, t, h_func, a=a, b=0.0, weights=weights))
            r = cone_ratio(g, xs, vals)
            out_ratio = max(out_ratio, r)
        cone_ok = out_ratio <= E_abs

        ok = dense and cone_ok and dom_margin >= -1e-9 and factor < 1.0
        rec = {
            "trial": trial,
            "kind": kind,
            "mu": mu,
            "J_size": len(J),
            "dense": dense,
            "missing_members": missing,
            "domination_margin": dom_margin,
            "worst_point": worst,
            "contraction_factor": factor,
            "cone_ratio_out": out_ratio,
            "cone_bound": E_abs,
            "ok": bool(ok),
        }
        results.append(rec)
        if not ok:
            failures.append(rec)

    frac = sum(1 for r in results if r["ok"]) / max(1, len(results))
    return AuditReport(
        a=a,
        b=b,
        config=config.as_dict(),
        trials=results,
        n_members=family.n_members,
        n_sub=family.n_sub,
        delta0_hat=config.delta0_hat,
        pass_fraction=frac,
        failures=failures,
    )


def iterated_audit(
    g: SchottkyGroup,
    gd: GibbsData,
    a: float,
    b: float,
    levels: int = 5,
    seed: int = 1,
    config: Optional[AuditConfig] = None,
    quad_depth: int = 5,
):
    """Iterate h_{l+1} = N_{J_l,a} h_l against M^{lN} H: pointwise domination
    at every level and geometric L2 decay of h_l (the theorem-composition
    scheme)."""
    root = gd.base if gd.base is not None else gd
    if config is None:
        config = default_config(g, root, N=2)
    rng = np.random.default_rng(seed)
    ev = BranchEvaluator(g, root, config.N)
    family = build_family(
        g, b, config.eps1, sections=default_sections(g, config.N),
        offset=config.offset, n1=config.n1,
    )
    quad = CylinderQuadrature(g, root, quad_depth)

    # the composition scheme starts from the constant majorant h_0 = ||H||
    h0_func = lambda x, sym=None: np.ones_like(np.asarray(x, float))
    H_func = _sample_test_H(rng, g, h0_func, b, "contrast")
    mu = 0.05

    # closures for the recursion; each level stores its own J
    weights_per_level = []
    h_funcs = [lambda x, sym=None: h0_func(x)]
    H_funcs = [H_func]

    norms = []
    dominated = []
    for l in range(levels):
        h_l = h_funcs[-1]
        H_l = H_funcs[-1]
        J, missing = select_J(ev, family, mu, a, b, H_l, h_l)
        w = DolgopyatWeights(J=J, mu_param=mu, family=family, forced=True)
        weights_per_level.append(w)

        def make_next(h_prev, w_prev):
            def nxt(x, sym):
                return np.real(ev.sum(x, sym, h_prev, a=a, b=0.0, weights=w_prev))
            return nxt

        def make_next_H(H_prev):
            def nxt(x, sym):
                return ev.sum(x, sym, H_prev, a=a, b=b, weights=None)
            return nxt

        h_funcs.append(make_next(h_l, w))
        H_funcs.append(make_next_H(H_l))

        hn = h_funcs[-1]
        Hn = H_funcs[-1]
        margin = math.inf
        for t in range(g.n_symbols):
            xs = quad.points[t][:: max(1, len(quad.points[t]) // 24)]
            diff = np.real(hn(xs, t)) - np.abs(Hn(xs, t))
            margin = min(margin, float((diff / np.maximum(np.real(hn(xs, t)), 1e-300)).min()))
        dominated.append(margin >= -1e-8)
        norms.append(math.sqrt(quad.integrate(lambda x, t: np.real(hn(x, t)) ** 2)))
    return {"norms": norms, "dominated": dominated, "config": config.as_dict()}
