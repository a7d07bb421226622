"""Selberg zeta: primitive geodesic necklaces, Euler product, determinants.

Closed geodesics are oriented: a class and its inverse count separately.
The determinant det(I - M_{s,q}) of the congruence transfer operator is the
computational definition of the zeta zeros; the Euler product over necklaces
cross-checks it in the convergence region.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arith import IntMatrix2, trace_length
from .congruence import ModGroup
from .errors import (
    ContourThroughZeroError,
    NotAdmissibleError,
    ResourceLimitError,
    TruncationUnreliableError,
)
from .schottky import SchottkyGroup
from .thermo import CollocationGrid, GibbsData, build

ORBIT_CAP = 2_000_000


@dataclass
class OrbitClass:
    """Primitive closed geodesic: necklace word, exact matrix, length."""

    necklace: Tuple[int, ...]
    representative: IntMatrix2
    trace: int
    length: float
    _orders: Dict[int, int] = field(default_factory=dict, repr=False)

    def holonomy_order(self, mg: ModGroup) -> int:
        """Order of the reduced representative in the level-q group."""
        if mg.q not in self._orders:
            j = mg.idx_of(self.representative)
            self._orders[mg.q] = mg.element_order(j)
        return self._orders[mg.q]


def _canonical_rotation(word: Tuple[int, ...]) -> Tuple[int, ...]:
    n = len(word)
    return min(tuple(word[i:] + word[:i]) for i in range(n))


def _is_primitive(word: Tuple[int, ...]) -> bool:
    n = len(word)
    for d in range(1, n):
        if n % d == 0 and word == word[:d] * (n // d):
            return False
    return True


def enumerate_orbits(
    g: SchottkyGroup, n_max: int, cap: int = ORBIT_CAP
) -> List[OrbitClass]:
    """All primitive necklaces of word length <= n_max, sorted by length."""
    k = g.n_symbols
    est = sum(k * (k - 1) ** (n - 1) for n in range(1, n_max + 1))
    if est > cap:
        raise ResourceLimitError(f"~{est} words exceed cap {cap}")
    out = []
    seen = set()

    def rec(word):
        n = len(word)
        if n > 0 and n <= n_max:
            # cyclic admissibility around the wrap
            if word[0] != g.sbar(word[-1]):
                canon = _canonical_rotation(word)
                if canon == word and _is_primitive(word) and word not in seen:
                    seen.add(word)
                    m = g.word_matrix(word)
                    if abs(m.trace) > 2:
                        out.append(
                            OrbitClass(
                                necklace=word,
                                representative=m,
                                trace=m.trace,
                                length=trace_length(m),
                            )
                        )
        if n == n_max:
            return
        nxt = range(k) if not word else g.allowed_after(word[-1])
        for s in nxt:
            rec(word + (s,))

    rec(())
    out.sort(key=lambda o: o.length)
    return out


def necklace_count_oracle(g: SchottkyGroup, n: int) -> int:
    """Independent count of primitive necklaces of length n.

    Cyclic admissible words are counted by tr(Tr^n); Moebius inversion over
    periods and division by the rotation class size give the necklaces.
    """
    k = g.n_symbols
    tr = np.ones((k, k), dtype=np.int64)
    for i in range(k):
        tr[i, g.sbar(i)] = 0

    def trace_power(m):
        return int(np.trace(np.linalg.matrix_power(tr, m)))

    def mobius(m):
        if m == 1:
            return 1
        out, p, mm = 1, 2, m
        while p * p <= mm:
            if mm % p == 0:
                mm //= p
                if mm % p == 0:
                    return 0
                out = -out
            p += 1
        if mm > 1:
            out = -out
        return out

    total = 0
    for d in range(1, n + 1):
        if n % d == 0:
            total += mobius(n // d) * trace_power(d)
    return total // n


@dataclass
class ZetaValue:
    value: complex
    log_value: complex
    tail_bound: float
    orbits_used: int

    def __complex__(self):
        return self.value


def zeta_euler(
    orbits: Sequence[OrbitClass],
    s: complex,
    q: int = 1,
    mg: Optional[ModGroup] = None,
    k_max: int = 30,
    l_max: Optional[float] = None,
    delta: Optional[float] = None,
) -> ZetaValue:
    """Euler product over base necklaces with the congruence lift rule.

    A base orbit whose holonomy has order kappa in SL(2,q) contributes the
    factor (1 - e^{-(s+k) kappa l})^(|G_q|/kappa): its preimages are the
    |G_q|/kappa cycles of right multiplication, each of length kappa l.
    """
    if q > 1:
        if mg is None or not mg.admissible:
            raise NotAdmissibleError(q, mg.order if mg else 0, 0)
    if l_max is None:
        l_max = max(o.length for o in orbits)
    used = [o for o in orbits if o.length <= l_max]
    # growth constant for the tail estimate, measured from the orbit list
    if delta is None:
        counts = np.arange(1, len(orbits) + 1)
        lens = np.array([o.length for o in orbits])
        delta = float(np.polyfit(lens[len(lens) // 2 :], np.log(counts[len(lens) // 2 :]), 1)[0])
    if s.real <= delta:
        raise TruncationUnreliableError(
            f"Re(s)={s.real} is not above the measured growth exponent {delta}"
        )
    log_total = 0.0 + 0.0j
    for o in used:
        kappa = 1 if q == 1 else o.holonomy_order(mg)
        mult = 1 if q == 1 else mg.order // kappa
        ell = kappa * o.length
        for k in range(k_max + 1):
            z = -(s + k) * ell
            if z.real < -700:
                break
            log_total += mult * cmath.log(1.0 - cmath.exp(z))
    # tail over lengths > l_max: orbit count density ~ C e^(delta l)
    lens = np.array([o.length for o in orbits])
    C = max(
        (i + 1) * math.exp(-delta * l) for i, l in enumerate(np.sort(lens))
    )
    group = mg.order if (q > 1 and mg is not None) else 1
    sigma = s.real - delta
    tail = group * C * math.exp(-sigma * l_max) / sigma if sigma > 0 else math.inf
    return ZetaValue(
        value=cmath.exp(log_total),
        log_value=log_total,
        tail_bound=tail,
        orbits_used=len(used),
    )


# ---------------------------------------------------------------------------
# Fredholm determinants of the (congruence) transfer operator


@dataclass
class FredholmResult:
    value: Optional[complex]
    log_abs: float
    mode: str                      # "dense" or "leading"
    leading_eigs: Optional[np.ndarray] = None

    def __complex__(self):
        if self.value is None:
            raise ResourceLimitError("determinant not computed in leading mode")
        return self.value


def _congruence_matrix(
    g: SchottkyGroup,
    mg: ModGroup,
    s: complex,
    order: int,
    grid: Optional[CollocationGrid] = None,
) -> np.ndarray:
    """Dense matrix of the raw congruence operator M_{s,q}.

    Index layout: (node, gamma); the gamma block of each per-symbol base
    block is the permutation gamma -> gamma c(u)^-1.
    """
    if grid is None:
        grid = CollocationGrid(g, order)
    base = build(g, complex(s), order, grid=grid).matrix
    kp = base.shape[0]
    G = mg.order
    out = np.zeros((kp * G, kp * G), dtype=complex)
    for u in range(g.n_symbols):
        cols = grid.sym_slice(u)
        perm = mg.cocycle_perm(u)
        block = base[:, cols]
        for gi in range(G):
            gj = perm[gi]
            out[gi::G, :][:, np.arange(cols.start, cols.stop) * G + gj] = block
    return out


def fredholm_det(
    g: SchottkyGroup,
    mg: ModGroup,
    s: complex,
    order: int,
    dense_cap: int = 4000,
    grid: Optional[CollocationGrid] = None,
) -> FredholmResult:
    """det(I - M_{s,q}) on the collocation discretization.

    Beyond the dense cap only the leading spectrum near the unit circle is
    returned, flagged as mode="leading".
    """
    kp = g.n_symbols * order
    n = kp * mg.order
    if n > dense_cap:
        from scipy.sparse.linalg import eigs as sparse_eigs
        from scipy.sparse.linalg import LinearOperator

        from .congruence import CongruenceOperator  # lazy, avoids cycle

        if grid is None:
            grid = CollocationGrid(g, order)
        base = build(g, complex(s), order, grid=grid).matrix
        perms = {u: mg.cocycle_perm(u) for u in range(g.n_symbols)}

        def mv(vec):
            H = vec.reshape(kp, mg.order)
            out = np.zeros_like(H)
            for u in range(g.n_symbols):
                cols = grid.sym_slice(u)
                out += base[:, cols] @ H[cols][:, perms[u]]
            return out.reshape(-1)

        op = LinearOperator((n, n), matvec=mv, dtype=complex)
        k = min(24, n - 2)
        vals = sparse_eigs(op, k=k, which="LM", return_eigenvectors=False, tol=1e-9)
        return FredholmResult(value=None, log_abs=math.nan, mode="leading",
                              leading_eigs=np.sort_complex(vals))
    m = _congruence_matrix(g, mg, s, order, grid=grid)
    sign, logabs = np.linalg.slogdet(np.eye(len(m)) - m)
    return FredholmResult(value=complex(sign) * math.exp(float(logabs)),
                          log_abs=float(logabs), mode="dense")


def new_space_det(
    g: SchottkyGroup, mg: ModGroup, s: complex, order: int
) -> complex:
    """Determinant restricted to the new space (gamma-sums zero)."""
    if grid_cache.get(("grid", id(g), order)) is None:
        grid_cache[("grid", id(g), order)] = CollocationGrid(g, order)
    grid = grid_cache[("grid", id(g), order)]
    base = build(g, complex(s), order, grid=grid).matrix
    kp = base.shape[0]
    G = mg.order
    # orthonormal basis of mean-zero vectors on the group
    Q = np.linalg.qr(np.eye(G) - 1.0 / G)[0][:, : G - 1]
    n = kp * (G - 1)
    out = np.zeros((n, n), dtype=complex)
    for u in range(g.n_symbols):
        cols = grid.sym_slice(u)
        perm = mg.cocycle_perm(u)
        P = np.zeros((G, G))
        P[np.arange(G), perm] = 1.0
        small = Q.T @ P @ Q
        out += np.kron(base[:, cols] @ _selector(kp, cols), small)
    sign, logabs = np.linalg.slogdet(np.eye(n) - out)
    return sign * math.exp(logabs)


grid_cache: dict = {}


def _selector(kp: int, cols: slice) -> np.ndarray:
    sel = np.zeros((cols.stop - cols.start, kp))
    sel[np.arange(cols.stop - cols.start), np.arange(cols.start, cols.stop)] = 1.0
    return sel


# ---------------------------------------------------------------------------
# zero finding by the argument principle


@dataclass
class Zero:
    s: complex
    residual: float
    multiplicity: int


class _DetCache:
    def __init__(self, g, mg, order):
        self.g = g
        self.mg = mg
        self.order = order
        self.grid = CollocationGrid(g, order)
        self.cache: Dict[complex, complex] = {}

    def __call__(self, s: complex) -> complex:
        key = complex(round(s.real, 13), round(s.imag, 13))
        if key not in self.cache:
            self.cache[key] = complex(
                fredholm_det(self.g, self.mg, key, self.order, grid=self.grid)
            )
        return self.cache[key]


def _winding_number(f, corners, min_step=1e-9, per_unit=16) -> int:
    """Total argument change of f around the rectangle boundary / 2 pi.

    Base samples scale with edge length (fast phase rotation between coarse
    samples would alias to a small step); segments are refined while the
    phase jump exceeds pi/2 or the modulus jumps sharply.  A sample with
    |f| ~ 0, or a jump persisting at the minimal step, raises
    ContourThroughZero.
    """
    pts = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        n = max(8, int(abs(b - a) * per_unit))
        pts.extend(a + (b - a) * t for t in np.linspace(0, 1, n, endpoint=False))
    pts.append(pts[0])

    vals = [f(p) for p in pts]
    total = 0.0
    i = 0
    scale = max(abs(v) for v in vals)
    while i < len(pts) - 1:
        v0, v1 = vals[i], vals[i + 1]
        if abs(v0) < 1e-12 * max(1.0, scale) or abs(v1) < 1e-12 * max(1.0, scale):
            raise ContourThroughZeroError(f"determinant ~0 on the contour near {pts[i]}")
        dphi = cmath.phase(v1 / v0)
        ratio = abs(v1) / abs(v0)
        if abs(dphi) > math.pi / 2 or ratio > 4.0 or ratio < 0.25:
            if abs(pts[i + 1] - pts[i]) <= min_step:
                raise ContourThroughZeroError(
                    f"phase slip at minimal step near {pts[i]}"
                )
            mid = 0.5 * (pts[i] + pts[i + 1])
            pts.insert(i + 1, mid)
            vals.insert(i + 1, f(mid))
            continue
        total += dphi
        i += 1
    return int(round(total / (2 * math.pi)))


def _real_axis_zeros(f, re0: float, re1: float, n_samples: int, min_box: float) -> List[Zero]:
    """The determinant is real on the real axis; zeros come from sign changes."""
    xs = np.linspace(re0, re1, n_samples)
    vals = [f(complex(x, 0.0)).real for x in xs]
    zeros = []
    for i in range(len(xs) - 1):
        if vals[i] == 0.0:
            zeros.append(Zero(s=complex(xs[i], 0.0), residual=0.0, multiplicity=1))
            continue
        if vals[i] * vals[i + 1] < 0:
            lo, hi = xs[i], xs[i + 1]
            flo = vals[i]
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                fm = f(complex(mid, 0.0)).real
                if fm == 0.0 or hi - lo < 1e-15:
                    lo = hi = mid
                    break
                if (fm < 0) == (flo < 0):
                    lo, flo = mid, fm
                else:
                    hi = mid
            z = complex(0.5 * (lo + hi), 0.0)
            zeros.append(Zero(s=z, residual=abs(f(z)), multiplicity=1))
    return zeros


def find_zeros(
    g: SchottkyGroup,
    mg: ModGroup,
    window: Tuple[float, float, float, float],
    order: int = 12,
    min_box: float = 1e-4,
    axis_samples: int = 80,
    im_floor: float = 1e-4,
) -> List[Zero]:
    """Zeros of det(I - M_{s,q}) in a rectangle.

    The determinant family is real on the real axis and conjugate-symmetric,
    so real zeros are found by sign-change bisection, off-axis zeros by
    winding-number boxes in the upper half plane (reflected afterwards).
    Subdivision midlines are jittered to keep contours away from zeros.
    """
    f = _DetCache(g, mg, order)
    re0, re1, im0, im1 = window
    zeros: List[Zero] = []
    if im0 <= 0.0 <= im1:
        zeros.extend(_real_axis_zeros(f, re0, re1, axis_samples, min_box))

    def rect_corners(r0, r1, i0, i1):
        return [complex(r0, i0), complex(r1, i0), complex(r1, i1), complex(r0, i1)]

    upper: List[Zero] = []

    def winding_with_jitter(r0, r1, i0, i1, per_unit=16):
        spans = (max(r1 - r0, min_box), max(i1 - i0, min_box))
        # jitter always expands the box: sibling boxes overlap instead of
        # leaving gap slivers, and duplicates are merged afterwards
        for attempt in range(6):
            jr = (0.2 + (attempt * 0.37) % 1.0) * 1e-3 * spans[0]
            ji = (0.2 + (attempt * 0.61) % 1.0) * 1e-3 * spans[1]
            try:
                return _winding_number(
                    f, rect_corners(r0 - jr, r1 + jr, i0 - ji, i1 + ji),
                    per_unit=per_unit,
                )
            except ContourThroughZeroError:
                continue
        raise ContourThroughZeroError(
            f"could not isolate a clean contour near [{r0},{r1}]x[{i0},{i1}]"
        )

    def rec(r0, r1, i0, i1, w=None):
        if w is None:
            w = winding_with_jitter(r0, r1, i0, i1)
        if w == 0:
            return
        if max(r1 - r0, i1 - i0) < min_box:
            center = complex(0.5 * (r0 + r1), 0.5 * (i0 + i1))
            z = _newton_polish(f, center, min_box)
            upper.append(Zero(s=z, residual=abs(f(z)), multiplicity=max(w, 1)))
            return
        if (r1 - r0) >= (i1 - i0):
            mid = 0.5 * (r0 + r1) + 0.013 * (r1 - r0)
            boxes = [(r0, mid, i0, i1), (mid, r1, i0, i1)]
        else:
            mid = 0.5 * (i0 + i1) + 0.013 * (i1 - i0)
            boxes = [(r0, r1, i0, mid), (r0, r1, mid, i1)]
        ws = [winding_with_jitter(*bx) for bx in boxes]
        if sum(ws) != w:
            # winding must be conserved across the split; re-sample densely
            ws = [winding_with_jitter(*bx, per_unit=64) for bx in boxes]
            if sum(ws) != w:
                w = winding_with_jitter(r0, r1, i0, i1, per_unit=64)
        for bx, wc in zip(boxes, ws):
            rec(*bx, w=wc)

    if im1 > im_floor:
        rec(re0, re1, max(im0, im_floor), im1)
    # the family is conjugate-symmetric: reflect into the lower half window
    if im0 < -im_floor:
        reflected = [
            Zero(s=z.s.conjugate(), residual=z.residual, multiplicity=z.multiplicity)
            for z in upper
            if im0 <= -z.s.imag <= im1
        ]
        upper.extend(reflected)
    zeros.extend(upper)
    merged: List[Zero] = []
    for z in sorted(zeros, key=lambda z: z.residual):
        if all(abs(z.s - m.s) > 4 * min_box for m in merged):
            merged.append(z)
    merged.sort(key=lambda z: (-z.s.real, abs(z.s.imag)))
    return merged


def _newton_polish(f, z0: complex, h: float, iters: int = 40) -> complex:
    z = z0
    step = h
    for _ in range(iters):
        fz = f(z)
        df = (f(z + step * 0.01) - f(z - step * 0.01)) / (0.02 * step)
        if df == 0:
            break
        dz = fz / df
        z = z - dz
        if abs(dz) < 1e-13:
            break
    return z


@dataclass
class ResonanceRow:
    q: int
    zeros: List[Zero]
    epsilon_hat: float


def resonance_scan(
    g: SchottkyGroup,
    levels: Sequence[int],
    delta: float,
    eps_test: float = 0.08,
    b_max: float = 5.0,
    order: int = 12,
    mgs: Optional[Dict[int, ModGroup]] = None,
) -> Tuple[List[ResonanceRow], float]:
    """Zero scan on {Re s >= delta - eps_test, |Im s| <= b_max} per level.

    Returns per-level zero lists and the headline margin
    epsilon_hat = delta - max over levels of the largest non-delta zero
    real part (eps_test when the strip is otherwise clean).
    """
    from .congruence import build_modgroup

    rows = []
    eps_hat = eps_test
    for q in levels:
        mg = mgs[q] if mgs and q in mgs else build_modgroup(g, q)
        if q > 1 and not mg.admissible:
            raise NotAdmissibleError(q, mg.order, mg.full_order)
        window = (delta - eps_test, delta + 0.35, -b_max, b_max)
        zs = find_zeros(g, mg, window, order=order)
        nontrivial = [z for z in zs if abs(z.s - delta) > 1e-6]
        if nontrivial:
            eps_hat = min(eps_hat, delta - max(z.s.real for z in nontrivial))
        rows.append(ResonanceRow(q=q, zeros=zs, epsilon_hat=eps_hat))
    return rows, eps_hat


def orbit_table_rows(orbits: Sequence[OrbitClass], mgs: Sequence[ModGroup]):
    """Rows (word, trace, length, order per level) for the CSV emitter."""
    rows = []
    for o in orbits:
        row = ["".join(str(s) for s in o.necklace), o.trace, o.length]
        for mg in mgs:
            row.append(o.holonomy_order(mg))
        rows.append(tuple(row))
    return rows
