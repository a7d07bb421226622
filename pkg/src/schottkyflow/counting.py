"""Counting corollaries and mixing diagnostics on the suspension.

Geodesic counts use the necklace enumeration plus the congruence lift rule;
orbit-point counts do a certified pruned search over reduced words.  The
correlation function is estimated by Monte Carlo on the suspension with
exact (roof, cocycle) bookkeeping, and the Laplace-transform identity is
cross-checked against repeated applications of the congruence operator on a
cylinder-collocation grid fine enough to resolve the test observables.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from .arith import (
    IntMatrix2,
    mobius_apply_h2,
    orbit_distance,
    point_distance,
    reduce_mod,
)
from .coding import cylinders, point_of_sequence
from .congruence import ModGroup, build_modgroup
from .errors import IncompleteEnumerationError, ResourceLimitError, SchottkyFlowError
from .schottky import SchottkyGroup
from .thermo import GibbsData, invariant_cylinder_measure
from .zeta import OrbitClass, enumerate_orbits


def li(x: float) -> float:
    """Logarithmic integral from 2; returns 0 at or below the lower limit."""
    if x <= 2.0:
        return 0.0
    val, err = quad(lambda t: 1.0 / math.log(t), 2.0, x, epsrel=1e-12, limit=200)
    return float(val)


def li_series(x: float) -> float:
    """Independent evaluation via the shifted mpmath log-integral."""
    import mpmath

    return float(mpmath.li(x) - mpmath.li(2))


@dataclass
class CountReport:
    q: int
    thresholds: np.ndarray
    counts: np.ndarray
    model: np.ndarray
    residuals: np.ndarray
    convention: str = "oriented (gamma and gamma^-1 distinct)"

    def rows(self):
        return [
            (self.q, float(t), int(c), float(m), float(r))
            for t, c, m, r in zip(self.thresholds, self.counts, self.model, self.residuals)
        ]


def min_length_per_letter(g: SchottkyGroup) -> float:
    """Certified lower bound: each letter contracts by at least 1/min_exp,
    so a cyclically reduced word of length n has l >= n log(min_exp)."""
    return math.log(min(g.expansion_min))


def required_depth(g: SchottkyGroup, t_max: float, obs_depth: int) -> int:
    """Coding depth needed to flow for t_max and still read an observable
    window: the roof is at least log(min expansion) per crossing."""
    tau_min = math.log(min(g.expansion_min))
    tau_max = math.log(max(g.expansion_max))
    return int(math.ceil((t_max + tau_max) / tau_min)) + obs_depth + 2


def count_geodesics(
    g: SchottkyGroup,
    q: int,
    T_max: float,
    delta: Optional[float] = None,
    mg: Optional[ModGroup] = None,
    thresholds: Optional[Sequence[float]] = None,
    word_cap: int = 14,
) -> CountReport:
    """P_q(T) on a grid, with the li(e^(delta T)) model column.

    Base necklaces are enumerated to a word length certified to cover T_max;
    a base orbit of length l and holonomy order kappa contributes
    |G_q|/kappa geodesics of length kappa*l upstairs.
    """
    per_letter = min_length_per_letter(g)
    n_max = max(1, math.ceil(T_max / per_letter))
    if n_max > word_cap:
        raise IncompleteEnumerationError(
            f"covering T={T_max} needs word length {n_max} > cap {word_cap}"
        )
    if mg is None:
        mg = build_modgroup(g, q)
    orbits = enumerate_orbits(g, n_max)
    lengths = []
    if q == 1:
        for o in orbits:
            lengths.append((o.length, 1))
    else:
        for o in orbits:
            kappa = o.holonomy_order(mg)
            lengths.append((kappa * o.length, mg.order // kappa))
    if thresholds is None:
        thresholds = np.arange(1.0, math.floor(T_max) + 1.0)
    thresholds = np.asarray(thresholds, float)
    counts = np.array(
        [sum(mult for l, mult in lengths if l < T) for T in thresholds], dtype=int
    )
    if delta is None:
        from .thermo import solve_delta

        delta = solve_delta(g, 20)
    model = np.array([li(math.exp(delta * T)) for T in thresholds])
    with np.errstate(divide="ignore", invalid="ignore"):
        residuals = np.where(model > 0, (counts - model) / model, np.nan)
    return CountReport(
        q=q, thresholds=thresholds, counts=counts, model=model, residuals=residuals
    )


def growth_certificate(g: SchottkyGroup, depth: int = 6) -> float:
    """min over reduced words |w| <= depth and letters s of d(i, ws.i) - d(i, w.i).

    A positive value certifies that orbit distance grows strictly along
    reduced extensions, so the pruned search below is exhaustive.
    """
    from .schottky import word_ball

    best = math.inf
    for w in word_ball(g, depth):
        dw = orbit_distance(w.matrix)
        last = w.symbols[-1] if w.symbols else None
        for s in range(g.n_symbols):
            if last is not None and s == g.sbar(last):
                continue
            dws = orbit_distance(w.matrix * g.matrices[s])
            best = min(best, dws - dw)
    return best


def count_orbit_points(
    g: SchottkyGroup,
    q: int,
    T: float,
    z: Optional[complex] = None,
    w: Optional[complex] = None,
    mg: Optional[ModGroup] = None,
    cap: int = 20_000_000,
    _cert_cache={},
) -> int:
    """N_q(T; z, w) = #{gamma = e mod q : d(z, gamma w) <= T}.

    Breadth-first over reduced words with certified monotone pruning; for
    general base points the prune threshold is padded by d(i,z) + d(i,w).
    """
    key = id(g)
    if key not in _cert_cache:
        _cert_cache[key] = growth_certificate(g, 6)
    if _cert_cache[key] <= 0:
        raise SchottkyFlowError(
            "orbit distance is not certified monotone for this group"
        )
    if mg is None:
        mg = build_modgroup(g, q)
    slack = 0.0
    general = z is not None or w is not None
    zi = complex(0.0, 1.0) if z is None else z
    wi = complex(0.0, 1.0) if w is None else w
    if general:
        slack = point_distance(1j, zi) + point_distance(1j, wi)

    count = 0
    visited = 0
    frontier = [(IntMatrix2.identity(), None, 0)]
    while frontier:
        nxt = []
        for mat, last, gidx in frontier:
            visited += 1
            if visited > cap:
                raise ResourceLimitError(f"orbit search exceeded {cap} nodes")
            d_i = orbit_distance(mat)
            if general:
                d = point_distance(zi, mobius_apply_h2(mat, wi))
            else:
                d = d_i
            if d <= T and (q == 1 or gidx == 0):
                count += 1
            if d_i <= T + slack:
                for s in range(g.n_symbols):
                    if last is not None and s == g.sbar(last):
                        continue
                    g2 = gidx if q == 1 else mg.mul_indices(gidx, mg.cocycle_images[s])
                    nxt.append((mat * g.matrices[s], s, g2))
        frontier = nxt
    return count


# ---------------------------------------------------------------------------
# test observables on the suspension


@dataclass
class SuspensionObservable:
    """Locally constant on depth-`depth` cylinders, linear in the flow time:
    phi(u, gamma, s) = A[cyl(u), gamma] + B[cyl(u), gamma] * s."""

    g: SchottkyGroup
    mg: ModGroup
    depth: int
    words: List[Tuple[int, ...]]
    index: Dict[Tuple[int, ...], int]
    A: np.ndarray  # (n_cyl, |G|)
    B: np.ndarray

    @property
    def mean_zero_in_gamma(self) -> bool:
        return bool(
            np.abs(self.A.sum(axis=1)).max() < 1e-12
            and np.abs(self.B.sum(axis=1)).max() < 1e-12
        )

    def value(self, cyl_idx: np.ndarray, gamma_idx: np.ndarray, s: np.ndarray):
        return self.A[cyl_idx, gamma_idx] + self.B[cyl_idx, gamma_idx] * s

    def sup_norm(self, tau_max: float) -> float:
        return float(np.abs(self.A).max() + np.abs(self.B).max() * tau_max)

    def b1_norm(self, tau_max: float) -> float:
        """sup + flow-direction variation (piecewise linear => |B| tau)."""
        return self.sup_norm(tau_max) + float(np.abs(self.B).max()) * tau_max

    def b0_norm(self, tau_max: float) -> float:
        """sup + Lipschitz bound; jumps across cylinder gaps are divided by
        the minimal gap at this depth."""
        intervals = sorted(
            (lo, hi) for w, (lo, hi) in cylinders(self.g, self.depth)
        )
        gaps = [
            max(intervals[i + 1][0] - intervals[i][1], 1e-12)
            for i in range(len(intervals) - 1)
        ]
        min_gap = min(gaps)
        jump = 2 * np.abs(self.A).max() + 2 * np.abs(self.B).max() * tau_max
        lip = jump / min_gap + np.abs(self.B).max()
        return self.sup_norm(tau_max) + float(lip)


def make_observable(
    g: SchottkyGroup,
    mg: ModGroup,
    depth: int = 4,
    seed: int = 0,
    mean_zero_in_gamma: bool = False,
    linear: bool = True,
    constant_one: bool = False,
) -> SuspensionObservable:
    rng = np.random.default_rng(seed)
    words = [w for w, _ in cylinders(g, depth)]
    index = {w: i for i, w in enumerate(words)}
    n = len(words)
    G = mg.order
    if constant_one:
        A = np.ones((n, G))
        B = np.zeros((n, G))
    else:
        A = rng.standard_normal((n, G))
        B = rng.standard_normal((n, G)) * (0.3 if linear else 0.0)
    if mean_zero_in_gamma:
        A -= A.mean(axis=1, keepdims=True)
        B -= B.mean(axis=1, keepdims=True)
    return SuspensionObservable(
        g=g, mg=mg, depth=depth, words=words, index=index, A=A, B=B
    )


# ---------------------------------------------------------------------------
# sampling the invariant measure and flowing on the suspension


class SuspensionSampler:
    """Vectorised sampler: symbol paths to `depth` by exact conditional
    cylinder measures, uniform within the terminal interval."""

    def __init__(self, g: SchottkyGroup, gd: GibbsData, depth: int = 12):
        root = gd.base if gd.base is not None else gd
        self.g = g
        self.gd = root
        self.depth = depth
        grid = root.grid
        self.delta = root.delta
        # chebyshev coefficients of h0 per symbol for fast evaluation
        ref = np.cos(np.pi * np.arange(grid.order) / (grid.order - 1))
        self._maps = []
        self._coeffs = []
        for s in range(g.n_symbols):
            lo, hi = g.interval_float(s)
            self._maps.append((0.5 * (lo + hi), 0.5 * (hi - lo)))
            self._coeffs.append(
                np.polynomial.chebyshev.chebfit(
                    ref, root.h[grid.sym_slice(s)], grid.order - 1
                )
            )
        self.nu_sym = np.array(
            [float(root.nu[grid.sym_slice(s)] @ root.h[grid.sym_slice(s)]) for s in range(g.n_symbols)]
        )
        self.nu_sym /= self.nu_sym.sum()
        self.nodes = grid.nodes
        self.nu_nodes = [root.nu[grid.sym_slice(s)] for s in range(g.n_symbols)]

    def _h0(self, x, sym):
        mid, rad = self._maps[sym]
        return np.polynomial.chebyshev.chebval((x - mid) / rad, self._coeffs[sym])

    def sample(self, n: int, rng) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (orbit, paths): paths (n, depth) are symbol codings and
        orbit[:, j] is the shift orbit point with coding paths[:, j:].

        Orbit points are reconstructed backward through the contractions
        (stable); forward iteration of the expanding map would lose the
        orbit after a few steps at these expansion rates.
        """
        g = self.g
        sym0 = rng.choice(g.n_symbols, size=n, p=self.nu_sym)
        paths = np.empty((n, self.depth), dtype=np.int64)
        paths[:, 0] = sym0
        # per-sample prefix contraction matrices (floats)
        mats = np.tile(np.array([1.0, 0.0, 0.0, 1.0]), (n, 1))
        for level in range(1, self.depth):
            prev = paths[:, level - 1]
            # absorb the previous symbol into the prefix
            for s in range(g.n_symbols):
                mask = prev == s
                if not mask.any():
                    continue
                m = g.matrices[s]
                a, b, c, d = (mats[mask, i] for i in range(4))
                mats[mask, 0] = a * m.a + b * m.c
                mats[mask, 1] = a * m.b + b * m.d
                mats[mask, 2] = c * m.a + d * m.c
                mats[mask, 3] = c * m.b + d * m.d
            # conditional weights over allowed next symbols
            weights = np.zeros((n, g.n_symbols))
            for t in range(g.n_symbols):
                y = self.nodes[t]
                den = mats[:, 2][:, None] * y[None, :] + mats[:, 3][:, None]
                absd = 1.0 / den**2
                vy = (mats[:, 0][:, None] * y[None, :] + mats[:, 1][:, None]) / den
                integrand = absd**self.delta
                for s0 in range(g.n_symbols):
                    mask = paths[:, 0] == s0
                    if mask.any():
                        integrand[mask] *= self._h0(vy[mask], s0)
                weights[:, t] = integrand @ self.nu_nodes[t]
            for s in range(g.n_symbols):
                weights[prev == s, g.sbar(s)] = 0.0
            weights /= weights.sum(axis=1, keepdims=True)
            u = rng.random(n)
            cdf = np.cumsum(weights, axis=1)
            paths[:, level] = (u[:, None] > cdf).sum(axis=1)
        # uniform seed within the terminal interval, then contract backward
        last = paths[:, -1]
        lo = np.array([g.interval_float(s)[0] for s in last])
        hi = np.array([g.interval_float(s)[1] for s in last])
        xi = lo + rng.random(n) * (hi - lo)
        orbit = orbit_from_paths(g, paths, xi)
        return orbit, paths


def orbit_from_paths(g: SchottkyGroup, paths: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """orbit[:, j] has coding paths[:, j:], built by backward contraction."""
    n, depth = paths.shape
    orbit = np.empty((n, depth))
    orbit[:, depth - 1] = xi
    for j in range(depth - 2, -1, -1):
        nxt = orbit[:, j + 1]
        cur = np.empty(n)
        for s in range(g.n_symbols):
            mask = paths[:, j] == s
            if mask.any():
                m = g.matrices[s]
                cur[mask] = (m.a * nxt[mask] + m.b) / (m.c * nxt[mask] + m.d)
        orbit[:, j] = cur
    return orbit


def _tau_arrays(g: SchottkyGroup, pts: np.ndarray, syms: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts))
    for s in range(g.n_symbols):
        mask = syms == s
        if mask.any():
            m = g.matrix(s).inverse()
            out[mask] = -np.log(1.0 / (m.c * pts[mask] + m.d) ** 2)
    return -out  # tau = +log|T'|


def flow(
    g: SchottkyGroup,
    mg: ModGroup,
    orbit: np.ndarray,
    paths: np.ndarray,
    s_time: np.ndarray,
    pos: Optional[np.ndarray] = None,
    gshift: Optional[np.ndarray] = None,
):
    """Advance (u, gamma, s) through the suspension until s < tau(u).

    The orbit points are precomputed per coding position (backward-stable),
    so a step only moves the position index, subtracts the roof and
    multiplies the cocycle index.
    """
    n, depth = paths.shape
    if pos is None:
        pos = np.zeros(n, dtype=np.int64)
    if gshift is None:
        gshift = np.zeros(n, dtype=np.int64)
    s_time = s_time.copy()
    pos = pos.copy()
    gshift = gshift.copy()
    rows = np.arange(n)
    while True:
        syms = paths[rows, np.minimum(pos, depth - 1)]
        pts = orbit[rows, np.minimum(pos, depth - 1)]
        tau = _tau_arrays(g, pts, syms)
        active = s_time >= tau
        if not active.any():
            break
        if (pos[active] + 1 >= depth).any():
            raise ResourceLimitError(
                "flow consumed the sampled coding depth; increase depth or reduce t"
            )
        s_time[active] -= tau[active]
        if mg.order > 1:
            for s in range(g.n_symbols):
                mask = active & (syms == s)
                if mask.any():
                    perm = mg.right_mult_perm(mg.cocycle_images[s])
                    gshift[mask] = perm[gshift[mask]]
        pos[active] += 1
    final_pts = orbit[rows, np.minimum(pos, depth - 1)]
    return final_pts, s_time, pos, gshift


def correlation(
    g: SchottkyGroup,
    gd: GibbsData,
    mg: ModGroup,
    phi: SuspensionObservable,
    psi: SuspensionObservable,
    t: float,
    samples: int = 100_000,
    seed: int = 0,
    depth: int = 12,
    truncated: bool = False,
    batch: int = 200_000,
    _state=None,
) -> Tuple[complex, float]:
    """Monte Carlo estimate of the correlation at lag t with its std error.

    (u, s) are sampled; the group sum is evaluated exactly per sample, which
    removes the gamma-sampling variance.  truncated=True restricts the
    s-integral to [max(0, tau - t), tau), the variant whose Laplace
    transform matches the operator expansion.
    """
    root = gd.base if gd.base is not None else gd
    if _state is None:
        sampler = SuspensionSampler(g, root, depth)
        rng = np.random.default_rng(seed)
        orbit, paths = sampler.sample(samples, rng)
        us = rng.random(samples)
    else:
        orbit, paths, us = _state
        samples = len(orbit)
    total = 0.0 + 0.0j
    total2 = 0.0
    n_done = 0
    G = mg.order
    mul = _right_mul_table(mg) if G > 1 else None
    for start in range(0, samples, batch):
        sl = slice(start, min(samples, start + batch))
        o_b, path_b, u_b = orbit[sl], paths[sl], us[sl]
        n = len(o_b)
        tau0 = _tau_arrays(g, o_b[:, 0], path_b[:, 0])
        if truncated:
            smin = np.maximum(0.0, tau0 - t)
            weight = tau0 - smin
            s0 = smin + u_b * (tau0 - smin)
        else:
            weight = tau0
            s0 = u_b * tau0
        cyl0 = _cyl_indices(psi, path_b, 0)
        fpts, fs, fpos, fshift = flow(g, mg, o_b, path_b, s0 + t)
        cyl_f = _cyl_indices(phi, path_b, fpos)
        # exact group sum: sum_gamma phi(u', gamma c, s') psi(u, gamma, s)
        psi_rows = psi.A[cyl0] + psi.B[cyl0] * s0[:, None]
        phi_rows = phi.A[cyl_f] + phi.B[cyl_f] * fs[:, None]
        if G > 1:
            cols = mul[:, fshift].T  # (n, G): gamma -> gamma * c_flow
            phi_rows = phi_rows[np.arange(n)[:, None], cols]
        vals = weight * (phi_rows * psi_rows).sum(axis=1)
        total += vals.sum()
        total2 += float((np.abs(vals) ** 2).sum())
        n_done += n
    est = total / n_done
    var = (total2 - abs(est) ** 2 * n_done) / max(1, n_done - 1)
    return complex(est), float(math.sqrt(max(var, 0.0) / n_done))


def _cyl_code_table(obs: SuspensionObservable) -> np.ndarray:
    key = "_code_table"
    tbl = getattr(obs, key, None)
    if tbl is None:
        k = obs.g.n_symbols
        tbl = np.full(k**obs.depth, -1, dtype=np.int64)
        for w, i in obs.index.items():
            code = 0
            for s in reversed(w):
                code = code * k + s
            tbl[code] = i
        object.__setattr__(obs, key, tbl) if hasattr(obs, "__dataclass_fields__") else setattr(obs, key, tbl)
    return tbl


def _cyl_indices(obs: SuspensionObservable, paths: np.ndarray, pos) -> np.ndarray:
    n, depth = paths.shape
    d = obs.depth
    if np.isscalar(pos):
        pos = np.full(n, pos, dtype=np.int64)
    if (pos + d > depth).any():
        raise ResourceLimitError("observable needs more coding symbols than sampled")
    windows = paths[np.arange(n)[:, None], pos[:, None] + np.arange(d)[None, :]]
    k = obs.g.n_symbols
    codes = (windows * (k ** np.arange(d))[None, :]).sum(axis=1)
    return _cyl_code_table(obs)[codes]


def _right_mul_table(mg: ModGroup) -> np.ndarray:
    key = "rmt"
    if key not in mg._perm_cache:
        G = mg.order
        tbl = np.empty((G, G), dtype=np.int64)
        for j in range(G):
            tbl[:, j] = mg.right_mult_perm(j)
        mg._perm_cache[key] = tbl
    return mg._perm_cache[key]


def correlation_curve(
    g, gd, mg, phi, psi, t_values, samples=100_000, seed=0, depth=12,
    truncated=False, batch=200_000,
):
    """Correlation on a t grid with common random numbers across lags."""
    root = gd.base if gd.base is not None else gd
    sampler = SuspensionSampler(g, root, depth)
    rng = np.random.default_rng(seed)
    orbit, paths = sampler.sample(samples, rng)
    us = rng.random(samples)
    state = (orbit, paths, us)
    out = []
    for t in t_values:
        est, se = correlation(
            g, gd, mg, phi, psi, float(t), seed=seed, depth=depth,
            truncated=truncated, batch=batch, _state=state,
        )
        out.append((float(t), est, se))
    return out


def fit_decay_rate(curve) -> float:
    """Exponential rate fitted on |rho(t)| where the signal beats the noise."""
    ts = np.array([c[0] for c in curve])
    vals = np.array([abs(c[1]) for c in curve])
    ses = np.array([c[2] for c in curve])
    keep = vals > 3 * ses
    keep[:2] = vals[:2] > 0
    if keep.sum() < 3:
        keep = vals > 0
    slope = np.polyfit(ts[keep], np.log(vals[keep] + 1e-300), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# cylinder collocation for the operator side of the Laplace identity


class CylinderCollocation:
    """Depth-d collocation of the normalized congruence operator.

    Functions are vectors over (depth-d cylinder, gamma); the operator acts
    by the exact symbol-shift index map with branch weights evaluated at the
    representative points, which resolves observables that are locally
    constant at this depth.
    """

    def __init__(self, g: SchottkyGroup, gd: GibbsData, mg: ModGroup, depth: int = 6):
        root = gd.base if gd.base is not None else gd
        self.g, self.gd, self.mg, self.depth = g, root, mg, depth
        self.words = [w for w, _ in cylinders(g, depth)]
        self.index = {w: i for i, w in enumerate(self.words)}
        self.points = np.array([point_of_sequence(g, w) for w in self.words])
        self.weights_nu = np.array(
            [invariant_cylinder_measure(root, w) for w in self.words]
        )
        self.tau = _tau_arrays(
            g, self.points, np.array([w[0] for w in self.words])
        )

    def apply_M(self, H: np.ndarray, a: float, b: float) -> np.ndarray:
        """One application of the normalized twisted operator."""
        g, gd, mg = self.g, self.gd, self.mg
        lam_a = gd.lam_at(a)
        delta = gd.delta
        out = np.zeros_like(H, dtype=complex)
        grid = gd.grid
        for u in range(g.n_symbols):
            m = g.matrix(u)
            rows = [i for i, w in enumerate(self.words) if w[0] != g.sbar(u)]
            rows = np.array(rows)
            x = self.points[rows]
            den = m.c * x + m.d
            absd = 1.0 / den**2
            y = (m.a * x + m.b) / den
            h0x = np.concatenate(
                [grid.interpolate(self.words[i][0], gd.h[grid.sym_slice(self.words[i][0])], [xx])
                 for i, xx in zip(rows, x)]
            )
            h0y = grid.interpolate(u, gd.h[grid.sym_slice(u)], y)
            wgt = absd ** (delta + a) * h0y / (lam_a * h0x)
            if b != 0.0:
                wgt = wgt * np.exp(-1j * b * np.log(absd))
            tgt = np.array(
                [self.index[(u,) + self.words[i][: self.depth - 1]] for i in rows]
            )
            perm = mg.cocycle_perm(u)
            out[rows] += wgt[:, None] * H[tgt][:, perm]
        return out

    def integrate_pairing(self, F: np.ndarray, G_: np.ndarray) -> complex:
        """integral over u of sum_gamma F(u,gamma) G(u,gamma) d nu."""
        return complex(self.weights_nu @ (F * G_).sum(axis=1))


def hat_transform(
    coll: CylinderCollocation, obs: SuspensionObservable, xi: complex
) -> np.ndarray:
    """phi_hat_xi(u, gamma) = integral_0^tau(u) phi(u, gamma, t) e^(-xi t) dt,
    in closed form for observables linear in t."""
    idx = np.array([obs.index[w[: obs.depth]] for w in coll.words])
    A = obs.A[idx]
    B = obs.B[idx]
    tau = coll.tau[:, None]
    if abs(xi) < 1e-14:
        return A * tau + B * tau**2 / 2
    e = np.exp(-xi * tau)
    intA = (1 - e) / xi
    intB = (1 - e * (1 + xi * tau)) / xi**2
    return A * intA + B * intB


@dataclass
class LaplaceReport:
    mc_value: complex
    mc_stderr: float
    operator_value: complex
    residual: float
    k_max: int
    xi: complex


def laplace_identity_check(
    g: SchottkyGroup,
    gd: GibbsData,
    mg: ModGroup,
    phi: SuspensionObservable,
    psi: SuspensionObservable,
    xi: complex,
    k_max: int = 40,
    samples: int = 100_000,
    seed: int = 0,
    t_max: float = 25.0,
    nt: int = 126,
    coll_depth: int = 6,
) -> LaplaceReport:
    """Two-route check of the Laplace-transform identity.

    Route 1 integrates the Monte Carlo truncated correlation; route 2 sums
    lam_a^k <phi_hat_xi, M^k psi_hat_(-xi)> over k by repeated application
    of the operator on the cylinder collocation.  xi = a - i b.
    """
    if xi.real <= 0:
        raise SchottkyFlowError("the Laplace identity check needs Re(xi) > 0")
    ts = np.linspace(0.0, t_max, nt)
    depth = required_depth(g, t_max, phi.depth)
    curve = correlation_curve(
        g, gd, mg, phi, psi, ts, samples=samples, seed=seed, truncated=True,
        depth=depth,
    )
    vals = np.array([c[1] for c in curve])
    ses = np.array([c[2] for c in curve])
    integrand = np.exp(-xi * ts) * vals
    mc = complex(np.trapezoid(integrand, ts))
    mc_se = float(np.sqrt(np.trapezoid((np.exp(-xi.real * ts) * ses) ** 2, ts) * (ts[1] - ts[0])))

    a, b = xi.real, -xi.imag
    coll = CylinderCollocation(g, gd, mg, depth=coll_depth)
    phat = hat_transform(coll, phi, xi)
    psih = hat_transform(coll, psi, -xi)
    lam_a = (gd.base or gd).lam_at(a) if gd.base is not None else gd.lam_at(a)
    total = 0.0 + 0.0j
    H = psih.astype(complex)
    for k in range(1, k_max + 1):
        H = coll.apply_M(H, a, b)
        total += lam_a**k * coll.integrate_pairing(phat, H)
    residual = abs(mc - total)
    return LaplaceReport(
        mc_value=mc,
        mc_stderr=mc_se,
        operator_value=complex(total),
        residual=residual,
        k_max=k_max,
        xi=xi,
    )
