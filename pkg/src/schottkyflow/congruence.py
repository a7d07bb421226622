"""SL(2, Z/q) machinery and congruence transfer operators.

Elements are packed 4-tuples mod q with a perfect-hash index.  The twisted
operator is applied matrix-free: base collocation blocks act on the node axis
and the cocycle acts by per-symbol permutations of the group axis, so the
dense (nodes * |G|)^2 matrix is never formed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arith import IntMatrix2, reduce_mod
from .coding import cylinders, is_admissible, point_of_sequence, roof_sum
from .errors import (
    CatalogUnavailableError,
    DimensionMismatchError,
    NotAdmissibleError,
    NotDivisorError,
    ResourceLimitError,
)
from .schottky import SchottkyGroup
from .thermo import CollocationGrid, GibbsData

MUL_TABLE_THRESHOLD = 5000


def sl2_order(q: int) -> int:
    """|SL(2, Z/q)| = q^3 prod_{p | q} (1 - p^-2)."""
    n = q**3
    qq = q
    p = 2
    while p * p <= qq:
        if qq % p == 0:
            n = n // (p * p) * (p * p - 1)
            while qq % p == 0:
                qq //= p
        p += 1
    if qq > 1:
        n = n // (qq * qq) * (qq * qq - 1)
    return n


def _pack(mats: np.ndarray, q: int) -> np.ndarray:
    a, b, c, d = mats[..., 0], mats[..., 1], mats[..., 2], mats[..., 3]
    return ((a * q + b) * q + c) * q + d


def _matmul_mod(x: np.ndarray, y: np.ndarray, q: int) -> np.ndarray:
    """Entrywise (n,4) x (4,) or (n,4) x (n,4) products mod q."""
    a1, b1, c1, d1 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    a2, b2, c2, d2 = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    return np.stack(
        [
            (a1 * a2 + b1 * c2) % q,
            (a1 * b2 + b1 * d2) % q,
            (c1 * a2 + d1 * c2) % q,
            (c1 * b2 + d1 * d2) % q,
        ],
        axis=-1,
    )


@dataclass
class ModGroup:
    """Enumerated subgroup of SL(2, Z/q) generated by the reduced generators."""

    q: int
    group: SchottkyGroup
    elements: np.ndarray  # (n, 4) int64, row 0 is the identity
    index: Dict[int, int]
    admissible: bool
    full_order: int
    cocycle_images: Tuple[int, ...]  # element index per symbol
    _perm_cache: dict = field(default_factory=dict, repr=False)
    _mul_table: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return len(self.elements)

    def idx_of(self, m) -> int:
        if isinstance(m, IntMatrix2):
            m = reduce_mod(m, self.q)
        key = ((m.a * self.q + m.b) * self.q + m.c) * self.q + m.d
        return self.index[int(key)]

    def element(self, i: int) -> np.ndarray:
        return self.elements[i]

    def mul_indices(self, i: int, j: int) -> int:
        if self._mul_table is not None:
            return int(self._mul_table[i, j])
        prod = _matmul_mod(self.elements[i], self.elements[j], self.q)
        return self.index[int(_pack(prod, self.q))]

    def ensure_mul_table(self):
        if self._mul_table is None and self.order <= MUL_TABLE_THRESHOLD:
            n = self.order
            table = np.empty((n, n), dtype=np.int32)
            for j in range(n):
                prods = _matmul_mod(self.elements, self.elements[j], self.q)
                keys = _pack(prods, self.q)
                table[:, j] = [self.index[int(k)] for k in keys]
            self._mul_table = table
        return self._mul_table

    def inverse_indices(self) -> np.ndarray:
        if "inv" not in self._perm_cache:
            e = self.elements
            inv = np.stack([e[:, 3] % self.q, -e[:, 1] % self.q,
                            -e[:, 2] % self.q, e[:, 0] % self.q], axis=-1)
            keys = _pack(inv, self.q)
            self._perm_cache["inv"] = np.array(
                [self.index[int(k)] for k in keys], dtype=np.int64
            )
        return self._perm_cache["inv"]

    def right_mult_perm(self, j: int) -> np.ndarray:
        """Permutation i -> index(elem_i * elem_j)."""
        key = ("rm", j)
        if key not in self._perm_cache:
            prods = _matmul_mod(self.elements, self.elements[j], self.q)
            keys = _pack(prods, self.q)
            self._perm_cache[key] = np.array(
                [self.index[int(k)] for k in keys], dtype=np.int64
            )
        return self._perm_cache[key]

    def cocycle_perm(self, symbol: int) -> np.ndarray:
        """Permutation i -> index(elem_i * c(symbol)^-1) for the group axis."""
        key = ("coc", symbol)
        if key not in self._perm_cache:
            j = self.cocycle_images[symbol]
            jinv = int(self.inverse_indices()[j])
            self._perm_cache[key] = self.right_mult_perm(jinv)
        return self._perm_cache[key]

    def element_order(self, i: int) -> int:
        n = 1
        j = i
        while j != 0:
            j = self.mul_indices(j, i)
            n += 1
        return n

    def residue_labels(self, qp: int) -> np.ndarray:
        """Packed residues of each element mod qp (labels of K_qp cosets)."""
        key = ("lab", qp)
        if key not in self._perm_cache:
            e = self.elements % qp
            self._perm_cache[key] = _pack(e, qp)
        return self._perm_cache[key]


def build_modgroup(g: SchottkyGroup, q: int) -> ModGroup:
    """Enumerate the subgroup generated by the reduced generators.

    The level is admissible iff the closure is all of SL(2, Z/q); an
    inadmissible group is still returned with the flag cleared so callers
    can report the observed bad set.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    seeds = []
    for s in range(g.n_symbols):
        m = reduce_mod(g.matrix(s), q)
        seeds.append([m.a, m.b, m.c, m.d])
    identity = [1 % q, 0, 0, 1 % q]
    elements = [identity]
    index = {int(_pack(np.array(identity), q)): 0}
    frontier = [np.array(identity)]
    seeds_np = np.array(seeds)
    while frontier:
        block = np.stack(frontier)
        frontier = []
        for j in range(len(seeds)):
            prods = _matmul_mod(block, seeds_np[j], q)
            keys = _pack(prods, q)
            for row, key in zip(prods, keys):
                k = int(key)
                if k not in index:
                    index[k] = len(elements)
                    elements.append(row.tolist())
                    frontier.append(row)
    elements = np.array(elements, dtype=np.int64)
    full = sl2_order(q)
    cocycle = tuple(
        index[int(_pack(np.array([m.a, m.b, m.c, m.d]), q))]
        for m in (reduce_mod(g.matrix(s), q) for s in range(g.n_symbols))
    )
    return ModGroup(
        q=q,
        group=g,
        elements=elements,
        index=index,
        admissible=(len(elements) == full),
        full_order=full,
        cocycle_images=cocycle,
    )


def bad_levels(g: SchottkyGroup, q_max: int) -> List[int]:
    """Observed inadmissible levels up to q_max (the empirical bad set)."""
    return [q for q in range(2, q_max + 1) if not build_modgroup(g, q).admissible]


# ---------------------------------------------------------------------------
# vector functions and norms


@dataclass
class VectorFunction:
    """Function on nodes x group: values[node, gamma]; new-space means
    vanishing gamma-sums at every node."""

    values: np.ndarray
    gd: GibbsData
    mg: ModGroup

    def in_new_space(self, tol: float = 1e-10) -> bool:
        return bool(np.abs(self.values.sum(axis=1)).max() < tol)


class L2Form:
    """Positive quadrature for the invariant measure on a collocation grid.

    Cylinder measures at a fixed depth with midpoint evaluation; collocation
    dual weights are signed, so norms go through this form instead.
    """

    def __init__(self, gd: GibbsData, depth: int = 5):
        from .thermo import invariant_cylinder_measure

        root = gd.base if gd.base is not None else gd
        g = root.group
        grid = root.grid
        words = []
        weights = []
        points = []
        for word, (lo, hi) in cylinders(g, depth):
            words.append(word)
            weights.append(invariant_cylinder_measure(root, word))
            points.append(0.5 * (lo + hi))
        self.weights = np.array(weights)
        self.points = np.array(points)
        self.words = words
        rows = []
        eval_blocks = np.zeros((len(words), grid.k * grid.order))
        by_sym: Dict[int, List[int]] = {}
        for i, w in enumerate(words):
            by_sym.setdefault(w[0], []).append(i)
        for s, idxs in by_sym.items():
            pts = self.points[idxs]
            eval_blocks[np.array(idxs)[:, None], np.arange(*grid.sym_slice(s).indices(grid.k * grid.order))[None, :]] = grid.eval_weights(s, pts)
        self.eval_matrix = eval_blocks

    def norm(self, values: np.ndarray) -> float:
        at_pts = self.eval_matrix @ values
        if at_pts.ndim == 1:
            return float(np.sqrt(self.weights @ (np.abs(at_pts) ** 2)))
        return float(np.sqrt(self.weights @ (np.abs(at_pts) ** 2).sum(axis=1)))


def l2_form(gd: GibbsData, depth: int = 5) -> L2Form:
    root = gd.base if gd.base is not None else gd
    key = ("l2form", depth)
    if key not in root._lam_cache:
        root._lam_cache[key] = L2Form(root, depth)
    return root._lam_cache[key]


def norm_2(gd: GibbsData, H: np.ndarray) -> float:
    """L2 norm against the invariant probability measure."""
    values = H.values if isinstance(H, VectorFunction) else np.asarray(H)
    return l2_form(gd).norm(values)


def norm_1b(gd: GibbsData, H: np.ndarray, b: float) -> float:
    """sup|H| + Lipschitz seminorm over node pairs, damped by 1/max(1,|b|)."""
    values = H.values if isinstance(H, VectorFunction) else np.asarray(H)
    if values.ndim == 1:
        values = values[:, None]
    pts = gd.grid.node_flat
    mags = np.linalg.norm(values, axis=1)
    sup = float(mags.max())
    diff = np.linalg.norm(values[:, None, :] - values[None, :, :], axis=2)
    dist = np.abs(pts[:, None] - pts[None, :])
    mask = dist > 1e-14
    lip = float((diff[mask] / dist[mask]).max())
    return sup + lip / max(1.0, abs(b))


# ---------------------------------------------------------------------------
# the congruence transfer operator, matrix-free over the group axis


class CongruenceOperator:
    """Normalized congruence transfer operator at parameters (a, b, q).

    apply() computes (M H)(x, gamma) = (1/(lam_a h0(x))) * sum over branches
    e^{(-(delta+a)+ib) tau(y)} (h0 H)(y, gamma c(y)^-1) by per-symbol blocks.
    """

    def __init__(self, gd: GibbsData, mg: ModGroup, a: float, b: float):
        root = gd.base if gd.base is not None else gd
        self.gd = root
        self.mg = mg
        self.a = a
        self.b = b
        g = root.group
        grid = root.grid
        delta = root.delta
        lam_a = root.lam_at(a)
        h0 = root.h
        k, p = grid.k, grid.order
        self.blocks = {}
        s_exp = delta + a - 1j * b if b != 0.0 else delta + a
        for u in range(k):
            rows = []
            for t in range(k):
                if t == g.sbar(u):
                    rows.append(np.zeros((p, p), dtype=complex if b != 0 else float))
                    continue
                w = grid.branch_absder[(t, u)]
                ev = grid.branch_eval_matrix(t, u)
                wexp = np.exp(s_exp * np.log(w))
                h0_t = h0[grid.sym_slice(t)]
                h0_u = h0[grid.sym_slice(u)]
                block = (wexp / (lam_a * h0_t))[:, None] * ev * h0_u[None, :]
                rows.append(block)
            self.blocks[u] = np.vstack(rows)
        self.perms = {u: mg.cocycle_perm(u) for u in range(k)}
        self.k, self.p = k, p

    def apply(self, H: np.ndarray) -> np.ndarray:
        n_nodes = self.k * self.p
        if H.shape[0] != n_nodes or H.shape[1] != self.mg.order:
            raise DimensionMismatchError(
                f"H has shape {H.shape}, expected ({n_nodes}, {self.mg.order})"
            )
        out = np.zeros(H.shape, dtype=complex if self.b != 0 else H.dtype)
        for u in range(self.k):
            rows = slice(u * self.p, (u + 1) * self.p)
            out += self.blocks[u] @ H[rows][:, self.perms[u]]
        return out


def operator(g, gd: GibbsData, mg: ModGroup, a: float, b: float) -> CongruenceOperator:
    root = gd.base if gd.base is not None else gd
    key = ("congop", id(mg), a, b)
    if key not in root._lam_cache:
        root._lam_cache[key] = CongruenceOperator(root, mg, a, b)
    return root._lam_cache[key]


def apply_M(g, gd: GibbsData, mg: ModGroup, a: float, b: float, H) -> np.ndarray:
    values = H.values if isinstance(H, VectorFunction) else np.asarray(H)
    return operator(g, gd, mg, a, b).apply(values)


# ---------------------------------------------------------------------------
# old/new decomposition


def _divisors(n: int) -> List[int]:
    out = [d for d in range(1, n + 1) if n % d == 0]
    return out


def _mobius(n: int) -> int:
    if n == 1:
        return 1
    m = 1
    p = 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            m = -m
        p += 1
    if n > 1:
        m = -m
    return m


def _average_over_kernel(mg: ModGroup, qp: int, values: np.ndarray) -> np.ndarray:
    """Average over kernel cosets of SL2(q) -> SL2(qp) (left invariance)."""
    if qp == mg.q:
        return values
    labels = mg.residue_labels(qp)
    order = np.argsort(labels, kind="stable")
    n_classes = len(np.unique(labels))
    size = mg.order // n_classes
    arr = values[:, order].reshape(values.shape[0], n_classes, size)
    means = arr.mean(axis=2)
    out = np.empty_like(values)
    out[:, order] = np.repeat(means, size, axis=1)
    return out


def project_new(mg: ModGroup, qp: int, H) -> np.ndarray:
    """Projection onto functions new at level qp, by inclusion-exclusion.

    e_{q,qp} = sum over divisors d of qp of mobius(qp/d) * (average over the
    kernel of reduction to level d); idempotent and norm-nonincreasing.
    """
    values = H.values if isinstance(H, VectorFunction) else np.asarray(H)
    q = mg.q
    if q % qp != 0:
        raise NotDivisorError(f"{qp} does not divide {q}")
    if not mg.admissible:
        raise NotAdmissibleError(q, mg.order, mg.full_order)
    if values.ndim == 1:
        values = values[None, :]
        squeeze = True
    else:
        squeeze = False
    out = np.zeros_like(values)
    for d in _divisors(qp):
        mu = _mobius(qp // d)
        if mu == 0:
            continue
        out = out + mu * _average_over_kernel(mg, d, values)
    return out[0] if squeeze else out


def pullback(mg: ModGroup, mg_sub: ModGroup, F: np.ndarray) -> np.ndarray:
    """Pull a function on SL2(q') back to SL2(q) through reduction mod q'."""
    labels = mg.residue_labels(mg_sub.q)
    idx = np.array([mg_sub.index[int(k)] for k in labels], dtype=np.int64)
    return np.asarray(F)[..., idx]


def project_to_level(mg: ModGroup, mg_sub: ModGroup, F: np.ndarray) -> np.ndarray:
    """proj_{q,q'}: evaluate at any preimage of each element of SL2(q')."""
    reps = np.full(mg_sub.order, -1, dtype=np.int64)
    labels = mg.residue_labels(mg_sub.q)
    for i, lab in enumerate(labels):
        j = mg_sub.index[int(lab)]
        if reps[j] < 0:
            reps[j] = i
    return np.asarray(F)[..., reps]


# ---------------------------------------------------------------------------
# spectral radius on the new space


def _project_W(values: np.ndarray) -> np.ndarray:
    return values - values.mean(axis=1, keepdims=True)


def spectral_radius_new(
    g,
    gd: GibbsData,
    mg: ModGroup,
    a: float,
    b: float,
    iters: int = 150,
    seed: int = 7,
    tail: float = 0.5,
):
    """Power iteration of the congruence operator restricted to the new space.

    Returns (radius_estimate, decay_curve); the radius is fitted on the tail
    of the per-step log-norm curve.  At q = 1 the iteration runs on scalar
    functions with the invariant mean projected out, so the estimate matches
    the subleading eigenvalue of the normalized operator.
    """
    if mg.q > 1 and not mg.admissible:
        raise NotAdmissibleError(mg.q, mg.order, mg.full_order)
    root = gd.base if gd.base is not None else gd
    rng = np.random.default_rng(seed)
    n_nodes = root.grid.k * root.grid.order
    form = l2_form(root)
    if mg.q == 1:
        w_inv = root.invariant_weights
        H = rng.standard_normal(n_nodes) + 1j * rng.standard_normal(n_nodes)
        H = H - (w_inv @ H)  # invariant-mean zero
        H = H[:, None]
        project = lambda v: v - (w_inv @ v[:, 0])[None] * np.ones((n_nodes, 1))
    else:
        H = rng.standard_normal((n_nodes, mg.order)) + 1j * rng.standard_normal(
            (n_nodes, mg.order)
        )
        H = _project_W(H)
        project = _project_W
    op = operator(g, root, mg, a, b)
    curve = []
    lognorm = 0.0
    nrm = form.norm(H)
    H = H / nrm
    for m in range(iters):
        H = op.apply(H.astype(complex))
        H = project(H)
        nrm = form.norm(H)
        if nrm == 0.0:
            break
        lognorm += math.log(nrm)
        curve.append(lognorm)
        H = H / nrm
    steps = np.arange(1, len(curve) + 1)
    cut = int(len(curve) * (1.0 - tail))
    slope = np.polyfit(steps[cut:], np.array(curve)[cut:], 1)[0]
    return float(math.exp(slope)), np.array(curve)


# ---------------------------------------------------------------------------
# flattening measures (section-4 diagnostics)


@dataclass
class ComplexMeasure:
    """Complex measure on the finite group, stored as weights per element index."""

    weights: np.ndarray
    mg: ModGroup

    @property
    def l1(self) -> float:
        return float(np.abs(self.weights).sum())

    @property
    def linf(self) -> float:
        return float(np.abs(self.weights).max())


def lemma_c_constant(gd: GibbsData, a_values=(0.0, 0.05, -0.05), n_max: int = 30) -> float:
    """Measured sup over n of ||Lhat_{a0}^n 1||_inf, the normalized-sum bound."""
    from .thermo import normalized_matrix

    root = gd.base if gd.base is not None else gd
    best = 0.0
    for a in a_values:
        m = normalized_matrix(root, a, 0.0)
        v = np.ones(m.shape[0])
        for _ in range(n_max):
            v = m @ v
            best = max(best, float(np.abs(v).max()))
    return best


def eta_theta(gd: GibbsData, theta: float, a_values=(0.0, 0.05, -0.05), depth: int = 8) -> float:
    """Measured (Lip_theta(tau) + max_a Lip_theta(f^a)) / (1 - theta).

    The d_theta Lipschitz constants come from oscillations over cylinders:
    pairs of codings agreeing to depth j lie in a common depth-j cylinder.
    """
    root = gd.base if gd.base is not None else gd
    g = root.group
    grid = root.grid
    h0 = root.h
    delta = root.delta

    def tau_at(x, s):
        m = g.matrix(s).inverse()
        return math.log(1.0 / (m.c * x + m.d) ** 2)

    def h0_at(x, s):
        return float(grid.interpolate(s, h0[grid.sym_slice(s)], [x])[0])

    from .arith import mobius_apply

    lip_tau = 0.0
    lip_f = {a: 0.0 for a in a_values}
    for j in range(1, depth + 1):
        osc_tau = 0.0
        # f involves h0 at the shifted point, whose interval is the second
        # symbol; group child-cylinder endpoint values under each parent
        f_ranges = {a: {} for a in a_values}
        for word, (lo, hi) in cylinders(g, j):
            s0 = word[0]
            osc_tau = max(osc_tau, abs(tau_at(hi, s0) - tau_at(lo, s0)))
        for word, (lo, hi) in cylinders(g, j + 1):
            s0, s1 = word[0], word[1]
            parent = word[:j]
            minv = g.matrix(s0).inverse()
            for x in (lo, hi):
                tau_x = tau_at(x, s0)
                sx = mobius_apply(minv, x)
                base = math.log(h0_at(x, s0)) - math.log(h0_at(sx, s1))
                for a in a_values:
                    f_x = -(delta + a) * tau_x + base
                    lohi = f_ranges[a].get(parent)
                    if lohi is None:
                        f_ranges[a][parent] = [f_x, f_x]
                    else:
                        lohi[0] = min(lohi[0], f_x)
                        lohi[1] = max(lohi[1], f_x)
        lip_tau = max(lip_tau, osc_tau / theta**j)
        for a in a_values:
            osc = max(hi - lo for lo, hi in f_ranges[a].values())
            lip_f[a] = max(lip_f[a], osc / theta**j)
    return (lip_tau + max(lip_f.values())) / (1.0 - theta)


def build_mu(
    g: SchottkyGroup,
    gd: GibbsData,
    mg: ModGroup,
    a: float,
    b: float,
    x: Sequence[int],
    prefix: Sequence[int],
    m_q: Optional[int] = None,
    d0: int = 4,
    cap: int = 200_000,
    theta: Optional[float] = None,
):
    """Flattening measure: middles of length m_q summed into cocycle classes.

    mu(gamma) collects e^{(f^(a) + ib tau)_n} over all admissible middles
    whose (m_q+1)-step cocycle lands on gamma; also returns the bound
    B = c_measured * e^{f_r(prefix at closing point)} * e^{eta_theta}.

    The paper's split n_q = floor(log q) degenerates at desk scale (it forces
    m_q = 0), so m_q is an explicit parameter; the default takes the largest
    integer below n/d0, clamped to 1.
    """
    if mg.q > 1 and not mg.admissible:
        raise NotAdmissibleError(mg.q, mg.order, mg.full_order)
    root = gd.base if gd.base is not None else gd
    x = tuple(x)
    prefix = tuple(prefix)
    if not is_admissible(g, prefix):
        raise ValueError("prefix not admissible")
    r_q = len(prefix)
    if m_q is None:
        n_q = max(int(math.log(max(mg.q, 3))), r_q + 1)
        m_q = max(1, n_q // d0)
    n_q = r_q + m_q
    n_mid = (g.n_symbols - 1) ** m_q
    if n_mid > cap:
        raise ResourceLimitError(f"{n_mid} middles exceed cap {cap}")

    delta = root.delta
    lam_a = root.lam_at(a)
    grid = root.grid
    h0 = root.h
    xi = point_of_sequence(g, x)

    def h0_at(pt, sym):
        return float(grid.interpolate(sym, h0[grid.sym_slice(sym)], [pt])[0])

    h0_xi = h0_at(xi, x[0])

    weights = np.zeros(mg.order, dtype=complex)
    total_mass = 0.0

    def weight_of(word):
        # full word = prefix + middle; Birkhoff sum of f^(a) + ib tau at the
        # point (word, x): telescopes through the word contraction v
        v = IntMatrix2.identity()
        for s in word:
            v = v * g.matrix(s)
        den = v.c * xi + v.d
        absder = 1.0 / float(den * den)
        tau_n = -math.log(absder)
        y = (v.a * xi + v.b) / den
        f_n = (
            -(delta + a) * tau_n
            + math.log(h0_at(y, word[0]))
            - math.log(h0_xi)
            - n_q * math.log(lam_a)
        )
        return math.exp(f_n) * (np.exp(1j * b * tau_n) if b != 0.0 else 1.0)

    def rec(middle, gamma_idx):
        nonlocal total_mass
        if len(middle) == m_q:
            if middle[-1] == g.sbar(x[0]):
                return
            w = weight_of(prefix + middle)
            weights[gamma_idx] += w
            total_mass += abs(w)
            return
        prev = middle[-1] if middle else prefix[-1]
        for s in range(g.n_symbols):
            if s == g.sbar(prev):
                continue
            nxt = mg.mul_indices(gamma_idx, mg.cocycle_images[s])
            rec(middle + (s,), nxt)

    # gamma = c(prefix[-1]) * c(middle...) per the (m_q+1)-step cocycle
    rec((), mg.cocycle_images[prefix[-1]])

    if theta is None:
        from .coding import default_theta

        theta = default_theta(g)
    c_meas = lemma_c_constant(root)
    eta = eta_theta(root, theta)
    # f_r along the prefix, closed at the canonical tail point of prefix
    omega = point_of_sequence(g, (prefix[-1],) + ((g.allowed_after(prefix[-1])[0]),))
    vpref = IntMatrix2.identity()
    for s in prefix[:-1]:
        vpref = vpref * g.matrix(s)
    # evaluate f_r at the closing point: base point is omega in I_{prefix[-1]}
    den = vpref.c * omega + vpref.d
    absder = 1.0 / float(den * den)
    tau_r1 = -math.log(absder)  # r_q - 1 steps through the prefix contraction
    m_last = g.matrix(prefix[-1]).inverse()
    tau_last = math.log(1.0 / (m_last.c * omega + m_last.d) ** 2)
    y = (vpref.a * omega + vpref.b) / den
    sig_omega = float((g.matrix(prefix[-1]).inverse().a * omega + g.matrix(prefix[-1]).inverse().b) / (g.matrix(prefix[-1]).inverse().c * omega + g.matrix(prefix[-1]).inverse().d))
    f_r = (
        -(delta + a) * (tau_r1 + tau_last)
        + math.log(h0_at(y, prefix[0]))
        - math.log(h0_at(sig_omega, g.symbol_of_point(sig_omega)))
        - r_q * math.log(lam_a)
    )
    B = c_meas * math.exp(f_r) * math.exp(eta)
    mu = ComplexMeasure(weights=weights, mg=mg)
    return mu, B


# ---------------------------------------------------------------------------
# coset catalog and convolution decay


def _prime_factors(n: int) -> List[int]:
    out = []
    p = 2
    while p * p <= n:
        if n % p == 0:
            out.append(p)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def _lines(q: int) -> List[Tuple[int, int]]:
    """Representatives of P^1(F_q): (1, t) for t in F_q, plus (0, 1)."""
    return [(1, t) for t in range(q)] + [(0, 1)]


def _line_canon(v: Tuple[int, int], q: int) -> Tuple[int, int]:
    a, b = v[0] % q, v[1] % q
    if a != 0:
        ainv = pow(a, -1, q)
        return (1, (b * ainv) % q)
    return (0, 1)


def coset_catalog_max(mu: ComplexMeasure) -> Dict[str, float]:
    """Max |mu|-weight over cosets of the standard subgroup families.

    Prime levels only: Borel (line stabilizers), split torus (pointwise pair
    stabilizers), monomial (setwise pair stabilizers), unipotent radicals,
    and one nonsplit torus normalizer.  Left cosets are labelled by images.
    """
    mg = mu.mg
    q = mg.q
    if len(_prime_factors(q)) != 1 or q != _prime_factors(q)[0]:
        raise CatalogUnavailableError(f"coset catalog needs prime q, got {q}")
    absw = np.abs(mu.weights)
    e = mg.elements
    out = {}

    def line_image(line):
        # column action: g maps span(x, y)^T; returns canonical labels array
        x, y = line
        ax = (e[:, 0] * x + e[:, 1] * y) % q
        cx = (e[:, 2] * x + e[:, 3] * y) % q
        labs = np.empty(mg.order, dtype=np.int64)
        for i in range(mg.order):
            labs[i] = _line_canon((int(ax[i]), int(cx[i])), q)[0] * q + _line_canon(
                (int(ax[i]), int(cx[i])), q
            )[1]
        return labs

    lines = _lines(q)
    images = {L: line_image(L) for L in lines}

    best = 0.0
    for L in lines:
        labs = images[L]
        for lab in np.unique(labs):
            best = max(best, float(absw[labs == lab].sum()))
    out["borel"] = best

    best = 0.0
    best_mono = 0.0
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            li, lj = images[lines[i]], images[lines[j]]
            pair = li * (q * q + q + 1) + lj
            for lab in np.unique(pair):
                best = max(best, float(absw[pair == lab].sum()))
            lo = np.minimum(li, lj)
            hi = np.maximum(li, lj)
            pair_u = lo * (q * q + q + 1) + hi
            for lab in np.unique(pair_u):
                best_mono = max(best_mono, float(absw[pair_u == lab].sum()))
    out["split_torus"] = best
    out["monomial"] = best_mono

    # unipotent: cosets of conjugates of the upper unitriangulars share the
    # first column of h^-1 g up to sign; label by canonical +-column
    best = 0.0
    for L in lines:
        x, y = L
        ax = (e[:, 0] * x + e[:, 1] * y) % q
        cx = (e[:, 2] * x + e[:, 3] * y) % q
        lab = np.empty(mg.order, dtype=np.int64)
        for i in range(mg.order):
            v = (int(ax[i]), int(cx[i]))
            w = ((-v[0]) % q, (-v[1]) % q)
            vv = min(v, w)
            lab[i] = vv[0] * q + vv[1]
        for l0 in np.unique(lab):
            best = max(best, float(absw[lab == l0].sum()))
    out["unipotent"] = best

    # nonsplit torus normalizer: brute force from an element of order q+1
    if q > 2:
        gen = None
        for i in range(1, mg.order):
            if mg.element_order(i) == q + 1:
                gen = i
                break
        if gen is not None:
            x = mg.elements[gen]
            comm = []
            for i in range(mg.order):
                gi = mg.elements[i]
                if np.array_equal(_matmul_mod(gi, x, q), _matmul_mod(x, gi, q)):
                    comm.append(i)
            torus = set(comm)
            norm = []
            inv = mg.inverse_indices()
            for i in range(mg.order):
                gxg = mg.mul_indices(mg.mul_indices(i, gen), int(inv[i]))
                if gxg in torus:
                    norm.append(i)
            norm_set = sorted(norm)
            lab = np.full(mg.order, -1, dtype=np.int64)
            for i in range(mg.order):
                if lab[i] >= 0:
                    continue
                members = [mg.mul_indices(i, n) for n in norm_set]
                rep = min(members)
                for m_i in members:
                    lab[m_i] = rep
            best = 0.0
            for l0 in np.unique(lab):
                best = max(best, float(absw[lab == l0].sum()))
            out["nonsplit_normalizer"] = best
    out["max"] = max(out.values())
    return out


def convolve(mu: ComplexMeasure, phi: np.ndarray) -> np.ndarray:
    """(mu * phi)(g) = sum_gamma mu(gamma) phi(g gamma^-1)."""
    mg = mu.mg
    out = np.zeros(len(phi), dtype=complex)
    inv = mg.inverse_indices()
    support = np.nonzero(np.abs(mu.weights) > 0)[0]
    for j in support:
        perm = mg.right_mult_perm(int(inv[j]))
        out += mu.weights[j] * np.asarray(phi)[perm]
    return out


def convolution_decay_ratio(mu: ComplexMeasure, trials: int = 8, iters: int = 30, seed: int = 11) -> float:
    """sup over phi in the new space of ||mu*phi||_2 / (||mu||_1 ||phi||_2).

    Estimated by power iteration on the normal operator of the convolution
    restricted to mean-zero functions (prime q: new space = L^2_0).
    """
    mg = mu.mg
    rng = np.random.default_rng(seed)
    inv = mg.inverse_indices()
    mu_adj = ComplexMeasure(weights=np.conj(mu.weights[inv]), mg=mg)

    def step(phi):
        phi = phi - phi.mean()
        w = convolve(mu, phi)
        w = w - w.mean()
        w = convolve(mu_adj, w)
        return w - w.mean()

    best = 0.0
    for _ in range(trials):
        phi = rng.standard_normal(mg.order) + 1j * rng.standard_normal(mg.order)
        phi = phi - phi.mean()
        phi /= np.linalg.norm(phi)
        sigma2 = 0.0
        for _ in range(iters):
            w = step(phi)
            sigma2 = np.linalg.norm(w)
            if sigma2 == 0:
                break
            phi = w / sigma2
        best = max(best, math.sqrt(sigma2))
    return best / mu.l1 if mu.l1 > 0 else 0.0


@dataclass
class FlatteningReport:
    l1: float
    linf: float
    bound_B: float
    coset_max: Optional[Dict[str, float]]
    convolution_ratio: float
    q: int
    square_free: bool


def flattening_report(mu: ComplexMeasure, mg: ModGroup, B: Optional[float] = None) -> FlatteningReport:
    q = mg.q
    square_free = all(q % (p * p) != 0 for p in _prime_factors(q))
    try:
        cmax = coset_catalog_max(mu)
    except CatalogUnavailableError:
        cmax = None
    ratio = convolution_decay_ratio(mu)
    return FlatteningReport(
        l1=mu.l1,
        linf=mu.linf,
        bound_B=B if B is not None else float("nan"),
        coset_max=cmax,
        convolution_ratio=ratio,
        q=q,
        square_free=square_free,
    )


# ---------------------------------------------------------------------------
# Cayley graph gap


def cayley_gap(mg: ModGroup) -> float:
    """1 - lambda_2 of the normalized adjacency of Cayley(G_q, +-S, +-S^-1)."""
    if not mg.admissible and mg.q > 1:
        raise NotAdmissibleError(mg.q, mg.order, mg.full_order)
    g = mg.group
    q = mg.q
    neg = np.array([(-1) % q, 0, 0, (-1) % q])
    neg_idx = mg.index[int(_pack(neg, q))]
    gens = []
    for i in range(g.n_generators):
        j = mg.cocycle_images[2 * i]
        jinv = int(mg.inverse_indices()[j])
        for base in (j, jinv):
            gens.append(base)
            gens.append(mg.mul_indices(neg_idx, base))
    perms = [mg.right_mult_perm(j) for j in gens]
    n = mg.order

    def walk(v):
        out = np.zeros_like(v)
        for p in perms:
            out += v[p]
        return out / len(perms)

    if n <= 1500:
        P = np.zeros((n, n))
        eye = np.eye(n)
        for p in perms:
            P += eye[:, p]
        P /= len(perms)
        vals = np.linalg.eigvalsh(0.5 * (P + P.T))
        lam2 = vals[-2]
    else:
        from scipy.sparse.linalg import LinearOperator, eigsh

        op = LinearOperator((n, n), matvec=walk, dtype=float)
        vals = eigsh(op, k=4, which="LA", return_eigenvectors=False, tol=1e-10)
        vals = np.sort(vals)
        lam2 = vals[-2]
    return float(1.0 - lam2)


def gap_table(
    g: SchottkyGroup,
    gd: GibbsData,
    q_list: Sequence[int],
    a_values: Sequence[float] = (0.0,),
    b_values: Sequence[float] = (0.0,),
    iters: int = 150,
):
    """Rows (q, group_order, admissible, a, b, radius, steps, wallclock_ms)."""
    rows = []
    curves = {}
    for q in q_list:
        mg = build_modgroup(g, q)
        if not mg.admissible:
            rows.append((q, mg.order, False, float("nan"), float("nan"),
                         float("nan"), 0, 0.0))
            continue
        for a in a_values:
            for b in b_values:
                t0 = time.perf_counter()
                radius, curve = spectral_radius_new(g, gd, mg, a, b, iters=iters)
                ms = (time.perf_counter() - t0) * 1000.0
                rows.append((q, mg.order, True, a, b, radius, len(curve), ms))
                curves[(q, a, b)] = curve.tolist()
    return rows, curves
