import math
from fractions import Fraction

import numpy as np
import pytest

from schottkyflow import coding, congruence, schottky
from schottkyflow.arith import IntMatrix2, mobius_apply, reduce_mod
from schottkyflow.errors import InadmissibleWordError, PointNotInIntervalError

SYM_G1, SYM_G1INV, SYM_G2, SYM_G2INV = 0, 1, 2, 3


def test_subshift_structure(ref):
    sub = coding.subshift(ref)
    assert sub.k == 4
    assert not sub.transition[0, 1] and not sub.transition[1, 0]
    assert sub.transition[0, 0] and sub.transition[0, 2]
    assert sub.is_topologically_mixing()
    assert (np.linalg.matrix_power(sub.transition.astype(int), 2) > 0).all()


def test_expanding_map_example(ref):
    # x = 1.2 in I_{g1}: T(x) = (1.2-1)/(-3*1.2+4) = 0.5
    tx, nxt = coding.expanding_map(ref, 1.2, SYM_G1)
    assert tx == pytest.approx(0.5, abs=1e-14)
    assert nxt == (0, 2, 3)
    with pytest.raises(PointNotInIntervalError):
        coding.expanding_map(ref, 0.5, SYM_G1)


def test_fixed_point_is_fixed(ref):
    m = ref.matrix(SYM_G1)
    t = m.trace
    lam = (t + math.sqrt(t * t - 4)) / 2
    x = (lam - m.d) / m.c
    tx, _ = coding.expanding_map(ref, x, SYM_G1)
    assert tx == pytest.approx(x, abs=1e-12)


def test_roof_examples(ref):
    # interval endpoint sits on the isometric circle: tau = 0
    assert coding.roof(ref, 1.0, SYM_G1) == pytest.approx(0.0, abs=1e-14)
    assert coding.roof(ref, 1.2, SYM_G1) == pytest.approx(
        -2 * math.log(0.4), abs=1e-12
    )


def test_roof_additivity(ref):
    rng = np.random.default_rng(3)
    words = [w.symbols for w in schottky.word_ball(ref, 4) if len(w) == 4]
    for word in words[::7]:
        x = coding.point_of_sequence(ref, word)
        t2 = coding.roof_sum(ref, x, word[:2])
        t1 = coding.roof(ref, x, word[0])
        tx, _ = coding.expanding_map(ref, x, word[0])
        assert t2 == pytest.approx(t1 + coding.roof(ref, tx, word[1]), abs=1e-12)


def test_roof_cocycle_identity_many_points(ref):
    rng = np.random.default_rng(5)
    ball = [w.symbols for w in schottky.word_ball(ref, 6) if len(w) == 6]
    idx = rng.choice(len(ball), size=200, replace=False)
    for i in idx:
        word = ball[i]
        x = coding.point_of_sequence(ref, word)
        m, n = 2, 3
        lhs = coding.roof_sum(ref, x, word[: m + n])
        rhs = coding.roof_sum(ref, x, word[:m])
        y = x
        for s in word[:m]:
            y = mobius_apply(ref.matrix(s).inverse(), y)
        rhs += coding.roof_sum(ref, y, word[m : m + n])
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_cocycle_examples(ref):
    assert coding.cocycle_of(ref, SYM_G1) == IntMatrix2(4, 1, 3, 1)
    w = (SYM_G1, SYM_G2)
    assert coding.cocycle_word(ref, w) == IntMatrix2(4, 1, 3, 1) * IntMatrix2(
        29, -167, 4, -23
    )
    assert reduce_mod(coding.cocycle_of(ref, SYM_G1), 3).entries() == (1, 1, 0, 1)


def test_cocycle_homomorphism_mod_q(ref):
    for w in schottky.word_ball(ref, 5):
        if len(w) < 4:
            continue
        m, n = 2, len(w) - 2
        full = reduce_mod(coding.cocycle_word(ref, w.symbols), 6)
        head = reduce_mod(coding.cocycle_word(ref, w.symbols[:m]), 6)
        tail = reduce_mod(coding.cocycle_word(ref, w.symbols[m:]), 6)
        assert full == head * tail


def test_d_theta():
    assert coding.d_theta((0, 2, 3, 0), (0, 2, 3, 2), 0.5) == 0.125
    assert coding.d_theta((0, 2), (0, 2), 0.7) == 0.0
    assert coding.d_theta((1, 2), (0, 2), 0.7) == 1.0
    with pytest.raises(ValueError):
        coding.d_theta((0,), (1,), 1.5)


def test_cylinder_intervals_exact_nesting(ref):
    for w in schottky.word_ball(ref, 5):
        if len(w) < 2:
            continue
        word = w.symbols
        lo, hi = coding.cylinder_interval_exact(ref, word)
        plo, phi = coding.cylinder_interval_exact(ref, word[:-1])
        assert plo <= lo and hi <= phi  # exact rational comparison


def test_cylinder_base_case(ref):
    for s in range(4):
        assert coding.cylinder_interval_exact(ref, (s,)) == ref.intervals[s]
    with pytest.raises(InadmissibleWordError):
        coding.cylinder_interval(ref, (0, 1))


def test_cylinder_contraction_bound(ref):
    lo, hi = coding.cylinder_interval_exact(ref, (SYM_G1, SYM_G1))
    plo, phi = ref.intervals[SYM_G1]
    assert (hi - lo) < (phi - plo) / 16


def test_admissible_word_counts(ref):
    for n in range(1, 8):
        count = sum(1 for _ in coding.cylinders(ref, n))
        assert count == 4 * 3 ** (n - 1)


def test_hyperbolicity_constants(ref):
    c0, kappa, kappa1 = coding.hyperbolicity_constants(ref, 5)
    assert kappa >= 4.0
    assert kappa1 >= kappa >= 1.0
    assert 0 < c0 <= 1.0
    # the two-sided bound holds on cylinder endpoint pairs by construction;
    # spot check a cylinder
    word = (SYM_G1, SYM_G2, SYM_G1)
    lo, hi = coding.cylinder_interval(ref, word)
    x, y = lo + (hi - lo) * 0.25, lo + (hi - lo) * 0.75
    fx, fy = x, y
    for s in word[:-1]:
        fx = mobius_apply(ref.matrix(s).inverse(), fx)
        fy = mobius_apply(ref.matrix(s).inverse(), fy)
    n = len(word) - 1
    stretch = abs(fx - fy) / abs(x - y)
    assert c0 * kappa**n <= stretch <= kappa1**n / c0


def test_cylinder_diameter_envelopes(ref):
    rep = coding.cylinder_diameter_constants(ref, 6)
    for m in range(1, 7):
        assert rep["lower_c"] * rep["kappa1"] ** (-(m - 1)) <= rep["diam_min"][m] * (1 + 1e-12)
        assert rep["diam_max"][m] <= rep["C1"] * rep["rho1"] ** (m - 1) * (1 + 1e-12)


def test_contraction_ratio_constants(ref):
    rep = coding.contraction_ratio_constants(ref, 5)
    assert 0 < rep["rho"] < 1
    assert rep["p0"] >= 1 and rep["p1"] >= 2
    assert rep["rho"] ** (rep["p1"] - 1) <= 1 / 8 + 1e-12


def test_theta_lipschitz_finite(ref, gd16):
    theta = coding.default_theta(ref)
    assert theta == 0.25
    eta = congruence.eta_theta(gd16, theta)
    assert np.isfinite(eta) and eta > 0
