from fractions import Fraction

import pytest

from schottkyflow import coding, schottky
from schottkyflow.arith import IntMatrix2, mobius_apply
from schottkyflow.errors import (
    IntervalsOverlapError,
    ResourceLimitError,
    SchottkyFlowError,
)


def test_reference_intervals_exact(ref):
    F = Fraction
    assert ref.intervals == (
        (F(1), F(5, 3)),
        (F(-2, 3), F(0)),
        (F(7), F(15, 2)),
        (F(11, 2), F(6)),
    )


def test_reference_expansion_floors(ref):
    assert ref.expansion_min[0] == ref.expansion_min[1] == 16.0
    assert ref.expansion_min[2] == ref.expansion_min[3] == 25.0


def test_tangent_circles_rejected():
    with pytest.raises(IntervalsOverlapError):
        schottky.validate([IntMatrix2(2, 1, 1, 1), IntMatrix2(2, -1, -1, 1)])


def test_single_generator_rejected():
    with pytest.raises(SchottkyFlowError):
        schottky.validate([IntMatrix2(4, 1, 3, 1)])


def test_word_ball_counts(ref):
    for m in range(0, 6):
        ball = schottky.word_ball(ref, m)
        assert len(ball) == schottky.word_ball_size(2, m)
        assert len({w.symbols for w in ball}) == len(ball)
    assert len(schottky.word_ball(ref, 0)) == 1
    assert len(schottky.word_ball(ref, 1)) == 5
    assert len(schottky.word_ball(ref, 2)) == 17


def test_word_ball_cap(ref):
    with pytest.raises(ResourceLimitError):
        schottky.word_ball(ref, 20, cap=1000)


def test_word_matrices_exact(ref):
    for w in schottky.word_ball(ref, 3):
        m = IntMatrix2.identity()
        for s in w.symbols:
            m = m * ref.matrices[s]
        assert m == w.matrix


def test_attracting_fixed_points_in_first_interval(ref):
    # every nontrivial reduced word's attracting fixed point lies in the
    # interval of its first symbol
    for w in schottky.word_ball(ref, 6):
        if not w.symbols:
            continue
        import math

        m = w.matrix
        t = m.trace
        disc = math.sqrt(t * t - 4)
        for sign in (1, -1):
            lam = (t + sign * disc) / 2
            if abs(lam) > 1:
                x = (lam - m.d) / m.c
                break
        lo, hi = ref.interval_float(w.symbols[0])
        assert lo - 1e-9 <= x <= hi + 1e-9


def test_boxcount_dimension_basics(ref):
    dim, report = schottky.boxcount_dimension(ref, full_output=True)
    assert 0.0 < dim < 1.0
    assert report["residual"] < 0.05
    # two-depth stability
    d8 = schottky.boxcount_dimension(ref, depth=8, eps_range=(1e-9, 1e-3))
    d10 = schottky.boxcount_dimension(ref, depth=10, eps_range=(1e-11, 1e-3))
    assert abs(d8 - d10) < 0.02


def test_group_file_roundtrip(ref, tmp_path):
    path = tmp_path / "ref.grp"
    schottky.save_group(ref, path)
    g2 = schottky.load_group(path)
    assert g2.generators == ref.generators
    # comments and blank lines are ignored
    path2 = tmp_path / "comm.grp"
    path2.write_text("# comment\n\n4 1 3 1\n29 -167 4 -23\n")
    g3 = schottky.load_group(path2)
    assert g3.generators == ref.generators


def test_pingpong_images_nest(ref):
    # s(I_t) strictly inside I_s for t != sbar(s); endpoint check is exact
    for s in range(ref.n_symbols):
        lo_s, hi_s = ref.intervals[s]
        for t in ref.allowed_after(ref.sbar(s)):
            pass
        for t in range(ref.n_symbols):
            if t == ref.sbar(s):
                continue
            lo_t, hi_t = ref.intervals[t]
            imgs = sorted(
                mobius_apply(ref.matrix(s), x) for x in (lo_t, hi_t)
            )
            assert lo_s < imgs[0] and imgs[1] < hi_s
