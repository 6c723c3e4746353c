"""Gaze-agreement metrics against hand values and brute-force oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnfilter import plausibility as pl
from attnfilter.errors import DegenerateInput, ShapeError
from attnfilter.maps import FixationMap


def brute_pairwise_auc(sal, fix):
    """P(s_fix > s_nonfix) + 0.5 * P(equal), by exhaustive pair comparison."""
    sal = np.asarray(sal, dtype=np.float64).ravel()
    fix = np.asarray(fix, dtype=bool).ravel()
    pos = sal[fix]
    neg = sal[~fix]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


# --- sim ---------------------------------------------------------------------


def test_sim_identical_maps():
    rng = np.random.default_rng(0)
    m = rng.random((6, 6)) + 0.1
    assert pl.sim(m, m) == pytest.approx(1.0)


def test_sim_disjoint_supports():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[0.0, 0.0], [0.0, 2.0]])
    assert pl.sim(a, b) == 0.0


def test_sim_hand_value():
    assert pl.sim(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]])) == pytest.approx(0.5)


def test_sim_zero_mass():
    with pytest.raises(DegenerateInput):
        pl.sim(np.zeros((2, 2)), np.ones((2, 2)))


def test_sim_shape_mismatch():
    with pytest.raises(ShapeError):
        pl.sim(np.ones((2, 2)), np.ones((3, 3)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 100.0))
def test_sim_symmetric_and_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.random((5, 5)) + 1e-6
    b = rng.random((5, 5)) + 1e-6
    assert pl.sim(a, b) == pytest.approx(pl.sim(b, a), rel=1e-12)
    assert pl.sim(scale * a, b) == pytest.approx(pl.sim(a, b), rel=1e-9)


# --- pcc ---------------------------------------------------------------------


def test_pcc_identical():
    rng = np.random.default_rng(1)
    m = rng.random((4, 4))
    assert pl.pcc(m, m) == pytest.approx(1.0)


def test_pcc_flipped():
    rng = np.random.default_rng(2)
    m = rng.random((4, 4))
    assert pl.pcc(m, 1.0 - m) == pytest.approx(-1.0)


def test_pcc_hand_value_via_independent_oracle():
    s = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = np.array([[1.0, 2.0], [2.0, 4.0]])
    assert pl.pcc(s, g) == pytest.approx(np.corrcoef(s.ravel(), g.ravel())[0, 1], rel=1e-12)
    assert pl.pcc(s, g) == pytest.approx(0.9233805168766388)
    # variant with the top value lowered lands on 3/sqrt(10)
    g2 = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert pl.pcc(s, g2) == pytest.approx(3.0 / math.sqrt(10.0))


def test_pcc_constant_input():
    with pytest.raises(DegenerateInput):
        pl.pcc(np.full((2, 2), 0.3), np.arange(4.0).reshape(2, 2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 50.0))
def test_pcc_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a = rng.random((5, 5))
    b = rng.random((5, 5))
    assert pl.pcc(scale * a, b) == pytest.approx(pl.pcc(a, b), rel=1e-9)


# --- fixation_map ------------------------------------------------------------


def test_fixation_map_distinct_maxima():
    g = np.zeros((10, 10))
    hot = [(0, 0), (3, 7), (5, 5), (8, 2), (9, 9)]
    for i, (r, c) in enumerate(hot):
        g[r, c] = 10.0 + i
    f = pl.fixation_map(g)
    assert f.count == 5  # ceil(0.05 * 100)
    assert {tuple(rc) for rc in np.argwhere(f.fixations)} == set(hot)


def test_fixation_map_constant_row_major_tie_break():
    f = pl.fixation_map(np.full((10, 10), 2.0))
    marked = np.flatnonzero(f.fixations.ravel())
    np.testing.assert_array_equal(marked, np.arange(5))


def test_fixation_map_count_224():
    f = pl.fixation_map(np.random.default_rng(0).random((224, 224)))
    assert f.count == 2509  # ceil(0.05 * 50176)


# --- nss ---------------------------------------------------------------------


def test_nss_hand_standardization():
    s = np.array([[0.0, 0.0], [0.0, 1.0]])
    fix = FixationMap.from_array(np.array([[0, 0], [0, 1]], dtype=bool))
    assert pl.nss(s, fix) == pytest.approx(math.sqrt(3.0))
    fix_min = FixationMap.from_array(np.array([[1, 0], [0, 0]], dtype=bool))
    assert pl.nss(s, fix_min) == pytest.approx(-0.25 / math.sqrt(0.1875))


def test_nss_all_pixels_fixated_is_zero():
    rng = np.random.default_rng(5)
    s = rng.random((4, 4))
    fix = FixationMap.from_array(np.ones((4, 4), dtype=bool))
    assert pl.nss(s, fix) == pytest.approx(0.0, abs=1e-12)


def test_nss_constant_map():
    fix = FixationMap.from_array(np.ones((2, 2), dtype=bool))
    with pytest.raises(DegenerateInput):
        pl.nss(np.full((2, 2), 0.5), fix)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_nss_of_standardized_field_over_all_pixels(seed):
    rng = np.random.default_rng(seed)
    s = rng.random((6, 6))
    fix = FixationMap.from_array(np.ones((6, 6), dtype=bool))
    assert pl.nss(s, fix) == pytest.approx(0.0, abs=1e-9)


# --- auc_judd ----------------------------------------------------------------


def test_auc_perfect_ranking():
    s = np.array([[0.9, 0.8], [0.1, 0.2]])
    fix = FixationMap.from_array(np.array([[1, 1], [0, 0]], dtype=bool))
    assert pl.auc_judd(s, fix) == pytest.approx(1.0)


def test_auc_reversed_ranking():
    s = np.array([[0.1, 0.2], [0.9, 0.8]])
    fix = FixationMap.from_array(np.array([[1, 1], [0, 0]], dtype=bool))
    assert pl.auc_judd(s, fix) == pytest.approx(0.0)


def test_auc_all_fixated_rejected():
    with pytest.raises(DegenerateInput):
        pl.auc_judd(np.ones((2, 2)), FixationMap.from_array(np.ones((2, 2), dtype=bool)))


def test_auc_constant_map_is_half():
    fix = FixationMap.from_array(np.array([[1, 0], [0, 0]], dtype=bool))
    assert pl.auc_judd(np.full((2, 2), 0.5), fix) == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ties=st.booleans())
def test_auc_matches_brute_force_pairwise_oracle(seed, ties):
    rng = np.random.default_rng(seed)
    s = rng.random((5, 5))
    if ties:
        s = np.round(s, 1)  # force shared values across both pixel classes
    fix = np.zeros((5, 5), dtype=bool)
    fix.ravel()[rng.choice(25, size=6, replace=False)] = True
    got = pl.auc_judd(s, FixationMap.from_array(fix))
    assert got == pytest.approx(brute_pairwise_auc(s, fix), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    s = rng.random((6, 6))
    fix = np.zeros((6, 6), dtype=bool)
    fix.ravel()[rng.choice(36, size=5, replace=False)] = True
    f = FixationMap.from_array(fix)
    base = pl.auc_judd(s, f)
    assert pl.auc_judd(s**3, f) == pytest.approx(base, abs=1e-12)
    assert pl.auc_judd(np.exp(2.0 * s), f) == pytest.approx(base, abs=1e-12)


def test_auc_random_maps_near_half():
    rng = np.random.default_rng(77)
    scores = []
    for _ in range(1000):
        s = rng.random((32, 32))
        fix = np.zeros(1024, dtype=bool)
        fix[rng.choice(1024, size=51, replace=False)] = True
        scores.append(pl.auc_judd(s, FixationMap.from_array(fix.reshape(32, 32))))
    assert abs(float(np.mean(scores)) - 0.5) < 0.02


def test_score_plausibility_bundle():
    rng = np.random.default_rng(9)
    s = rng.random((8, 8))
    g = rng.random((8, 8)) + 0.01
    scores = pl.score_plausibility(s, g)
    assert 0.0 <= scores.sim <= 1.0
    assert -1.0 <= scores.pcc <= 1.0
    assert 0.0 <= scores.auc_judd <= 1.0
    assert math.isfinite(scores.nss)
