import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bmi_adapt.stats import midranks, rank_sum_test


def test_exact_small_case():
    u, p = rank_sum_test([1, 2], [3, 4], alternative="less")
    assert u == 0 and p == pytest.approx(1 / 6)
    u, p = rank_sum_test([1, 2], [3, 4])
    assert p == pytest.approx(1 / 3)


def test_identical_samples():
    xs = [1.0, 2.0, 3.0, 4.0, 5.0] * 4
    assert rank_sum_test(xs, list(xs))[1] == pytest.approx(1.0)


def test_large_separation():
    rng = np.random.default_rng(0)
    assert rank_sum_test(rng.normal(0, 1, 50), rng.normal(3, 1, 50))[1] < 1e-6


def test_empty_sample_rejected():
    with pytest.raises(ValueError):
        rank_sum_test([], [1.0])
    with pytest.raises(ValueError):
        rank_sum_test([1.0], [2.0], alternative="sideways")


def test_midranks_with_ties():
    assert np.array_equal(midranks([3, 1, 3, 2]), [3.5, 1, 3.5, 2])


@settings(max_examples=60, deadline=None)
@given(xs=st.lists(st.integers(0, 12), min_size=1, max_size=30),
       ys=st.lists(st.integers(0, 12), min_size=1, max_size=30))
def test_matches_scipy(xs, ys):
    if len(xs) <= 8 and len(ys) <= 8:
        method = "exact" if len(set(xs + ys)) == len(xs + ys) else None
    else:
        method = "asymptotic"
    u, p = rank_sum_test(xs, ys)
    ref = stats.mannwhitneyu(xs, ys, alternative="two-sided", use_continuity=True,
                             method=method or "asymptotic")
    assert u == pytest.approx(ref.statistic)
    if method is not None:
        assert p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(xs=st.lists(st.floats(-5, 5), min_size=1, max_size=20),
       ys=st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_u_statistics_are_complementary_and_p_symmetric(xs, ys):
    u_xy, p_xy = rank_sum_test(xs, ys)
    u_yx, p_yx = rank_sum_test(ys, xs)
    assert u_xy + u_yx == pytest.approx(len(xs) * len(ys))
    assert p_xy == pytest.approx(p_yx)
    assert 0.0 <= p_xy <= 1.0


@settings(max_examples=40, deadline=None)
@given(values=st.lists(st.integers(-3, 3), min_size=1, max_size=40))
def test_midranks_sum(values):
    n = len(values)
    assert midranks(values).sum() == pytest.approx(n * (n + 1) / 2)
