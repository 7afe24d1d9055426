import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from entlink.tagproc import (DelaySearchSpec, Histogram, NoPeakError, binned_cross_correlate,
                             car_vs_window, count_coincidences, cross_correlate, find_delay,
                             histogram_fwhm, match_pairs, multi_window_correlate)
from entlink.tags import TagStreamError
from oracles import brute_greedy, brute_histogram


@st.composite
def streams(draw, max_tags=200, span=20_000):
    na = draw(st.integers(0, max_tags))
    nb = draw(st.integers(0, max_tags))
    a = draw(st.lists(st.integers(0, span), min_size=na, max_size=na))
    b = draw(st.lists(st.integers(0, span), min_size=nb, max_size=nb))
    return np.sort(np.array(a, np.int64)), np.sort(np.array(b, np.int64))


# --- cross-correlation ------------------------------------------------------

def test_single_pair_lands_in_its_bin():
    h = cross_correlate(np.array([0]), np.array([1000]), 0, 2000, 500)
    assert h.offset == -2000 and h.counts.tolist() == [0, 0, 0, 0, 0, 0, 1, 0]
    assert h.edges[6] <= 1000 < h.edges[7]


def test_autocorrelation_peak_height():
    t = np.sort(np.random.default_rng(0).integers(0, 10**9, 500))
    t = np.unique(t)
    h = cross_correlate(t, t, 0, 1000, 10)
    k = int(np.argmax(h.counts))
    assert h.counts[k] == t.size and h.edges[k] <= 0 < h.edges[k + 1]


def test_empty_b_gives_zero_histogram():
    h = cross_correlate(np.array([1, 2, 3]), np.array([], np.int64), 0, 100, 10)
    assert h.counts.sum() == 0 and h.counts.size == 20


@settings(max_examples=200, deadline=None)
@given(streams(), st.integers(-3000, 3000), st.integers(1, 5000), st.integers(1, 700))
def test_cross_correlate_matches_brute_force(ab, center, half, bw):
    a, b = ab
    assume(half >= bw)
    h = cross_correlate(a, b, center, half, bw)
    lo, ref = brute_histogram(a, b, center, half, bw)
    assert h.offset == lo
    assert np.array_equal(h.counts, ref)


@settings(max_examples=60, deadline=None)
@given(streams(), st.lists(st.integers(-5000, 5000), min_size=1, max_size=6),
       st.integers(50, 2000), st.integers(1, 300))
def test_multi_window_matches_single_window(ab, centers, half, bw):
    a, b = ab
    assume(half >= bw)
    for c, h in zip(centers, multi_window_correlate(a, b, centers, half, bw)):
        ref = cross_correlate(a, b, c, half, bw)
        assert h.offset == ref.offset and np.array_equal(h.counts, ref.counts)


def test_unsorted_input_rejected():
    with pytest.raises(TagStreamError):
        cross_correlate(np.array([5, 1]), np.array([1]), 0, 10, 1)


def test_fft_correlation_locates_peak():
    rng = np.random.default_rng(3)
    a = np.sort(rng.integers(0, 10**10, 20000))
    h = binned_cross_correlate(a, a + 3_500_000, -10**7, 10**7, 10**5)
    k = int(np.argmax(h.counts))
    assert abs(h.centers[k] - 3_500_000) <= 10**5
    assert h.counts[k] >= 0.9 * a.size


# --- coincidence counting ---------------------------------------------------

def test_six_tag_fixture_against_brute_force():
    a = np.array([0, 100, 10000])
    b = np.array([10, 130, 50000])
    r = count_coincidences(a, b, 0, 50, 1000)
    assert r.coincidences == len(brute_greedy(a, b, 0, 50)) == 1     # 0<->10 only
    assert list(zip(*match_pairs(a, b, 0, 50))) == [(0, 0)]
    # the 100<->130 pair is 30 ps off and joins once the full width reaches 60 ps
    assert count_coincidences(a, b, 0, 60, 1000).coincidences == 2


@settings(max_examples=200, deadline=None)
@given(streams(), st.integers(-2000, 2000), st.integers(1, 800))
def test_greedy_matches_brute_force_and_uses_tags_once(ab, delay, window):
    a, b = ab
    ia, ib = match_pairs(a, b, delay, window)
    ref = brute_greedy(a, b, delay, window)
    assert list(zip(ia.tolist(), ib.tolist())) == ref
    assert np.unique(ia).size == ia.size and np.unique(ib).size == ib.size
    assert np.all(np.abs(2 * (b[ib] - a[ia] - delay)) <= window)
    offset = 2 * window + 1
    r = count_coincidences(a, b, delay, window, offset)
    assert r.coincidences == len(ref)
    assert r.accidentals == len(brute_greedy(a, b, delay + offset, window))


@settings(max_examples=100, deadline=None)
@given(streams(), st.integers(-2000, 2000), st.integers(1, 800))
def test_histogram_sum_bounds_coincidences(ab, delay, window):
    a, b = ab
    lags = np.subtract.outer(b, a) - delay
    in_window = int(np.count_nonzero(np.abs(2 * lags) <= window)) if a.size and b.size else 0
    assert in_window >= count_coincidences(a, b, delay, window, 2 * window + 1).coincidences


@settings(max_examples=100, deadline=None)
@given(streams(), st.integers(-2000, 2000), st.integers(1, 500), st.integers(1, 5000))
def test_accidental_window_is_translation_of_main_window(ab, delay, window, extra):
    a, b = ab
    offset = window + extra
    r = count_coincidences(a, b, delay, window, offset)
    shifted = count_coincidences(a, b - offset, delay, window, offset)
    assert r.accidentals == shifted.coincidences


def test_earlier_candidate_wins_ties():
    ia, ib = match_pairs(np.array([100]), np.array([90, 110]), 0, 40)
    assert ib.tolist() == [0]


def test_offset_must_exceed_window():
    with pytest.raises(ValueError):
        count_coincidences(np.array([1]), np.array([1]), 0, 100, 100)
    with pytest.raises(ValueError):
        count_coincidences(np.array([1]), np.array([1]), 0, 0, 100)


def test_empty_streams_flag_car_bound():
    e = np.zeros(0, np.int64)
    r = count_coincidences(e, e, 0, 60)
    assert r.coincidences == 0 and r.car_lower_bound


def test_averaged_offsets():
    rng = np.random.default_rng(5)
    a = np.sort(rng.integers(0, 10**9, 3000))
    b = np.sort(rng.integers(0, 10**9, 3000))
    r = count_coincidences(a, b, 0, 1000, 20000, n_offsets=4)
    singles = [count_coincidences(a, b, 0, 1000, o).accidentals for o in (20000, -20000, 40000, -40000)]
    assert r.accidentals == pytest.approx(np.mean(singles))


def test_car_vs_window():
    rng = np.random.default_rng(9)
    a = np.sort(rng.integers(0, 10**10, 5000))
    b = np.sort(np.concatenate([a[::2] + 777 + rng.normal(0, 300, a[::2].size).astype(np.int64),
                                rng.integers(0, 10**10, 5000)]))
    table = car_vs_window(a, b, 777, [50, 200, 1000, 4000])
    counts = [r.coincidences for _, r in table]
    assert counts == sorted(counts)
    only = car_vs_window(a, b, 777, [200], accidental_offset=30000)
    assert only[0][1] == count_coincidences(a, b, 777, 200, 30000)
    with pytest.raises(ValueError):
        car_vs_window(a, b, 0, [200, 100])


# --- peak width -----------------------------------------------------------------

def test_fwhm_examples():
    x = np.arange(-1000, 1000, 10) + 5.0
    g = np.exp(-0.5 * (x / 80.0) ** 2) * 1e4
    h = Histogram(-1000, 10, np.rint(g).astype(np.int64))
    assert histogram_fwhm(h) == pytest.approx(2 * np.sqrt(2 * np.log(2)) * 80, abs=10)
    assert histogram_fwhm(Histogram(0, 7, np.array([0, 0, 9, 0]))) == pytest.approx(7)
    top = np.zeros(400, np.int64)
    top[100:250] = 50
    assert histogram_fwhm(Histogram(0, 4, top)) == pytest.approx(150 * 4, abs=4)
    with pytest.raises(NoPeakError):
        histogram_fwhm(Histogram(0, 1, np.full(5, 3)))


# --- delay search -------------------------------------------------------------

_rng = np.random.default_rng(11)
_BASE = np.sort(_rng.choice(10**11, 20000, replace=False)).astype(np.int64)


@settings(max_examples=15, deadline=None)
@given(st.integers(-10**10 + 1, 10**10 - 1))
def test_find_delay_recovers_shift(delta):
    assert find_delay(_BASE, _BASE + delta) == delta


def test_find_delay_zero_and_errors():
    assert find_delay(_BASE, _BASE) == 0
    other = np.sort(_rng.choice(10**11, 20000, replace=False)).astype(np.int64)
    with pytest.raises(NoPeakError, match="no significant peak"):
        find_delay(_BASE, other)
    with pytest.raises(NoPeakError):
        find_delay(_BASE, np.zeros(0, np.int64))


def test_find_delay_on_jittered_peak_under_background():
    # 2000 correlated pairs with 80 ps combined jitter under 50k uncorrelated tags per side
    rng = np.random.default_rng(21)
    t = rng.integers(0, 10**12, 2000)
    a = np.sort(np.concatenate([t + rng.normal(0, 56.6, t.size).astype(np.int64),
                                rng.integers(0, 10**12, 50000)]))
    b = np.sort(np.concatenate([t + 302_113_173 + rng.normal(0, 56.6, t.size).astype(np.int64),
                                rng.integers(0, 10**12, 50000)]))
    d = find_delay(a, b)
    # centroid standard error is 80/sqrt(2000) = 1.8 ps
    assert abs(d - 302_113_173) <= 8


def test_search_spec_validation():
    with pytest.raises(ValueError):
        DelaySearchSpec(min_delay=5, max_delay=1)
    with pytest.raises(ValueError):
        DelaySearchSpec(coarse_bin=10, final_bin=20)
    with pytest.raises(ValueError):
        DelaySearchSpec(refine_factor=1)
