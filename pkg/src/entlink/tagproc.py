"""Cross-correlation, delay search and coincidence counting on time tags.

All lag conventions are ``t_b - t_a``: a positive delay means stream ``b``
arrives later. Timestamps are int64 picoseconds and every comparison is done
in integers, so results do not depend on floating-point rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import fft as sfft
from scipy import stats

from .physics import CoincidenceResult
from .tags import TagStream, TagStreamError


class NoPeakError(RuntimeError):
    pass


@dataclass(frozen=True)
class Histogram:
    offset: int                         # delay of the left edge of bin 0, ps
    bin_width: int                      # ps
    counts: np.ndarray                  # int64

    def __post_init__(self):
        if self.bin_width < 1:
            raise ValueError("bin_width must be >= 1 ps")
        if len(self.counts) < 1:
            raise ValueError("histogram needs at least one bin")

    @property
    def edges(self) -> np.ndarray:
        return self.offset + self.bin_width * np.arange(len(self.counts) + 1, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.offset + self.bin_width * (np.arange(len(self.counts)) + 0.5)

    def to_csv(self, path) -> None:
        """Columns ``delay_ps`` (left bin edge) and ``counts``."""
        with open(path, "w") as fh:
            fh.write("delay_ps,counts\n")
            for d, c in zip(self.edges[:-1].tolist(), self.counts.tolist()):
                fh.write(f"{d},{c}\n")


@dataclass(frozen=True)
class DelaySearchSpec:
    # +-10 ms covers about 2000 km of fiber
    min_delay: int = -10_000_000_000
    max_delay: int = 10_000_000_000
    coarse_bin: int = 1_000_000
    refine_factor: int = 16
    final_bin: int = 1
    significance: float = 5.0

    def __post_init__(self):
        if self.min_delay > self.max_delay:
            raise ValueError("min_delay must not exceed max_delay")
        if self.final_bin < 1 or self.final_bin > self.coarse_bin:
            raise ValueError("need 1 <= final_bin <= coarse_bin")
        if self.refine_factor < 2:
            raise ValueError("refine_factor must be >= 2")


def _times(x) -> np.ndarray:
    if isinstance(x, TagStream):
        return x.timestamps
    return np.ascontiguousarray(x, dtype=np.int64)


def _check_sorted(t: np.ndarray, name: str) -> None:
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise TagStreamError(f"stream {name} is not sorted")


# --- kernels ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _xcorr_kernel(a, b, lo, bw, nbins):
    out = np.zeros(nbins, np.int64)
    hi = lo + bw * nbins
    nb = b.size
    j0 = 0
    for i in range(a.size):
        ta = a[i]
        while j0 < nb and b[j0] - ta < lo:
            j0 += 1
        j = j0
        while j < nb:
            d = b[j] - ta
            if d >= hi:
                break
            out[(d - lo) // bw] += 1
            j += 1
    return out


@njit(cache=True, nogil=True)
def _match_kernel(a, b, delay, window):
    # Greedy earliest-first: a[i] takes the earliest unused b inside the window.
    i = 0
    j = 0
    n = 0
    na = a.size
    nb = b.size
    while i < na and j < nb:
        d2 = 2 * (b[j] - a[i] - delay)
        if d2 < -window:
            j += 1
        elif d2 > window:
            i += 1
        else:
            n += 1
            i += 1
            j += 1
    return n


@njit(cache=True, nogil=True)
def _match_pairs_kernel(a, b, delay, window):
    ia = np.empty(min(a.size, b.size), np.int64)
    ib = np.empty(min(a.size, b.size), np.int64)
    i = 0
    j = 0
    n = 0
    while i < a.size and j < b.size:
        d2 = 2 * (b[j] - a[i] - delay)
        if d2 < -window:
            j += 1
        elif d2 > window:
            i += 1
        else:
            ia[n] = i
            ib[n] = j
            n += 1
            i += 1
            j += 1
    return ia[:n], ib[:n]


# --- histograms ------------------------------------------------------------

@njit(cache=True)
def _multi_window_kernel(a, b, los, bw, nbins, a_outer):
    # Histograms of t_b - t_a over several lag windows [lo, lo + bw*nbins).
    # The outer loop runs over the shorter stream and binary-searches the
    # other, so the cost is short * windows * log(long) plus matched pairs.
    out = np.zeros((los.size, nbins), np.int64)
    span = bw * nbins
    if a_outer:
        for i in range(a.size):
            for j in range(los.size):
                start = a[i] + los[j]
                p = np.searchsorted(b, start)
                while p < b.size and b[p] < start + span:
                    out[j, (b[p] - start) // bw] += 1
                    p += 1
    else:
        for i in range(b.size):
            for j in range(los.size):
                # t_a in (t_b - lo - span, t_b - lo]
                first = b[i] - los[j] - span + 1
                p = np.searchsorted(a, first)
                while p < a.size and a[p] <= b[i] - los[j]:
                    out[j, (b[i] - a[p] - los[j]) // bw] += 1
                    p += 1
    return out


def multi_window_correlate(a, b, centers, half_range: int, bin_width: int) -> list[Histogram]:
    """``cross_correlate`` around each of several centers in one pass."""
    ta, tb = _times(a), _times(b)
    half = int(half_range)
    bw = int(bin_width)
    nbins = -(-2 * half // bw)
    los = np.asarray([int(round(c)) - half for c in centers], np.int64)
    counts = _multi_window_kernel(ta, tb, los, np.int64(bw), nbins, ta.size <= tb.size)
    return [Histogram(int(lo), bw, counts[j]) for j, lo in enumerate(los)]


def _histogram(a, b, lo: int, bw: int, nbins: int) -> np.ndarray:
    return _xcorr_kernel(a, b, np.int64(lo), np.int64(bw), np.int64(nbins))


def cross_correlate(a, b, center_delay: int, half_range: int, bin_width: int) -> Histogram:
    """Histogram of pair lags ``t_b - t_a - center`` in ``[-half_range, half_range)``.

    One sorted-merge sweep; cost is linear in the tag count plus the number of
    pairs that land in range.
    """
    ta, tb = _times(a), _times(b)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    half_range, bin_width = int(half_range), int(bin_width)
    if bin_width < 1 or half_range < bin_width:
        raise ValueError("need half_range >= bin_width >= 1")
    nbins = -(-2 * half_range // bin_width)
    lo = int(center_delay) - half_range
    return Histogram(lo, bin_width, _histogram(ta, tb, lo, bin_width, nbins))


def binned_cross_correlate(a, b, lo: int, hi: int, bin_width: int,
                           chunk_bins: int | None = None) -> Histogram:
    """FFT correlation of binned count series over lags ``[lo, hi)``.

    Bin ``k`` collects pairs whose lag lies within one bin width of
    ``lo + k*bin_width`` (triangular kernel), so this is only meant for
    locating a peak in very wide ranges where pair enumeration is hopeless.
    The returned histogram's offset is shifted by half a bin so its bin
    centers coincide with the kernel centers.
    """
    ta, tb = _times(a), _times(b)
    bw = int(bin_width)
    nbins = max(1, -(-(int(hi) - int(lo)) // bw))
    out = np.zeros(nbins, np.float64)
    if ta.size and tb.size:
        a_bins = ta // bw
        b_bins = (tb - int(lo)) // bw
        la = int(chunk_bins or max(nbins, 1 << 16))
        nfft = sfft.next_fast_len(la + nbins, real=True)
        s = int(a_bins[0])
        end = int(a_bins[-1]) + 1
        while s < end:
            i0, i1 = np.searchsorted(a_bins, [s, s + la])
            if i1 > i0:
                j0, j1 = np.searchsorted(b_bins, [s, s + la + nbins])
                if j1 > j0:
                    A = np.bincount(a_bins[i0:i1] - s, minlength=la).astype(np.float64)
                    B = np.bincount(b_bins[j0:j1] - s, minlength=la + nbins).astype(np.float64)
                    spec = np.conj(sfft.rfft(A, nfft)) * sfft.rfft(B, nfft)
                    out += sfft.irfft(spec, nfft)[:nbins]
                s += la
            else:
                # jump straight to the next occupied chunk
                if i0 >= a_bins.size:
                    break
                s = s + la * max(1, (int(a_bins[i0]) - s) // la)
    counts = np.rint(np.maximum(out, 0.0)).astype(np.int64)
    return Histogram(int(lo) - bw // 2, bw, counts)


def _fwhm_counts(counts: np.ndarray, bw: float) -> tuple[float, int]:
    c = np.asarray(counts, dtype=float)
    p = int(np.argmax(c))
    peak = c[p]
    if np.all(c == c[0]):
        raise NoPeakError("no peak: histogram is flat")
    half = peak / 2.0
    i = p
    while i > 0 and c[i - 1] >= half:
        i -= 1
    below = c[i - 1] if i > 0 else 0.0
    left = (i - 1) + (half - below) / (c[i] - below)
    k = p
    while k < c.size - 1 and c[k + 1] >= half:
        k += 1
    above = c[k + 1] if k < c.size - 1 else 0.0
    right = k + (c[k] - half) / (c[k] - above)
    return (right - left) * bw, p


def histogram_fwhm(h: Histogram) -> float:
    """Full width at half maximum of the global peak, in ps.

    Crossings are linearly interpolated between bin centers; bins outside the
    histogram count as zero.
    """
    return _fwhm_counts(h.counts, h.bin_width)[0]


# --- delay search ----------------------------------------------------------

def _bin_center(h: Histogram, k: int) -> float:
    # Integer lags in [o, o + bw) have their midpoint at o + (bw - 1)/2.
    return h.offset + k * h.bin_width + (h.bin_width - 1) / 2.0


def _exposure(ta, tb, h: Histogram) -> np.ndarray:
    """Overlap time (ps) of the two streams at each bin's lag."""
    lag = h.offset + h.bin_width * np.arange(h.counts.size) + (h.bin_width - 1) / 2.0
    start = np.maximum(ta[0], tb[0] - lag)
    stop = np.minimum(ta[-1], tb[-1] - lag)
    return np.maximum(stop - start, 0.0)


def _log_pvalues(h: Histogram, expected: np.ndarray) -> np.ndarray:
    # log P(X >= count) for X ~ Poisson(expected): Gaussian z-scores badly
    # understate the tail when the floor is a few counts per bin.
    return stats.poisson.logsf(h.counts - 1, np.maximum(expected, 1e-12))


def _sigma(log_p: float) -> float:
    return max(0.0, float(stats.norm.isf(min(1.0, math.exp(log_p))))) if log_p > -700 else math.inf


def _centroid(ta, tb, center: float, width: float, final_bin: int) -> float:
    # Floor-subtracted centroid of the lags within +-1.5 width, recentered
    # until it stops moving. The floor comes from the flanks at 2.5-4 widths.
    # Bins of about width/32 keep the histogram small for broad peaks; the
    # centroid itself is sub-bin so nothing is lost.
    width = max(width, 4.0 * final_bin)
    bw = max(final_bin, int(width // 32) // final_bin * final_bin)
    half = int(math.ceil(4.0 * width))
    half = max(half - half % bw + bw, bw)
    c = center
    for _ in range(20):
        h = cross_correlate(ta, tb, int(round(c)), half, bw)
        x = h.offset + bw * np.arange(h.counts.size) + (bw - 1) / 2.0
        dist = np.abs(x - c)
        flank = (dist >= 2.5 * width) & (dist <= 4.0 * width)
        floor = h.counts[flank].mean() if flank.any() else 0.0
        core = dist <= 1.5 * width
        w = h.counts[core] - floor
        if w.sum() <= 0:
            break
        new = float((w * x[core]).sum() / w.sum())
        done = abs(new - c) < final_bin / 8.0
        c = new
        if done:
            break
    return c


def find_delay(a, b, spec: DelaySearchSpec | None = None, *, max_exact_pairs: float = 5e7,
               beam: int = 1024) -> int:
    """Locate the coincidence peak lag ``t_b - t_a`` (ps).

    A coarse histogram over the whole search range ranks the bins by their
    excess over the accidental floor, scaled by how long the two streams
    overlap at each lag. At desk rates a narrow peak can sit only a few
    sigma above a coarse bin's floor, so the best ``beam`` bins are all
    refined, ``refine_factor`` times finer per level, keeping the best
    ``beam`` candidates each time. Once the leading peak spans several bins
    its location comes from a floor-subtracted centroid. The result is
    rounded to a multiple of ``final_bin``.
    """
    spec = spec or DelaySearchSpec()
    ta, tb = _times(a), _times(b)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    if ta.size == 0 or tb.size == 0:
        raise NoPeakError("no significant peak: empty stream")

    lo, hi, bw = int(spec.min_delay), int(spec.max_delay), int(spec.coarse_bin)
    span = max(int(max(ta[-1], tb[-1]) - min(ta[0], tb[0])), 1) + (hi - lo)
    est_pairs = ta.size * tb.size * (hi - lo + bw) / span
    if est_pairs <= max_exact_pairs:
        nbins = max(1, -(-(hi - lo + 1) // bw))
        h = Histogram(lo, bw, _histogram(ta, tb, lo, bw, nbins))
    else:
        h = binned_cross_correlate(ta, tb, lo, hi + 1, bw)

    # Floor density: pairs per ps of lag per ps of overlap. Bins where the
    # streams barely overlap are too sensitive to edge effects to rank.
    exposure = _exposure(ta, tb, h)
    if exposure.max() <= 0:
        # single-tag streams and the like: nothing to normalize against
        exposure = np.ones_like(exposure)
    live = exposure >= 0.1 * exposure.max()
    rho = h.counts[live].sum() / (exposure[live].sum() * bw)
    log_alpha = float(stats.norm.logsf(spec.significance))

    lp = np.where(live, _log_pvalues(h, rho * bw * exposure), np.inf)
    order = np.argsort(lp, kind="stable")[:beam]
    order = order[lp[order] < np.inf]
    if order.size == 0:
        raise NoPeakError("no significant peak: streams do not overlap in the search range")
    ranked = [(float(lp[k]), _bin_center(h, int(k)), None, None) for k in order]
    trials = int(live.sum())
    best_lp = math.inf                  # trials-corrected log p of the accepted leader
    width = None
    center = ranked[0][1]

    def accept(ranked, trials):
        # Bonferroni over every bin examined at this level. Once the leader
        # passes, candidates far less significant than it are dropped.
        lead = ranked[0][0]
        corrected = lead + math.log(max(trials, 1))
        if corrected > log_alpha:
            return ranked, None
        return [r for r in ranked if r[0] <= lead / 2], corrected

    ranked, corrected = accept(ranked, trials)
    if corrected is not None:
        best_lp = corrected
        k0 = int(order[0])
        sl = slice(max(0, k0 - 64), k0 + 65)
        excess = h.counts[sl] - rho * bw * exposure[sl]
        try:
            fw, _ = _fwhm_counts(np.maximum(excess, 0.0), bw)
            if 4 * bw <= fw <= 64 * bw:
                width = fw
        except NoPeakError:
            pass

    while width is None and bw > spec.final_bin:
        prev = bw
        bw = max(spec.final_bin, -(-bw // spec.refine_factor))
        scored = {}
        hists = multi_window_correlate(ta, tb, [r[1] for r in ranked], 2 * prev, bw)
        for hh in hists:
            e = rho * bw * _exposure(ta, tb, hh)
            lpk = _log_pvalues(hh, e)
            k = int(np.argmin(lpk))
            key = int(round(_bin_center(hh, k) / bw))
            if key not in scored or lpk[k] < scored[key][0]:
                scored[key] = (float(lpk[k]), _bin_center(hh, k), hh, e)
        # a real peak gains significance quickly as the bins shrink towards
        # its width, so the beam can narrow level by level
        beam = max(16, beam // 4)
        ranked = sorted(scored.values(), key=lambda r: r[0])[:beam]
        trials = sum(hh.counts.size for hh in hists)
        ranked, corrected = accept(ranked, trials)
        _, center, hh, e = ranked[0]
        if corrected is None:
            continue
        best_lp = min(best_lp, corrected)
        try:
            fw, _ = _fwhm_counts(np.maximum(hh.counts - e, 0.0), bw)
        except NoPeakError:
            continue
        if fw >= 4 * bw:
            width = fw

    if best_lp > log_alpha:
        raise NoPeakError(f"no significant peak: best candidate "
                          f"{_sigma(ranked[0][0] + math.log(max(trials, 1))):.1f} sigma above "
                          f"the floor after allowing for {trials} bins searched")
    if width is not None:
        center = _centroid(ta, tb, center, width, spec.final_bin)
    fb = spec.final_bin
    return int(round(center / fb)) * fb


def match_pairs(a, b, delay: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i_a, i_b)`` chosen by the greedy matcher."""
    ta, tb = _times(a), _times(b)
    return _match_pairs_kernel(ta, tb, np.int64(delay), np.int64(window))


def count_matches(a, b, delay: int, window: int) -> int:
    ta, tb = _times(a), _times(b)
    return int(_match_kernel(ta, tb, np.int64(delay), np.int64(window)))


def _overlap_seconds(ta, tb, delay):
    if ta.size == 0 or tb.size == 0:
        return 0.0
    start = max(ta[0], tb[0] - delay)
    stop = min(ta[-1], tb[-1] - delay)
    return max(0, int(stop - start)) * 1e-12


def default_accidental_offset(window: int) -> int:
    return max(100 * int(window), 10_000)


def accidental_offsets(offset: int, n: int) -> list[int]:
    """``n`` shifted windows: +o, -o, +2o, -2o, ..."""
    out = []
    k = 1
    while len(out) < n:
        out.append(k * offset)
        if len(out) < n:
            out.append(-k * offset)
        k += 1
    return out


def count_coincidences(a, b, delay: int, window: int, accidental_offset: int | None = None,
                       *, n_offsets: int = 1, integration_time: float | None = None,
                       check: bool = True) -> CoincidenceResult:
    """Greedy one-to-one coincidences at ``delay`` plus shifted-window accidentals.

    Accidentals are the same matcher run at ``delay + offset``; with
    ``n_offsets > 1`` the count is averaged over offsets alternating in sign.
    """
    ta, tb = _times(a), _times(b)
    window = int(window)
    if window <= 0:
        raise ValueError("window must be positive")
    if accidental_offset is None:
        accidental_offset = default_accidental_offset(window)
    if abs(int(accidental_offset)) <= window:
        raise ValueError("accidental_offset must exceed the window")
    if check:
        _check_sorted(ta, "a")
        _check_sorted(tb, "b")
    delay = int(delay)
    n = count_matches(ta, tb, delay, window)
    offs = [accidental_offset] if n_offsets == 1 else accidental_offsets(int(accidental_offset), n_offsets)
    acc = float(np.mean([count_matches(ta, tb, delay + o, window) for o in offs]))
    if integration_time is None:
        integration_time = _overlap_seconds(ta, tb, delay)
    return CoincidenceResult.from_counts(n, acc, window, integration_time, delay)


def car_vs_window(a, b, delay: int, windows, accidental_offset: int | None = None,
                  **kwargs) -> list[tuple[int, CoincidenceResult]]:
    windows = [int(w) for w in windows]
    if any(w <= 0 for w in windows) or windows != sorted(windows):
        raise ValueError("windows must be positive and ascending")
    ta, tb = _times(a), _times(b)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    out = []
    for w in windows:
        off = accidental_offset if accidental_offset is not None else default_accidental_offset(windows[-1])
        out.append((w, count_coincidences(ta, tb, delay, w, off, check=False, **kwargs)))
    return out
