"""Visibility fits, link budgets, the wavelength-channel scan and run summaries."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .physics import (attenuate_rate, car_estimate, car_to_fidelity, expected_accidentals,
                      fidelity_from_visibilities)


class AnalysisError(ValueError):
    pass


# --- visibility fit ----------------------------------------------------------

@dataclass(frozen=True)
class VisibilityFit:
    amplitude: float            # counts
    visibility: float           # clamped to [0, 1]
    phase: float                # deg, in [0, 360)
    offset_floor: float         # counts, held fixed during the fit
    residual_rms: float         # counts
    visibility_error: float = 0.0
    raw_visibility: float = 0.0
    nonphysical: bool = False
    n_angles: int = 0

    def model(self, angles) -> np.ndarray:
        th = np.deg2rad(4.0 * np.asarray(angles, dtype=float)) - np.deg2rad(self.phase)
        return self.amplitude * (1.0 + self.raw_visibility * np.cos(th)) + self.offset_floor

    def as_record(self) -> dict:
        return asdict(self)


def fit_visibility(angles, counts, *, floor: float = 0.0, weighted: bool = True,
                   iterations: int = 4) -> VisibilityFit:
    """Fit C(theta) = A (1 + V cos(4 theta - phi)) + floor.

    Linear least squares on {1, cos 4theta, sin 4theta}, reweighted a few
    times by Poisson variances (expected counts, floored at 1). ``floor`` is
    a known additive level, e.g. a measured accidental rate; the constant
    term cannot separate it from A, so it is not fitted. With the default floor of zero the fit describes
    raw counts, accidentals included.
    """
    th = np.asarray(angles, dtype=float)
    y = np.asarray(counts, dtype=float)
    if th.shape != y.shape or th.ndim != 1:
        raise AnalysisError("angles and counts must be 1-D and the same length")
    if np.any(y < 0):
        raise AnalysisError("counts must be nonnegative")
    if np.unique(np.round(np.mod(th, 180.0), 9)).size < 4:
        raise AnalysisError("underdetermined: need at least 4 distinct angles")
    if floor < 0:
        raise AnalysisError("floor must be nonnegative")

    x = np.deg2rad(4.0 * th)
    X = np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])
    if np.linalg.matrix_rank(X) < 3:
        raise AnalysisError("underdetermined: angles do not resolve the cos/sin terms")
    # Weights from the fitted model rather than the observed counts: observed
    # weights pull the fit toward low bins and inflate V when minima are small.
    w = np.ones_like(y)
    for _ in range(iterations if weighted else 1):
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        coef = cov @ (XtW @ y)
        if not weighted:
            break
        w = 1.0 / np.maximum(X @ coef, 1.0)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    c0, c1, c2 = coef

    amplitude = c0 - floor
    r = math.hypot(c1, c2)
    if amplitude <= 0:
        raise AnalysisError("nonpositive amplitude after floor subtraction")
    raw_v = r / amplitude
    phase = math.degrees(math.atan2(c2, c1)) % 360.0

    # delta-method propagation of the Poisson-weighted covariance
    if r > 0:
        grad = np.array([-r / amplitude**2, c1 / (r * amplitude), c2 / (r * amplitude)])
    else:
        grad = np.array([0.0, 1.0 / amplitude, 1.0 / amplitude])
    if not weighted:
        dof = max(y.size - 3, 1)
        cov = cov * float(np.sum((y - X @ np.array([c0, c1, c2])) ** 2)) / dof
    v_err = float(math.sqrt(max(grad @ cov @ grad, 0.0)))

    resid = y - X @ np.array([c0, c1, c2])
    return VisibilityFit(
        amplitude=float(amplitude),
        visibility=float(min(raw_v, 1.0)),
        phase=float(phase),
        offset_floor=float(floor),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        visibility_error=v_err,
        raw_visibility=float(raw_v),
        nonphysical=bool(raw_v > 1.0),
        n_angles=int(th.size),
    )


# --- coincidence capture -----------------------------------------------------

def _g(z):
    return z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def capture_fraction(window: float, sigma: float, spread: float = 0.0) -> float:
    """Fraction of true pairs whose lag lands inside a centered window.

    The lag is a top-hat of full width ``spread`` (residual dispersion)
    convolved with a Gaussian of standard deviation ``sigma`` (jitter).
    """
    h = window / 2.0
    if spread <= 0:
        if sigma <= 0:
            return 1.0
        return float(2.0 * ndtr(h / sigma) - 1.0)
    if sigma <= 0:
        return float(min(window, spread) / spread)

    def cdf(x):
        return sigma / spread * (_g((x + spread / 2) / sigma) - _g((x - spread / 2) / sigma))

    return float(cdf(h) - cdf(-h))


def residual_spread(config) -> float:
    """Width (ps) of the lag distribution from net nonlocal dispersion."""
    from .sim import ARMS
    src = config.source
    lam_s, lam_i = src.signal_center, src.idler_mean
    total = {}
    for arm in ARMS:
        f = config.fiber(arm)
        d = f.dispersion * f.length
        if config.dcm is not None and config.dcm_arm == arm:
            d += config.dcm.total_dispersion
        total[arm] = d
    # t_s - t_i = (D_s + D_i (lam_i/lam_s)^2) * dlam_s
    k = total["signal"] + total["idler"] * (lam_i / lam_s) ** 2
    return abs(k) * src.filter_bandwidth


def combined_jitter(config) -> float:
    return math.hypot(config.signal_detector.jitter_sigma, config.idler_detector.jitter_sigma)


# --- link budget -------------------------------------------------------------

def _total_loss(losses) -> float:
    total = float(np.sum(np.atleast_1d(np.asarray(losses, dtype=float))))
    if np.any(np.asarray(losses, dtype=float) < 0):
        raise AnalysisError("losses must be >= 0 dB")
    return total


@dataclass(frozen=True)
class LinkBudget:
    source_rate: float              # pairs/s
    signal_loss_db: float
    idler_loss_db: float
    coincidence_rate: float         # pairs/s reaching both detectors
    signal_singles: float           # counts/s
    idler_singles: float
    accidental_rate: float | None = None
    car: float | None = None
    fidelity_bound: float | None = None

    @property
    def total_loss_db(self) -> float:
        return self.signal_loss_db + self.idler_loss_db

    def as_record(self) -> dict:
        d = asdict(self)
        d["total_loss_db"] = self.total_loss_db
        return d


def link_budget(source_rate: float, signal_path, idler_path, efficiencies=(1.0, 1.0), *,
                noise=(0.0, 0.0), window: float | None = None) -> LinkBudget:
    """Expected rates for a pair source feeding two lossy arms.

    ``signal_path`` and ``idler_path`` are a loss in dB or a sequence of
    losses to be summed. ``noise`` holds detected uncorrelated rates per arm
    (darks plus background). With a ``window`` in ps, accidentals, CAR and
    the CAR fidelity bound are filled in.
    """
    if source_rate < 0:
        raise AnalysisError("source_rate must be >= 0")
    ls, li = _total_loss(signal_path), _total_loss(idler_path)
    eta_s, eta_i = efficiencies
    coinc = attenuate_rate(source_rate, ls + li) * eta_s * eta_i
    s_s = attenuate_rate(source_rate, ls) * eta_s + noise[0]
    s_i = attenuate_rate(source_rate, li) * eta_i + noise[1]
    acc = car = fid = None
    if window is not None:
        acc = expected_accidentals(s_s, s_i, window)
        car = math.inf if acc == 0 else coinc / acc
        fid = car_to_fidelity(car)
    return LinkBudget(source_rate, ls, li, coinc, s_s, s_i, acc, car, fid)


def config_budget(config) -> dict:
    """Per-arm loss breakdown and expected rates for an experiment config.

    Singles include the 1/2 analyzer marginal; coincidences are quoted both
    for all pairs reaching the detectors and for the fraction landing inside
    the coincidence window.
    """
    from .sim import ARMS, arm_models, pair_rate
    src = config.source
    models = arm_models(config)
    arms = {}
    for k, (arm, m) in enumerate(zip(ARMS, models)):
        fiber_db = m.fiber.loss_db
        dcm_db = m.dcm.insertion_loss if m.dcm is not None else 0.0
        arms[arm] = {
            "collection_loss_db": src.collection_loss[k],
            "fiber_loss_db": fiber_db,
            "dcm_loss_db": dcm_db,
            "link_loss_db": fiber_db + dcm_db,
            "efficiency": m.detector.efficiency,
            "noise_cps": m.noise_rate * m.detector.efficiency + m.detector.dark_rate,
        }
    rate = pair_rate(src)
    b = link_budget(rate,
                    [arms["signal"]["collection_loss_db"], arms["signal"]["link_loss_db"]],
                    [arms["idler"]["collection_loss_db"], arms["idler"]["link_loss_db"]],
                    (models[0].detector.efficiency, models[1].detector.efficiency))
    singles = [0.5 * (b.signal_singles) + arms["signal"]["noise_cps"],
               0.5 * (b.idler_singles) + arms["idler"]["noise_cps"]]
    spread = residual_spread(config)
    cap = capture_fraction(config.window, combined_jitter(config), spread)
    in_window = b.coincidence_rate * cap
    acc = expected_accidentals(singles[0], singles[1], config.window)
    # aligned-analyzer peak: both photons pass with probability (1 + V)/4
    peak = in_window / 2.0
    car = peak / acc if acc > 0 else math.inf
    for arm, s in zip(ARMS, singles):
        arms[arm]["singles_cps"] = s
    return {
        "pair_rate": rate,
        "arms": arms,
        "link_loss_db": arms["signal"]["link_loss_db"] + arms["idler"]["link_loss_db"],
        "local_brightness": rate * src.collection_transmission("signal")
        * src.collection_transmission("idler") * models[0].detector.efficiency
        * models[1].detector.efficiency,
        "coincidence_rate": b.coincidence_rate,
        "capture_fraction": cap,
        "residual_spread_ps": spread,
        "coincidence_rate_in_window": in_window,
        "accidental_rate": acc,
        "car_aligned": car,
        "fidelity_bound": car_to_fidelity(car),
    }


def desk_scaled(config, max_singles: float = 9.5e4):
    """Copy of ``config`` with the pump lowered so neither arm's expected singles exceed ``max_singles``.

    Pair-driven singles go as pump squared; the noise part does not scale.
    Returns the config unchanged when it is already below the target.
    """
    arms = config_budget(config)["arms"]
    scale = 1.0
    for a in arms.values():
        pairs = a["singles_cps"] - a["noise_cps"]
        if a["singles_cps"] > max_singles:
            if a["noise_cps"] >= max_singles:
                raise AnalysisError("noise alone exceeds the singles target")
            scale = min(scale, (max_singles - a["noise_cps"]) / pairs)
    if scale >= 1.0:
        return config
    src = dataclasses.replace(config.source, pump_power=config.source.pump_power * math.sqrt(scale))
    return config.replace(source=src)


# --- wavelength channel scan ------------------------------------------------

@dataclass(frozen=True)
class ChannelScanModel:
    """Pair rate and noise versus detuning of a symmetric channel pair.

    The phase-matching envelope is Gaussian in detuning. Pump leakage reaching
    each channel is suppressed by a filter extinction that grows linearly
    with detuning up to a ceiling. ``dark_rate`` is the detuning-independent
    floor (detector darks plus broadband source noise) and
    ``pair_singles_ratio`` is singles per detected pair, i.e. the inverse
    heralding efficiency.
    """

    peak_pair_rate: float = 2.0e4          # coincidences/s at zero detuning
    envelope_width: float = 12.0           # nm, Gaussian sigma
    pump_leakage: float = 4.0e13           # photons/s at the channel filter input
    extinction_at_zero: float = 78.6       # dB
    extinction_slope: float = 1.43         # dB/nm
    extinction_max: float = 100.0          # dB
    dark_rate: float = 3.0e5               # counts/s
    window: float = 200.0                  # ps
    pair_singles_ratio: float = 10.0

    def pair_rate(self, detuning):
        d = np.asarray(detuning, dtype=float)
        return self.peak_pair_rate * np.exp(-0.5 * (d / self.envelope_width) ** 2)

    def extinction(self, detuning):
        d = np.asarray(detuning, dtype=float)
        if math.isinf(self.extinction_at_zero):
            return np.full(d.shape, math.inf)
        return np.minimum(self.extinction_at_zero + self.extinction_slope * d, self.extinction_max)

    def noise(self, detuning):
        return attenuate_rate(self.pump_leakage, self.extinction(detuning)) + self.dark_rate


@dataclass(frozen=True)
class ChannelScanRow:
    detuning: float                 # nm from the pump
    pair_rate: float                # counts/s
    noise_singles: float            # counts/s per arm, uncorrelated
    singles: float                  # counts/s per arm, total
    accidentals: float              # counts/s
    car: float

    def as_record(self) -> dict:
        return {"detuning_nm": self.detuning, "rate": self.pair_rate,
                "noise_singles_cps": self.noise_singles, "singles_cps": self.singles,
                "accidentals_cps": self.accidentals, "car": self.car}


def scan_wavelength_channels(model: ChannelScanModel | None = None,
                             detunings: Sequence[float] = ()) -> list[ChannelScanRow]:
    model = model or ChannelScanModel()
    d = np.asarray(detunings, dtype=float)
    if d.size == 0:
        return []
    if np.any(d <= 0) or np.any(np.diff(d) <= 0):
        raise AnalysisError("detunings must be positive and ascending")
    rows = []
    for det, rate, noise in zip(d, model.pair_rate(d), model.noise(d)):
        singles = float(noise + model.pair_singles_ratio * rate)
        acc = expected_accidentals(singles, singles, model.window)
        car = math.inf if acc == 0 else float(rate) / acc
        rows.append(ChannelScanRow(float(det), float(rate), float(noise), singles, acc, car))
    return rows


# --- run summary ---------------------------------------------------------------

@dataclass
class BasisCurve:
    """Coincidences versus rotating-arm angle with the other arm fixed in a basis."""

    basis: str
    angles: np.ndarray              # deg
    counts: np.ndarray              # coincidences per point
    accidentals: np.ndarray         # accidental estimate per point
    integration_time: float         # s per point

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        self.accidentals = np.asarray(self.accidentals, dtype=float)

    def fit(self, floor: float = 0.0) -> VisibilityFit:
        return fit_visibility(self.angles, self.counts, floor=floor)


@dataclass
class ExperimentReport:
    pair_rate: float                # cps, 4 x fitted amplitude
    pair_rate_error: float
    fits: dict = field(default_factory=dict)
    v_hv: float = 0.0
    v_da: float = 0.0
    fidelity_visibility: float = 0.0
    fidelity_visibility_error: float = 0.0
    car: float = 0.0
    car_lower_bound: bool = False
    fidelity_car_bound: float = 0.0
    accidental_rate: float = 0.0
    # same fits with each curve's mean accidental count held as the floor
    fidelity_net: float = 0.0
    v_hv_net: float = 0.0
    v_da_net: float = 0.0

    def as_record(self) -> dict:
        return {
            "pair_rate_cps": self.pair_rate,
            "pair_rate_error_cps": self.pair_rate_error,
            "v_hv": self.v_hv,
            "v_da": self.v_da,
            "fidelity_visibility": self.fidelity_visibility,
            "fidelity_visibility_error": self.fidelity_visibility_error,
            "car": self.car,
            "car_lower_bound": self.car_lower_bound,
            "fidelity_car_bound": self.fidelity_car_bound,
            "accidental_rate_cps": self.accidental_rate,
            "v_hv_net": self.v_hv_net,
            "v_da_net": self.v_da_net,
            "fidelity_visibility_net": self.fidelity_net,
            "fits": {k: v.as_record() for k, v in self.fits.items()},
        }


def _mean_v(fits, labels):
    present = [fits[b] for b in labels if b in fits]
    v = float(np.mean([f.visibility for f in present]))
    err = float(math.sqrt(sum(f.visibility_error**2 for f in present)) / len(present))
    return v, err


def experiment_report(curves: Mapping[str, BasisCurve] | Sequence[BasisCurve], *,
                      floor: float = 0.0) -> ExperimentReport:
    """Combine per-basis curves into rate, visibilities and both fidelity estimates.

    The visibility fidelity is the Werner fidelity of the mean of the H/V and
    D/A visibilities. The CAR bound uses the fitted curve maximum over the
    mean accidental estimate. They answer different questions and are kept
    apart. The ``*_net`` fields repeat the visibility fits with each curve's
    mean accidental count as a fixed floor, i.e. accidentals subtracted.
    """
    if not isinstance(curves, Mapping):
        curves = {c.basis: c for c in curves}
    missing = [b for b in ("H", "D") if b not in curves]
    if missing:
        raise AnalysisError(f"insufficient bases: missing {missing}")
    fits = {b: c.fit(floor) for b, c in curves.items()}
    v_hv, e_hv = _mean_v(fits, ("H", "V"))
    v_da, e_da = _mean_v(fits, ("D", "A"))
    fid = fidelity_from_visibilities(v_hv, v_da)
    fid_err = 3.0 / 8.0 * math.hypot(e_hv, e_da)

    rates, rate_vars = [], []
    peak_counts, acc_counts = [], []
    for b, c in curves.items():
        f = fits[b]
        rates.append(4.0 * f.amplitude / c.integration_time)
        rate_vars.append((4.0 / c.integration_time) ** 2 * max(f.amplitude, 1.0) / c.angles.size)
        peak_counts.append(f.amplitude * (1.0 + f.visibility) + f.offset_floor)
        acc_counts.append(float(np.mean(c.accidentals)))
    rate = float(np.mean(rates))
    rate_err = float(math.sqrt(sum(rate_vars)) / len(rates))
    car, bound = car_estimate(float(np.mean(peak_counts)), float(np.mean(acc_counts)))
    t = float(np.mean([c.integration_time for c in curves.values()]))
    net = {}
    for b, c in curves.items():
        try:
            net[b] = c.fit(floor + float(np.mean(c.accidentals)))
        except AnalysisError:
            net[b] = fits[b]
    v_hv_net, _ = _mean_v(net, ("H", "V"))
    v_da_net, _ = _mean_v(net, ("D", "A"))
    return ExperimentReport(
        pair_rate=rate, pair_rate_error=rate_err, fits=fits, v_hv=v_hv, v_da=v_da,
        fidelity_visibility=fid, fidelity_visibility_error=fid_err,
        car=car, car_lower_bound=bound, fidelity_car_bound=car_to_fidelity(car),
        accidental_rate=float(np.mean(acc_counts)) / t,
        fidelity_net=fidelity_from_visibilities(v_hv_net, v_da_net),
        v_hv_net=v_hv_net, v_da_net=v_da_net,
    )

