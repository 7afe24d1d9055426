"""Closed-form state, projection and link-budget formulas.

Everything here is a pure function of its arguments. Angles are taken in
degrees at the interface and converted to radians internally; times are in
picoseconds, rates in counts per second, losses in dB.

The polarization state is a Werner mixture of the Bell state
(|HH> + |VV>)/sqrt(2) with white noise. A half-wave plate at angle theta in
front of a PBS projects onto linear polarization at 2*theta, so the joint
pass probability depends only on the HWP angle difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BASIS_ANGLES = {"H": 0.0, "V": 45.0, "D": 22.5, "A": 67.5}
BASIS_LABELS = ("H", "V", "D", "A", "free")


@dataclass(frozen=True)
class WernerState:
    """rho = V |Phi><Phi| + (1 - V) I/4."""

    visibility: float

    def __post_init__(self):
        v = self.visibility
        if not (0.0 <= v <= 1.0) or math.isnan(v):
            raise ValueError(f"visibility must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class AnalyzerSetting:
    hwp_angle: float = 0.0
    qwp_angle: float = 0.0
    basis_label: str = "free"

    def __post_init__(self):
        if self.basis_label not in BASIS_LABELS:
            raise ValueError(f"unknown basis label {self.basis_label!r}")
        if not math.isfinite(self.hwp_angle) or not math.isfinite(self.qwp_angle):
            raise ValueError("analyzer angles must be finite")
        if self.basis_label != "free":
            expected = BASIS_ANGLES[self.basis_label]
            r = (self.hwp_angle - expected) % 90.0
            if min(r, 90.0 - r) > 1e-9:
                raise ValueError(
                    f"basis {self.basis_label} requires hwp_angle = {expected} mod 90, "
                    f"got {self.hwp_angle}")

    @classmethod
    def basis(cls, label: str) -> "AnalyzerSetting":
        return cls(hwp_angle=BASIS_ANGLES[label], basis_label=label)

    def rotated(self, degrees: float) -> "AnalyzerSetting":
        return AnalyzerSetting(self.hwp_angle + degrees, self.qwp_angle, "free")


@dataclass(frozen=True)
class FiberSpec:
    """One deployed-fiber (or patchcord) arm.

    ``background_rate`` is the broadband in-band noise at the fiber output,
    after the DWDM filter. ``insertion_loss`` lumps connectors and bulk optics
    that are not length dependent. ``depolarization`` is the fractional
    visibility loss attributed to this fiber (PMD is not modeled in detail).
    """

    length: float = 0.0                 # km
    attenuation: float = 0.0            # dB/km
    dispersion: float = 0.0             # ps/(nm km)
    reference_wavelength: float | None = None  # nm; None -> arm center
    base_delay: float = 0.0             # ps
    background_rate: float = 0.0        # counts/s
    drift_rate: float = 0.0             # deg/hour
    insertion_loss: float = 0.0         # dB
    depolarization: float = 0.0

    def __post_init__(self):
        for name in ("length", "attenuation", "base_delay", "background_rate",
                     "drift_rate", "insertion_loss"):
            if getattr(self, name) < 0:
                raise ValueError(f"FiberSpec.{name} must be >= 0")
        if not 0.0 <= self.depolarization <= 1.0:
            raise ValueError("FiberSpec.depolarization must lie in [0, 1]")

    @property
    def loss_db(self) -> float:
        return self.length * self.attenuation + self.insertion_loss

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)


@dataclass(frozen=True)
class DcmSpec:
    total_dispersion: float = 0.0       # ps/nm, signed
    insertion_loss: float = 0.0         # dB
    reference_wavelength: float | None = None

    def __post_init__(self):
        if self.insertion_loss < 0:
            raise ValueError("DcmSpec.insertion_loss must be >= 0")

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.insertion_loss / 10.0)


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    jitter_sigma: float = 0.0           # ps
    dark_rate: float = 0.0              # counts/s
    dead_time: float = 0.0              # ps
    resolution: int = 1                 # ps

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("DetectorSpec.efficiency must lie in [0, 1]")
        for name in ("jitter_sigma", "dark_rate", "dead_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"DetectorSpec.{name} must be >= 0")
        if self.resolution < 1 or int(self.resolution) != self.resolution:
            raise ValueError("DetectorSpec.resolution must be an integer >= 1 ps")


@dataclass(frozen=True)
class CoincidenceResult:
    coincidences: int
    accidentals: float
    window: int                         # ps
    integration_time: float             # s
    car: float
    delay: int = 0                      # ps
    car_lower_bound: bool = False

    def __post_init__(self):
        if self.coincidences < 0 or self.accidentals < 0 or self.car < 0:
            raise ValueError("counts and CAR must be nonnegative")
        if self.window <= 0:
            raise ValueError("window must be positive")

    @classmethod
    def from_counts(cls, coincidences: int, accidentals: float, window: int,
                    integration_time: float, delay: int = 0) -> "CoincidenceResult":
        car, bound = car_estimate(coincidences, accidentals)
        return cls(int(coincidences), float(accidentals), int(window),
                   float(integration_time), car, int(delay), bound)

    def as_record(self) -> dict:
        return {
            "coincidences": self.coincidences,
            "accidentals": self.accidentals,
            "window_ps": self.window,
            "delay_ps": self.delay,
            "integration_s": self.integration_time,
            "car": self.car,
            "car_lower_bound": self.car_lower_bound,
        }


def car_estimate(coincidences: float, accidentals: float) -> tuple[float, bool]:
    """CAR with the accidental count floored at one.

    Returns ``(car, is_lower_bound)``; the flag is set whenever the floor was
    applied.
    """
    if accidentals < 1.0:
        return float(coincidences), True
    return coincidences / accidentals, False


def _check_state(state: WernerState, *settings: AnalyzerSetting) -> None:
    if not isinstance(state, WernerState):
        raise TypeError("state must be a WernerState")
    for s in settings:
        if s.qwp_angle != 0.0:
            raise ValueError("nonzero QWP angles are not supported")


def _correlation(visibility, delta_deg):
    return visibility * np.cos(np.deg2rad(4.0 * np.asarray(delta_deg, dtype=float)))


def coincidence_probability(state: WernerState, signal: AnalyzerSetting,
                            idler: AnalyzerSetting) -> float:
    """Probability that both photons exit the transmitted PBS ports."""
    _check_state(state, signal, idler)
    c = _correlation(state.visibility, signal.hwp_angle - idler.hwp_angle)
    return float(0.25 * (1.0 + c))


def joint_outcome_distribution(state: WernerState, signal: AnalyzerSetting,
                               idler: AnalyzerSetting) -> tuple[float, float, float, float]:
    """Probabilities of (pass,pass), (pass,fail), (fail,pass), (fail,fail)."""
    _check_state(state, signal, idler)
    c = float(_correlation(state.visibility, signal.hwp_angle - idler.hwp_angle))
    same = 0.25 * (1.0 + c)
    diff = 0.25 * (1.0 - c)
    return same, diff, diff, same


def joint_outcome_table(visibility, delta_deg) -> np.ndarray:
    """Vectorized outcome probabilities, shape (..., 4), same order as above."""
    c = _correlation(visibility, delta_deg)
    same = 0.25 * (1.0 + c)
    diff = 0.25 * (1.0 - c)
    return np.stack([same, diff, diff, same], axis=-1)


def car_to_fidelity(car: float) -> float:
    if car < 0:
        raise ValueError("CAR must be nonnegative")
    if math.isinf(car):
        return 1.0
    return car / (car + 1.0)


def werner_fidelity(state: WernerState) -> float:
    return (1.0 + 3.0 * state.visibility) / 4.0


def visibility_from_fidelity(fidelity: float) -> float:
    return (4.0 * fidelity - 1.0) / 3.0


def fidelity_from_visibilities(v_hv: float, v_da: float) -> float:
    """Werner fidelity of the mean of the two-basis visibilities."""
    for v in (v_hv, v_da):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"visibility {v} outside [0, 1]")
    return (1.0 + 3.0 * (v_hv + v_da) / 2.0) / 4.0


def dispersion_spread(bandwidth: float, dispersion: float, length: float) -> float:
    """Temporal spread (ps) of a band of width ``bandwidth`` nm over a fiber."""
    return bandwidth * dispersion * length


def attenuate_rate(rate, loss):
    return rate * 10.0 ** (-loss / 10.0)


def expected_accidentals(singles_a: float, singles_b: float, window: float) -> float:
    """Uncorrelated coincidence rate S_a * S_b * tau (window in ps)."""
    return singles_a * singles_b * window * 1e-12


def conjugate_wavelength(pump_nm, signal_nm):
    """Partner wavelength from 2/lambda_p = 1/lambda_s + 1/lambda_i."""
    return 1.0 / (2.0 / pump_nm - 1.0 / np.asarray(signal_nm, dtype=float))


def matched_dcm_dispersion(fiber_dispersion_ps_per_nm: float, pump_nm: float,
                           signal_nm: float) -> float:
    """Idler-arm DCM total (ps/nm) that cancels a signal-arm dispersion.

    Uses d(lambda_i)/d(lambda_s) = -(lambda_i/lambda_s)^2 from energy
    conservation, to first order about the band centers.
    """
    idler_nm = float(conjugate_wavelength(pump_nm, signal_nm))
    slope = -(idler_nm / signal_nm) ** 2
    return fiber_dispersion_ps_per_nm / slope
