"""Monte Carlo generation of detector time tags for a pair source and two fiber arms.

Two entry points produce the same statistics:

* the stage functions ``generate_pairs`` -> ``apply_fiber`` -> ``apply_dcm`` ->
  ``detect`` follow every emitted pair through each loss and timing element;
* ``simulate`` fuses those stages per time shard. Because photon losses are
  independent Bernoulli trials on a Poisson process, the surviving pairs and
  the lone surviving photons of each arm are themselves independent Poisson
  processes, so only photons that reach a detector are ever drawn. This is
  what makes megahertz sources with 40 dB links tractable.

Every random draw comes from a generator keyed on (master seed, noise source,
shard index), so output is bit-identical for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numba import njit

from .physics import (AnalyzerSetting, DcmSpec, DetectorSpec, FiberSpec,
                      conjugate_wavelength, joint_outcome_table)
from .tags import TagStream

if TYPE_CHECKING:
    from .config import ExperimentConfig

PS_PER_S = 1e12
PS_PER_HOUR = 3.6e15
ARMS = ("signal", "idler")
RNG_STREAMS = ("emission", "thinning", "jitter", "darks", "background")


@dataclass(frozen=True)
class SourceSpec:
    pump_power: float = 1.0                     # mW
    brightness_coefficient: float = 0.0         # pairs/(s mW^2)
    pump_wavelength: float = 1550.12            # nm
    signal_center: float = 1539.37              # nm
    idler_center: float = 1561.01               # nm
    filter_bandwidth: float = 0.8               # nm
    intrinsic_visibility: float = 1.0
    noise_floor: tuple = (0.0, 0.0)             # counts/s per arm at the source output
    collection_loss: tuple = (0.0, 0.0)         # dB per arm, chip to fiber link

    def __post_init__(self):
        if self.pump_power < 0 or self.brightness_coefficient < 0:
            raise ValueError("pump_power and brightness_coefficient must be >= 0")
        if not 0.0 <= self.intrinsic_visibility <= 1.0:
            raise ValueError("intrinsic_visibility must lie in [0, 1]")
        if self.filter_bandwidth <= 0:
            raise ValueError("filter_bandwidth must be positive")
        nf = self.noise_floor
        if np.ndim(nf) == 0:
            nf = (float(nf), float(nf))
        nf = tuple(float(x) for x in nf)
        if len(nf) != 2 or min(nf) < 0:
            raise ValueError("noise_floor must be one or two nonnegative rates")
        object.__setattr__(self, "noise_floor", nf)
        cl = self.collection_loss
        if np.ndim(cl) == 0:
            cl = (float(cl), float(cl))
        cl = tuple(float(x) for x in cl)
        if len(cl) != 2 or min(cl) < 0:
            raise ValueError("collection_loss must be one or two nonnegative losses in dB")
        object.__setattr__(self, "collection_loss", cl)
        conj = float(conjugate_wavelength(self.pump_wavelength, self.signal_center))
        if abs(conj - self.idler_center) > 0.1:
            raise ValueError(
                f"energy conservation violated: signal {self.signal_center} nm pairs with "
                f"{conj:.3f} nm, idler center is {self.idler_center} nm")

    @property
    def idler_mean(self) -> float:
        """Idler wavelength conjugate to the signal band center."""
        return float(conjugate_wavelength(self.pump_wavelength, self.signal_center))

    def arm_center(self, arm: str) -> float:
        return self.signal_center if arm == "signal" else self.idler_mean

    def collection_transmission(self, arm: str) -> float:
        return 10.0 ** (-self.collection_loss[ARMS.index(arm)] / 10.0)


@dataclass(frozen=True)
class PairEvents:
    emit_time: np.ndarray           # ps, float64
    signal_wavelength: np.ndarray   # nm
    idler_wavelength: np.ndarray    # nm

    def __len__(self):
        return int(self.emit_time.size)

    def wavelength(self, arm: str) -> np.ndarray:
        return self.signal_wavelength if arm == "signal" else self.idler_wavelength


@dataclass(frozen=True)
class ArmPhotons:
    """Photons of one arm still in flight, linked to their pair by index."""

    pair_index: np.ndarray
    time: np.ndarray                # ps, float64
    wavelength: np.ndarray

    def __len__(self):
        return int(self.time.size)

    def subset(self, mask) -> "ArmPhotons":
        return ArmPhotons(self.pair_index[mask], self.time[mask], self.wavelength[mask])


def stream_rng(seed: int, label: str, shard: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(RNG_STREAMS.index(label), int(shard))))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --- source ----------------------------------------------------------------

def pair_rate(spec: SourceSpec) -> float:
    return spec.brightness_coefficient * spec.pump_power ** 2


def effective_visibility(spec: SourceSpec, window: float) -> float:
    """Intrinsic visibility diluted by extra pairs in the coincidence window."""
    if window <= 0:
        raise ValueError("window must be positive")
    mu = pair_rate(spec) * window * 1e-12
    return spec.intrinsic_visibility / (1.0 + mu)


def _sample_pairs(spec: SourceSpec, n: int, start_ps: float, length_ps: float,
                  rng: np.random.Generator) -> PairEvents:
    t = start_ps + rng.random(n) * length_ps
    half = spec.filter_bandwidth / 2.0
    lam_s = spec.signal_center + rng.uniform(-half, half, n)
    lam_i = conjugate_wavelength(spec.pump_wavelength, lam_s)
    return PairEvents(t, lam_s, lam_i)


def generate_pairs(spec: SourceSpec, duration: float, seed, *, start: float = 0.0) -> PairEvents:
    """Homogeneous Poisson pair emission over ``[start, start + duration)`` seconds.

    Signal wavelengths are uniform over the top-hat filter band, idlers follow
    from energy conservation. Events are returned in emission order.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = _rng(seed)
    n = int(rng.poisson(pair_rate(spec) * duration))
    ev = _sample_pairs(spec, n, start * PS_PER_S, duration * PS_PER_S, rng)
    order = np.argsort(ev.emit_time, kind="stable")
    return PairEvents(ev.emit_time[order], ev.signal_wavelength[order], ev.idler_wavelength[order])


# --- propagation -----------------------------------------------------------

def fiber_delay(fiber: FiberSpec, wavelength, reference: float):
    return fiber.base_delay + fiber.dispersion * fiber.length * (np.asarray(wavelength) - reference)


def dcm_delay(dcm: DcmSpec, wavelength, reference: float):
    return dcm.total_dispersion * (np.asarray(wavelength) - reference)


def _reference(obj, reference):
    ref = obj.reference_wavelength if obj.reference_wavelength is not None else reference
    if ref is None:
        raise ValueError("no reference wavelength given")
    return ref


def apply_fiber(events, arm: str, fiber: FiberSpec, seed, *, reference: float | None = None,
                thin: bool = True) -> ArmPhotons:
    """Propagate one arm through a fiber.

    ``events`` is a ``PairEvents`` (photons start at their emission time) or
    an ``ArmPhotons`` batch already in flight. Each photon survives with the
    fiber transmission; survivors pick up the base delay plus the chromatic
    term ``D * L * (lambda - lambda_ref)``.
    """
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}")
    if isinstance(events, PairEvents):
        photons = ArmPhotons(np.arange(len(events), dtype=np.int64), events.emit_time,
                             events.wavelength(arm))
    else:
        photons = events
    ref = _reference(fiber, reference)
    if thin:
        keep = _rng(seed).random(len(photons)) < fiber.transmission
        photons = photons.subset(keep)
    return ArmPhotons(photons.pair_index, photons.time + fiber_delay(fiber, photons.wavelength, ref),
                      photons.wavelength)


def apply_dcm(photons: ArmPhotons, dcm: DcmSpec, seed, *, reference: float | None = None,
              thin: bool = True) -> ArmPhotons:
    ref = _reference(dcm, reference)
    if thin:
        keep = _rng(seed).random(len(photons)) < dcm.transmission
        photons = photons.subset(keep)
    return ArmPhotons(photons.pair_index, photons.time + dcm_delay(dcm, photons.wavelength, ref),
                      photons.wavelength)


def apply_polarization_drift(times, fiber: FiberSpec, start_hours: float = 0.0):
    """Analyzer rotation (degrees) accumulated by linear drift at ``times`` (ps)."""
    if fiber.drift_rate < 0:
        raise ValueError("drift_rate must be >= 0")
    return fiber.drift_rate * (start_hours + np.asarray(times, dtype=float) / PS_PER_HOUR)


# --- detection -------------------------------------------------------------

@njit(cache=True)
def _dead_time_mask(t, ch, dead):
    keep = np.ones(t.size, np.bool_)
    if dead <= 0:
        return keep
    nch = 0
    for c in ch:
        if c + 1 > nch:
            nch = c + 1
    last = np.full(nch, -(2**62), np.int64)
    for k in range(t.size):
        c = ch[k]
        if t[k] - last[c] < dead:
            keep[k] = False
        else:
            last[c] = t[k]
    return keep


def apply_dead_time(stream: TagStream, dead_time: float) -> TagStream:
    if dead_time <= 0 or len(stream) == 0:
        return stream
    keep = _dead_time_mask(stream.timestamps, stream.channels.astype(np.int64), np.int64(math.ceil(dead_time)))
    return TagStream(stream.timestamps[keep], stream.channels[keep], stream.resolution, stream.duration)


def _quantize(t: np.ndarray, resolution: int) -> np.ndarray:
    q = np.rint(t / resolution).astype(np.int64) * int(resolution)
    return q[q >= 0]


def _sample_outcomes(rng, visibility, delta_deg):
    """Joint PBS outcome per pair: returns (signal_pass, idler_pass)."""
    probs = joint_outcome_table(visibility, delta_deg)
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(np.shape(delta_deg))
    cat = (u[..., None] >= cum[..., :3]).sum(axis=-1)
    return (cat == 0) | (cat == 1), (cat == 0) | (cat == 2)


def _noise_times(rng, rate: float, start_ps: float, length_ps: float) -> np.ndarray:
    n = int(rng.poisson(rate * length_ps / PS_PER_S)) if rate > 0 else 0
    return start_ps + rng.random(n) * length_ps


def _finalize(times: np.ndarray, channel: int, resolution: int, dead_time: float,
              duration_ps: int) -> TagStream:
    ts = np.sort(times)
    s = TagStream(ts, np.full(ts.size, channel, np.uint32), int(resolution),
                  max(int(duration_ps), int(ts[-1]) if ts.size else 0))
    return apply_dead_time(s, dead_time)


def detect(pairs: PairEvents, signal: ArmPhotons, idler: ArmPhotons,
           signal_analyzer: AnalyzerSetting, idler_analyzer: AnalyzerSetting,
           visibility: float, detectors: tuple[DetectorSpec, DetectorSpec], seed, *,
           duration: float, channels: tuple[int, int] = (1, 2),
           noise_rates: tuple[float, float] = (0.0, 0.0),
           arm_delays: tuple[float, float] = (0.0, 0.0),
           fibers: tuple[FiberSpec, FiberSpec] | None = None,
           start: float = 0.0, start_hours: float = 0.0) -> tuple[TagStream, TagStream]:
    """Project, detect and timestamp both arms; returns (signal, idler) streams.

    A joint PBS outcome is drawn for every pair from the Werner-state table
    (including any fiber drift rotation); transmitted photons that reached
    the detector are kept with the detector efficiency. ``noise_rates`` are
    uncorrelated photon rates incident on each detector, spread over the
    arm's arrival span together with dark counts.
    """
    if channels[0] == channels[1]:
        raise ValueError("signal and idler channels must differ")
    for s in (signal_analyzer, idler_analyzer):
        if s.qwp_angle != 0.0:
            raise ValueError("nonzero QWP angles are not supported")
    rng = _rng(seed)
    n = len(pairs)
    delta = np.full(n, signal_analyzer.hwp_angle - idler_analyzer.hwp_angle)
    if fibers is not None:
        delta = delta + apply_polarization_drift(pairs.emit_time + fibers[0].base_delay, fibers[0], start_hours)
        delta = delta - apply_polarization_drift(pairs.emit_time + fibers[1].base_delay, fibers[1], start_hours)
    pass_s, pass_i = _sample_outcomes(rng, visibility, delta)

    duration_ps = duration * PS_PER_S
    start_ps = start * PS_PER_S
    out = []
    for arm, photons, passed, det, ch, noise, d0 in zip(
            ARMS, (signal, idler), (pass_s, pass_i), detectors, channels, noise_rates, arm_delays):
        keep = passed[photons.pair_index] & (rng.random(len(photons)) < det.efficiency)
        t = photons.time[keep]
        extra = _noise_times(rng, noise * det.efficiency + det.dark_rate, start_ps + d0, duration_ps)
        t = np.concatenate([t, extra])
        if det.jitter_sigma > 0:
            t = t + rng.normal(0.0, det.jitter_sigma, t.size)
        out.append(_finalize(_quantize(t, det.resolution), ch, det.resolution, det.dead_time,
                             start_ps + duration_ps + d0))
    return out[0], out[1]


# --- fused engine ----------------------------------------------------------

@dataclass(frozen=True)
class ArmModel:
    """Per-arm quantities the fused sampler needs, derived from a config."""

    fiber: FiberSpec
    dcm: DcmSpec | None
    detector: DetectorSpec
    reference: float
    dcm_reference: float
    channel: int
    noise_rate: float       # counts/s incident on the detector, before efficiency
    collection: float = 1.0

    @property
    def path_transmission(self) -> float:
        t = self.collection * self.fiber.transmission
        if self.dcm is not None:
            t *= self.dcm.transmission
        return t

    @property
    def detection_probability(self) -> float:
        return self.path_transmission * self.detector.efficiency

    def arrival(self, emit_time, wavelength):
        t = emit_time + fiber_delay(self.fiber, wavelength, self.reference)
        if self.dcm is not None:
            t = t + dcm_delay(self.dcm, wavelength, self.dcm_reference)
        return t


def arm_models(config: "ExperimentConfig") -> tuple[ArmModel, ArmModel]:
    src = config.source
    models = []
    for k, arm in enumerate(ARMS):
        fiber = config.fiber(arm)
        dcm = config.dcm if (config.dcm is not None and config.dcm_arm == arm) else None
        center = src.arm_center(arm)
        ref = fiber.reference_wavelength if fiber.reference_wavelength is not None else center
        dref = center
        if dcm is not None and dcm.reference_wavelength is not None:
            dref = dcm.reference_wavelength
        after_fiber = dcm.transmission if dcm is not None else 1.0
        # Source noise is unpolarized: half of it passes the analyzer PBS.
        noise = 0.5 * src.noise_floor[k] * fiber.transmission * after_fiber \
            + fiber.background_rate * after_fiber
        models.append(ArmModel(fiber, dcm, config.detector(arm), ref, dref,
                               config.channels[k], noise, src.collection_transmission(arm)))
    return models[0], models[1]


def state_visibility(config: "ExperimentConfig") -> float:
    v = effective_visibility(config.source, config.window)
    for arm in ARMS:
        v *= 1.0 - config.fiber(arm).depolarization
    return v


def _arrivals(model: ArmModel, src: SourceSpec, arm: str, emit_time, lam_s):
    lam = lam_s if arm == "signal" else conjugate_wavelength(src.pump_wavelength, lam_s)
    return model.arrival(emit_time, lam)


def _simulate_shard(config: "ExperimentConfig", models, visibility: float, seed: int,
                    shard: int, start_ps: float, length_ps: float):
    """Tags of both arms for one shard, unsorted.

    Pair survival splits the emission process into three independent Poisson
    processes: both photons detectable, signal only, idler only. Only the
    first needs a joint PBS outcome; a lone photon passes its analyzer with
    probability 1/2 whatever the setting, so it is drawn directly as part of
    a thinned single-arm process.
    """
    src = config.source
    sig, idl = models
    p_s, p_i = sig.detection_probability, idl.detection_probability
    lam = pair_rate(src) * length_ps / PS_PER_S
    half = src.filter_bandwidth / 2.0

    rng_e = stream_rng(seed, "emission", shard)
    rng_t = stream_rng(seed, "thinning", shard)
    rng_j = stream_rng(seed, "jitter", shard)
    rng_d = stream_rng(seed, "darks", shard)
    rng_b = stream_rng(seed, "background", shard)

    n_both = int(rng_e.poisson(lam * p_s * p_i))
    t = start_ps + rng_e.random(n_both) * length_ps
    lam_s = src.signal_center + rng_e.uniform(-half, half, n_both)
    delta = np.full(n_both, config.analyzer("signal").hwp_angle - config.analyzer("idler").hwp_angle)
    if sig.fiber.drift_rate or idl.fiber.drift_rate:
        delta = delta + apply_polarization_drift(t + sig.fiber.base_delay, sig.fiber, config.start_hours)
        delta = delta - apply_polarization_drift(t + idl.fiber.base_delay, idl.fiber, config.start_hours)
    pass_s, pass_i = _sample_outcomes(rng_t, visibility, delta)

    out = []
    for arm, model, passed, p_other in (("signal", sig, pass_s, p_i), ("idler", idl, pass_i, p_s)):
        p_self = model.detection_probability
        n_alone = int(rng_e.poisson(lam * p_self * (1.0 - p_other) * 0.5))
        t_alone = start_ps + rng_e.random(n_alone) * length_ps
        lam_alone = src.signal_center + rng_e.uniform(-half, half, n_alone)
        d0 = model.fiber.base_delay
        det = model.detector
        times = np.concatenate([
            _arrivals(model, src, arm, t[passed], lam_s[passed]),
            _arrivals(model, src, arm, t_alone, lam_alone),
            _noise_times(rng_b, model.noise_rate * det.efficiency, start_ps + d0, length_ps),
            _noise_times(rng_d, det.dark_rate, start_ps + d0, length_ps),
        ])
        if det.jitter_sigma > 0:
            times += rng_j.normal(0.0, det.jitter_sigma, times.size)
        out.append(_quantize(times, det.resolution))
    return out


def simulate(config: "ExperimentConfig", *, threads: int = 1, seed: int | None = None,
             visibility: float | None = None) -> tuple[TagStream, TagStream]:
    """Run the full source-to-detector chain; returns (signal, idler) streams."""
    seed = config.seed if seed is None else int(seed)
    models = arm_models(config)
    if models[0].channel == models[1].channel:
        raise ValueError("signal and idler channels must differ")
    vis = state_visibility(config) if visibility is None else visibility
    duration_ps = config.duration * PS_PER_S
    shard_ps = config.shard_duration * PS_PER_S
    nshards = max(1, int(math.ceil(duration_ps / shard_ps - 1e-9)))

    def run(k):
        start = k * shard_ps
        return _simulate_shard(config, models, vis, seed, k, start, min(shard_ps, duration_ps - start))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(nshards)))
    else:
        parts = [run(k) for k in range(nshards)]

    streams = []
    for k, model in enumerate(models):
        t = np.concatenate([p[k] for p in parts]) if parts else np.zeros(0, np.int64)
        for p in parts:
            p[k] = None
        streams.append(_finalize(t, model.channel, model.detector.resolution,
                                 model.detector.dead_time, duration_ps + model.fiber.base_delay))
    return streams[0], streams[1]


def simulate_reference(config: "ExperimentConfig", *, seed: int | None = None) -> tuple[TagStream, TagStream]:
    """Stage-by-stage chain over a single shard; slow but literal.

    Used to cross-check ``simulate`` on short runs.
    """
    seed = config.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    src = config.source
    models = arm_models(config)
    pairs = generate_pairs(src, config.duration, rng)
    arms = []
    for arm, model in zip(ARMS, models):
        coupling = FiberSpec(insertion_loss=src.collection_loss[ARMS.index(arm)])
        ph = apply_fiber(pairs, arm, coupling, rng, reference=model.reference)
        ph = apply_fiber(ph, arm, model.fiber, rng, reference=model.reference)
        if model.dcm is not None:
            ph = apply_dcm(ph, model.dcm, rng, reference=model.dcm_reference)
        arms.append(ph)
    return detect(pairs, arms[0], arms[1], config.analyzer("signal"), config.analyzer("idler"),
                  state_visibility(config), (models[0].detector, models[1].detector), rng,
                  duration=config.duration, channels=config.channels,
                  noise_rates=(models[0].noise_rate, models[1].noise_rate),
                  arm_delays=(models[0].fiber.base_delay, models[1].fiber.base_delay),
                  fibers=(models[0].fiber, models[1].fiber), start_hours=config.start_hours)
