"""Experiment configuration: YAML documents with units in every key name.

A config is either a path or the name of a bundled preset (``local-8k``,
``local-460k``, ``93km``, ``155km``, ``ideal``). ``to_dict`` produces the
fully resolved document; its SHA-256 is the provenance hash stamped on every
machine-readable output.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .analysis import ChannelScanModel
from .physics import AnalyzerSetting, DcmSpec, DetectorSpec, FiberSpec, BASIS_LABELS
from .sim import ARMS, SourceSpec


class ConfigError(ValueError):
    pass


PRESETS = ("ideal", "local-8k", "local-460k", "93km", "155km")

_SOURCE_KEYS = {
    "pump_power_mw": "pump_power",
    "brightness_coefficient_pairs_per_s_mw2": "brightness_coefficient",
    "pump_wavelength_nm": "pump_wavelength",
    "signal_center_nm": "signal_center",
    "idler_center_nm": "idler_center",
    "filter_bandwidth_nm": "filter_bandwidth",
    "intrinsic_visibility": "intrinsic_visibility",
    "noise_floor_cps": "noise_floor",
    "collection_loss_db": "collection_loss",
}
_FIBER_KEYS = {
    "length_km": "length",
    "attenuation_db_per_km": "attenuation",
    "dispersion_ps_per_nm_km": "dispersion",
    "reference_wavelength_nm": "reference_wavelength",
    "base_delay_ps": "base_delay",
    "background_rate_cps": "background_rate",
    "drift_deg_per_hour": "drift_rate",
    "insertion_loss_db": "insertion_loss",
    "depolarization": "depolarization",
}
_DCM_KEYS = {
    "total_dispersion_ps_per_nm": "total_dispersion",
    "insertion_loss_db": "insertion_loss",
    "reference_wavelength_nm": "reference_wavelength",
}
_SCAN_KEYS = {
    "peak_pair_rate_cps": "peak_pair_rate",
    "envelope_width_nm": "envelope_width",
    "pump_leakage_cps": "pump_leakage",
    "extinction_at_zero_db": "extinction_at_zero",
    "extinction_slope_db_per_nm": "extinction_slope",
    "extinction_max_db": "extinction_max",
    "dark_rate_cps": "dark_rate",
    "window_ps": "window",
    "pair_singles_ratio": "pair_singles_ratio",
}
_DETECTOR_KEYS = {
    "efficiency": "efficiency",
    "jitter_sigma_ps": "jitter_sigma",
    "dark_rate_cps": "dark_rate",
    "dead_time_ps": "dead_time",
    "resolution_ps": "resolution",
}


@dataclass(frozen=True)
class SweepSpec:
    rotating_arm: str = "idler"
    bases: tuple = ("H", "V", "D", "A")
    step_deg: float = 22.5

    def __post_init__(self):
        if self.rotating_arm not in ARMS:
            raise ConfigError(f"sweep.rotating_arm must be one of {ARMS}")
        bad = [b for b in self.bases if b not in ("H", "V", "D", "A")]
        if bad:
            raise ConfigError(f"sweep.bases contains unknown basis {bad}")
        if self.step_deg <= 0 or abs(180.0 / self.step_deg - round(180.0 / self.step_deg)) > 1e-9:
            raise ConfigError("sweep.step_deg must divide 180")

    @property
    def fixed_arm(self) -> str:
        return "signal" if self.rotating_arm == "idler" else "idler"

    def angles(self):
        n = int(round(180.0 / self.step_deg))
        return [k * self.step_deg for k in range(n)]


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceSpec
    signal_fiber: FiberSpec
    idler_fiber: FiberSpec
    signal_detector: DetectorSpec
    idler_detector: DetectorSpec
    dcm: DcmSpec | None = None
    dcm_arm: str = "idler"
    signal_analyzer: AnalyzerSetting = field(default_factory=lambda: AnalyzerSetting.basis("H"))
    idler_analyzer: AnalyzerSetting = field(default_factory=lambda: AnalyzerSetting.basis("H"))
    duration: float = 1.0                 # s
    seed: int = 0
    window: int = 200                     # ps
    accidental_offset: int | None = None  # ps
    n_offsets: int = 1
    shard_duration: float = 1.0           # s
    channels: tuple = (1, 2)
    start_hours: float = 0.0
    sweep: SweepSpec = field(default_factory=SweepSpec)
    channel_scan: ChannelScanModel = field(default_factory=ChannelScanModel)
    name: str = "custom"

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration_s must be > 0")
        if self.window <= 0:
            raise ConfigError("window_ps must be > 0")
        if self.accidental_offset is not None and self.accidental_offset <= self.window:
            raise ConfigError("accidental_offset_ps must exceed window_ps")
        if self.shard_duration <= 0:
            raise ConfigError("shard_s must be > 0")
        if self.dcm_arm not in ARMS:
            raise ConfigError(f"dcm.arm must be one of {ARMS}")
        if len(self.channels) != 2 or self.channels[0] == self.channels[1]:
            raise ConfigError("channels must be two distinct ids")
        if self.n_offsets < 1:
            raise ConfigError("accidental_offsets must be >= 1")

    def fiber(self, arm: str) -> FiberSpec:
        return self.signal_fiber if arm == "signal" else self.idler_fiber

    def detector(self, arm: str) -> DetectorSpec:
        return self.signal_detector if arm == "signal" else self.idler_detector

    def analyzer(self, arm: str) -> AnalyzerSetting:
        return self.signal_analyzer if arm == "signal" else self.idler_analyzer

    @property
    def expected_delay(self) -> int:
        """Nominal lag ``t_signal - t_idler`` in ps (idler is stream ``a``)."""
        return int(round(self.signal_fiber.base_delay - self.idler_fiber.base_delay))

    @property
    def offset(self) -> int:
        from .tagproc import default_accidental_offset
        return self.accidental_offset or default_accidental_offset(self.window)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_analyzers(self, signal: AnalyzerSetting, idler: AnalyzerSetting) -> "ExperimentConfig":
        return dataclasses.replace(self, signal_analyzer=signal, idler_analyzer=idler)

    def to_dict(self) -> dict:
        return config_to_dict(self)

    def hash(self) -> str:
        return config_hash(self)


# --- parsing ---------------------------------------------------------------

def _take(section: dict, keys: dict, where: str) -> dict:
    unknown = set(section) - set(keys)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return {keys[k]: v for k, v in section.items()}


def _build(cls, kwargs, where):
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _analyzer(doc, where) -> AnalyzerSetting:
    if doc is None:
        return AnalyzerSetting.basis("H")
    if isinstance(doc, str):
        doc = {"basis": doc}
    doc = dict(doc)
    basis = doc.pop("basis", "free")
    if basis not in BASIS_LABELS:
        raise ConfigError(f"{where}: unknown basis {basis!r}")
    hwp = doc.pop("hwp_deg", None)
    qwp = doc.pop("qwp_deg", 0.0)
    if doc:
        raise ConfigError(f"{where}: unknown keys {sorted(doc)}")
    if hwp is None:
        if basis == "free":
            raise ConfigError(f"{where}: free analyzer needs hwp_deg")
        hwp = {"H": 0.0, "V": 45.0, "D": 22.5, "A": 67.5}[basis]
    return _build(AnalyzerSetting, dict(hwp_angle=float(hwp), qwp_angle=float(qwp), basis_label=basis), where)


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = copy.deepcopy(doc)
    try:
        src = _take(doc.pop("source"), _SOURCE_KEYS, "source")
        for key in ("noise_floor", "collection_loss"):
            if isinstance(src.get(key), list):
                src[key] = tuple(src[key])
        source = _build(SourceSpec, src, "source")
        fibers = {arm: _build(FiberSpec, _take(doc.pop(f"{arm}_fiber", {}) or {}, _FIBER_KEYS, f"{arm}_fiber"),
                              f"{arm}_fiber") for arm in ARMS}
        dets_doc = doc.pop("detectors")
    except KeyError as exc:
        raise ConfigError(f"missing section {exc}") from None

    dets, channels = {}, []
    for k, arm in enumerate(ARMS):
        d = dict(dets_doc.get(arm, {}))
        channels.append(int(d.pop("channel", k + 1)))
        dets[arm] = _build(DetectorSpec, _take(d, _DETECTOR_KEYS, f"detectors.{arm}"), f"detectors.{arm}")

    dcm, dcm_arm = None, "idler"
    dcm_doc = doc.pop("dcm", None)
    if dcm_doc:
        dcm_doc = dict(dcm_doc)
        dcm_arm = dcm_doc.pop("arm", "idler")
        dcm = _build(DcmSpec, _take(dcm_doc, _DCM_KEYS, "dcm"), "dcm")

    an = doc.pop("analyzers", {}) or {}
    analyzers = {arm: _analyzer(an.get(arm), f"analyzers.{arm}") for arm in ARMS}
    sw = dict(doc.pop("sweep", {}) or {})
    sweep = SweepSpec(rotating_arm=sw.pop("rotating_arm", "idler"),
                      bases=tuple(sw.pop("bases", ("H", "V", "D", "A"))),
                      step_deg=float(sw.pop("step_deg", 22.5)))
    if sw:
        raise ConfigError(f"sweep: unknown keys {sorted(sw)}")
    scan = scan_model_from_dict(doc.pop("channel_scan", {}) or {})

    top = {
        "name": ("name", str), "seed": ("seed", int), "duration_s": ("duration", float),
        "window_ps": ("window", int), "accidental_offset_ps": ("accidental_offset", int),
        "accidental_offsets": ("n_offsets", int), "shard_s": ("shard_duration", float),
        "start_hours": ("start_hours", float),
    }
    kwargs = {}
    for key, value in doc.items():
        if key not in top:
            raise ConfigError(f"unknown top-level key {key!r}")
        attr, cast = top[key]
        kwargs[attr] = cast(value) if value is not None else None
    return ExperimentConfig(source=source, signal_fiber=fibers["signal"], idler_fiber=fibers["idler"],
                            signal_detector=dets["signal"], idler_detector=dets["idler"],
                            dcm=dcm, dcm_arm=dcm_arm, signal_analyzer=analyzers["signal"],
                            idler_analyzer=analyzers["idler"], channels=tuple(channels),
                            sweep=sweep, channel_scan=scan, **kwargs)


def _inverse(obj, keys: dict) -> dict:
    inv = {v: k for k, v in keys.items()}
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in inv:
            v = getattr(obj, f.name)
            out[inv[f.name]] = list(v) if isinstance(v, tuple) else v
    return out


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "name": cfg.name,
        "seed": cfg.seed,
        "duration_s": cfg.duration,
        "window_ps": cfg.window,
        "accidental_offset_ps": cfg.accidental_offset,
        "accidental_offsets": cfg.n_offsets,
        "shard_s": cfg.shard_duration,
        "start_hours": cfg.start_hours,
        "source": _inverse(cfg.source, _SOURCE_KEYS),
        "signal_fiber": _inverse(cfg.signal_fiber, _FIBER_KEYS),
        "idler_fiber": _inverse(cfg.idler_fiber, _FIBER_KEYS),
        "detectors": {arm: dict(_inverse(cfg.detector(arm), _DETECTOR_KEYS), channel=cfg.channels[k])
                      for k, arm in enumerate(ARMS)},
        "analyzers": {arm: {"basis": cfg.analyzer(arm).basis_label,
                            "hwp_deg": cfg.analyzer(arm).hwp_angle,
                            "qwp_deg": cfg.analyzer(arm).qwp_angle} for arm in ARMS},
        "sweep": {"rotating_arm": cfg.sweep.rotating_arm, "bases": list(cfg.sweep.bases),
                  "step_deg": cfg.sweep.step_deg},
    }
    if cfg.dcm is not None:
        doc["dcm"] = dict(_inverse(cfg.dcm, _DCM_KEYS), arm=cfg.dcm_arm)
    doc["channel_scan"] = _inverse(cfg.channel_scan, _SCAN_KEYS)
    return doc


def scan_model_from_dict(doc: dict) -> ChannelScanModel:
    kwargs = {k: float(v) for k, v in _take(doc, _SCAN_KEYS, "channel_scan").items()}
    model = _build(ChannelScanModel, kwargs, "channel_scan")
    if model.peak_pair_rate < 0 or model.pump_leakage < 0 or model.dark_rate < 0:
        raise ConfigError("channel_scan: rates must be >= 0")
    if model.envelope_width <= 0 or model.window <= 0:
        raise ConfigError("channel_scan: envelope_width_nm and window_ps must be > 0")
    return model


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def preset_path(name: str) -> Path:
    return Path(str(resources.files("entlink") / "presets" / f"{name}.yaml"))


def load_config(source, *, seed: int | None = None, duration: float | None = None) -> ExperimentConfig:
    """Load a config from a path, a preset name, or an already-parsed dict."""
    if isinstance(source, ExperimentConfig):
        cfg = source
    elif isinstance(source, dict):
        cfg = config_from_dict(source)
    else:
        path = Path(source)
        if not path.exists() and str(source) in PRESETS:
            path = preset_path(str(source))
        try:
            doc = yaml.safe_load(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config not found: {source}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        cfg = config_from_dict(doc)
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed)
    if duration is not None:
        if not duration > 0:
            raise ConfigError("duration_s must be > 0")
        changes["duration"] = float(duration)
    return cfg.replace(**changes) if changes else cfg
