"""Entanglement distribution over lossy, dispersive fiber: simulator and time-tag analysis."""

from .physics import (AnalyzerSetting, CoincidenceResult, DcmSpec, DetectorSpec, FiberSpec,
                      WernerState, attenuate_rate, car_to_fidelity, coincidence_probability,
                      dispersion_spread, expected_accidentals, fidelity_from_visibilities,
                      joint_outcome_distribution, werner_fidelity)
from .tags import QtagFormatError, TagStream, read_qtag, write_qtag
from .sim import SourceSpec, effective_visibility, generate_pairs, pair_rate, simulate
from .tagproc import (DelaySearchSpec, Histogram, NoPeakError, car_vs_window, count_coincidences,
                      cross_correlate, find_delay, histogram_fwhm)
from .config import ConfigError, ExperimentConfig, load_config

__version__ = "0.1.0"
