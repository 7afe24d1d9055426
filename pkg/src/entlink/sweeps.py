"""Two-photon interference sweeps: one simulated run per (basis, angle)."""

from __future__ import annotations

import numpy as np

from .analysis import BasisCurve, ExperimentReport, experiment_report
from .physics import AnalyzerSetting, CoincidenceResult
from .sim import simulate
from .tagproc import count_coincidences

BASIS_ORDER = ("H", "V", "D", "A")


def point_seed(seed: int, basis: str, index: int) -> int:
    """Independent, reproducible seed for one sweep point."""
    ss = np.random.SeedSequence([int(seed), BASIS_ORDER.index(basis), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def run_point(config, *, threads: int = 1, delay: int | None = None) -> CoincidenceResult:
    """Simulate the config as is and count coincidences at its nominal delay."""
    sig, idl = simulate(config, threads=threads)
    d = config.expected_delay if delay is None else int(delay)
    return count_coincidences(idl, sig, d, config.window, config.offset,
                              n_offsets=config.n_offsets, integration_time=config.duration,
                              check=False)


def visibility_sweep(config, bases=None, step: float | None = None, *, threads: int = 1,
                     progress=None) -> dict[str, tuple[BasisCurve, list[CoincidenceResult]]]:
    """Fix one arm in each basis and rotate the other arm's HWP through 180 degrees."""
    sweep = config.sweep
    bases = tuple(bases or sweep.bases)
    step = float(step or sweep.step_deg)
    if step <= 0 or abs(180.0 / step - round(180.0 / step)) > 1e-9:
        raise ValueError("angle step must divide 180")
    angles = [k * step for k in range(int(round(180.0 / step)))]
    rotating, fixed = sweep.rotating_arm, sweep.fixed_arm

    out = {}
    for basis in bases:
        results = []
        for k, theta in enumerate(angles):
            settings = {fixed: AnalyzerSetting.basis(basis),
                        rotating: AnalyzerSetting(theta, 0.0, "free")}
            cfg = config.replace(seed=point_seed(config.seed, basis, k),
                                 signal_analyzer=settings["signal"],
                                 idler_analyzer=settings["idler"])
            r = run_point(cfg, threads=threads)
            results.append(r)
            if progress is not None:
                progress(basis, theta, r)
        curve = BasisCurve(basis, np.array(angles),
                           np.array([r.coincidences for r in results]),
                           np.array([r.accidentals for r in results]),
                           float(np.mean([r.integration_time for r in results])))
        out[basis] = (curve, results)
    return out


def sweep_report(config, bases=None, step=None, *, threads: int = 1,
                 progress=None) -> tuple[ExperimentReport, dict]:
    curves = visibility_sweep(config, bases, step, threads=threads, progress=progress)
    return experiment_report({b: c for b, (c, _) in curves.items()}), curves
