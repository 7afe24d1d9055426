"""Command line entry point: ``entlink <command> ...``.

Machine-readable records go to standard output as JSON, diagnostics to
standard error. Exit status: 0 success, 1 analysis found nothing (no peak),
2 invalid input or I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, config_budget, experiment_report, scan_wavelength_channels
from .config import ConfigError, load_config, scan_model_from_dict
from .sim import simulate
from .sweeps import visibility_sweep
from .tagproc import (DelaySearchSpec, NoPeakError, count_coincidences, cross_correlate,
                      find_delay)
from .tags import TagStreamError, read_qtag, write_qtag

EXIT_OK, EXIT_NEGATIVE, EXIT_INVALID = 0, 1, 2


class UsageError(ValueError):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _emit(record: dict, output: Path | None, name: str) -> None:
    text = json.dumps(_jsonable(record), indent=2, sort_keys=False)
    print(text)
    if output is not None:
        output.mkdir(parents=True, exist_ok=True)
        (output / name).write_text(text + "\n")


def _provenance(config_hash_: str, seed, **extra) -> dict:
    return {"tool": "entlink", "version": __version__, "config_hash": config_hash_,
            "seed": seed, **extra}


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed, duration=args.duration)
    out = Path(args.output)
    t0 = time.perf_counter()
    sig, idl = simulate(cfg, threads=args.threads)
    sig.validate()
    idl.validate()
    out.mkdir(parents=True, exist_ok=True)
    paths = {"signal": out / "signal.qtag", "idler": out / "idler.qtag"}
    write_qtag(paths["signal"], sig)
    write_qtag(paths["idler"], idl)
    _log(f"simulated {cfg.duration} s in {time.perf_counter() - t0:.1f} s: "
         f"{len(sig)} signal, {len(idl)} idler tags")
    record = {
        "provenance": _provenance(cfg.hash(), cfg.seed, config=cfg.to_dict()),
        "outputs": {arm: {"path": str(p), "tags": n, "sha256": _file_sha256(p)}
                    for (arm, p), n in zip(paths.items(), (len(sig), len(idl)))},
        "expected_delay_ps": cfg.expected_delay,
        "stream_a": "idler",
        "stream_b": "signal",
    }
    _emit(record, out, "provenance.json")
    return EXIT_OK


def cmd_analyze(args) -> int:
    a, b = read_qtag(args.a), read_qtag(args.b)
    params = {"a": _file_sha256(args.a), "b": _file_sha256(args.b), "delay": args.delay,
              "window_ps": args.window, "offset_ps": args.offset, "n_offsets": args.n_offsets}
    if args.delay == "auto":
        spec = DelaySearchSpec(min_delay=args.min_delay, max_delay=args.max_delay)
        delay = find_delay(a, b, spec)
        _log(f"found delay {delay} ps")
    else:
        try:
            delay = int(args.delay)
        except ValueError:
            raise UsageError(f"--delay must be an integer or 'auto', got {args.delay!r}") from None
    res = count_coincidences(a, b, delay, args.window, args.offset, n_offsets=args.n_offsets)
    phash = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()
    record = dict(res.as_record(), provenance=_provenance(phash, None, inputs=params))
    out = Path(args.output) if args.output else None
    if args.histogram:
        h = cross_correlate(a, b, delay, args.half_range, args.bin_width)
        path = Path(args.histogram)
        path.parent.mkdir(parents=True, exist_ok=True)
        h.to_csv(path)
        record["histogram_csv"] = str(path)
    _emit(record, out, "coincidences.json")
    return EXIT_OK


def _parse_bases(text: str | None):
    if text is None:
        return None
    bases = tuple(b.strip().upper() for b in text.split(",") if b.strip())
    bad = [b for b in bases if b not in ("H", "V", "D", "A")]
    if bad or not bases:
        raise UsageError(f"bases must be a subset of H,V,D,A, got {text!r}")
    return bases


def cmd_visibility(args) -> int:
    cfg = load_config(args.config, seed=args.seed, duration=args.duration)
    bases = _parse_bases(args.bases)
    step = args.step
    if step is not None and (step <= 0 or abs(180.0 / step - round(180.0 / step)) > 1e-9):
        raise UsageError("--step must divide 180")

    def progress(basis, theta, r):
        _log(f"{basis} {theta:7.2f} deg: {r.coincidences} coincidences, {r.accidentals:.1f} accidentals")

    curves = visibility_sweep(cfg, bases, step, threads=args.threads, progress=progress)
    record = {"provenance": _provenance(cfg.hash(), cfg.seed, config=cfg.to_dict())}
    try:
        rep = experiment_report({b: c for b, (c, _) in curves.items()})
        record["report"] = rep.as_record()
    except AnalysisError as exc:
        # Fits are still useful without the H and D pair.
        _log(f"report skipped: {exc}")
        record["fits"] = {b: c.fit().as_record() for b, (c, _) in curves.items()}
    out = Path(args.output) if args.output else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        first = next(iter(curves.values()))[0]
        cols = ["angle_deg"] + [f"counts_{b}" for b in curves]
        lines = [f"# config_hash={cfg.hash()} seed={cfg.seed} rotating_arm={cfg.sweep.rotating_arm}",
                 ",".join(cols)]
        for k, theta in enumerate(first.angles):
            lines.append(",".join([f"{theta:g}"] + [str(int(c.counts[k])) for c, _ in curves.values()]))
        (out / "visibility.csv").write_text("\n".join(lines) + "\n")
    _emit(record, out, "visibility.json")
    return EXIT_OK


def cmd_budget(args) -> int:
    cfg = load_config(args.config)
    record = {"provenance": _provenance(cfg.hash(), cfg.seed, config_name=cfg.name),
              "budget": config_budget(cfg)}
    _emit(record, Path(args.output) if args.output else None, "budget.json")
    return EXIT_OK


def cmd_scan_wavelength(args) -> int:
    if args.config is not None:
        cfg = load_config(args.config)
        model, chash, seed = cfg.channel_scan, cfg.hash(), cfg.seed
    else:
        model = scan_model_from_dict({})
        blob = json.dumps({"channel_scan": {}}, sort_keys=True)
        chash, seed = hashlib.sha256(blob.encode()).hexdigest(), None
    lo, hi, step = args.min, args.max, args.step
    if not (1.0 <= lo <= hi <= 30.0):
        raise UsageError("detuning range must lie within 1-30 nm")
    if step <= 0:
        raise UsageError("--step must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    detunings = lo + step * np.arange(n)
    rows = scan_wavelength_channels(model, detunings)
    lines = [f"# config_hash={chash} seed={seed}",
             "detuning_nm,rate,noise_singles_cps,singles_cps,accidentals_cps,car"]
    for r in rows:
        lines.append(f"{r.detuning:g},{r.pair_rate:.6g},{r.noise_singles:.6g},{r.singles:.6g},"
                     f"{r.accidentals:.6g},{r.car:.6g}")
    csv = "\n".join(lines) + "\n"
    best = max(rows, key=lambda r: r.car)
    record = {"provenance": _provenance(chash, seed), "rows": [r.as_record() for r in rows],
              "car_argmax_nm": best.detuning}
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "channel_scan.csv").write_text(csv)
        _emit(record, out, "channel_scan.json")
    else:
        sys.stdout.write(csv)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entlink", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"entlink {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a config and write two QTAG files")
    s.add_argument("config", help="config path or preset name")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="override duration_s")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--output", default=".", help="output directory")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="count coincidences between two QTAG files")
    a.add_argument("a", help="stream a (lags are t_b - t_a)")
    a.add_argument("b")
    a.add_argument("--delay", default="auto", help="ps, or 'auto' to search")
    a.add_argument("--window", type=int, default=200, help="ps")
    a.add_argument("--offset", type=int, default=None, help="accidental window offset, ps")
    a.add_argument("--n-offsets", type=int, default=1)
    a.add_argument("--min-delay", type=int, default=DelaySearchSpec.min_delay, help="ps, for auto")
    a.add_argument("--max-delay", type=int, default=DelaySearchSpec.max_delay, help="ps, for auto")
    a.add_argument("--histogram", help="write the cross-correlation around the delay as CSV")
    a.add_argument("--half-range", type=int, default=5000)
    a.add_argument("--bin-width", type=int, default=10)
    a.add_argument("--seed", type=int, help="accepted for uniformity; analysis is deterministic")
    a.add_argument("--threads", type=int, default=1)
    a.add_argument("--output", help="also write the record into this directory")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("visibility", help="simulate two-photon interference curves and fit them")
    v.add_argument("config")
    v.add_argument("--bases", help="comma-separated subset of H,V,D,A")
    v.add_argument("--step", type=float, help="angle step in degrees; must divide 180")
    v.add_argument("--duration", type=float, help="seconds per angle")
    v.add_argument("--seed", type=int)
    v.add_argument("--threads", type=int, default=1)
    v.add_argument("--output")
    v.set_defaults(func=cmd_visibility)

    b = sub.add_parser("budget", help="loss breakdown and expected rates")
    b.add_argument("config")
    b.add_argument("--output")
    b.set_defaults(func=cmd_budget)

    w = sub.add_parser("scan-wavelength", help="pair rate, noise and CAR versus detuning")
    w.add_argument("config", nargs="?")
    w.add_argument("--min", type=float, default=1.0, help="nm")
    w.add_argument("--max", type=float, default=30.0, help="nm")
    w.add_argument("--step", type=float, default=0.5, help="nm")
    w.add_argument("--output")
    w.set_defaults(func=cmd_scan_wavelength)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if getattr(args, "threads", 1) < 1:
        _log("error: --threads must be >= 1")
        return EXIT_INVALID
    try:
        return args.func(args)
    except NoPeakError as exc:
        _log(f"error: {exc}")
        return EXIT_NEGATIVE
    except (ConfigError, TagStreamError, UsageError, AnalysisError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except ValueError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
