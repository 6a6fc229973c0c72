"""Command-line front end: ``vibroimpact run <config|scenario>`` and ``vibroimpact list``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from scipy.io import wavfile

from . import __version__
from .errors import NonConvergence
from .scenarios import SCENARIOS, ConfigError, apply_override, resolve_config, run_scenario, newton_stats

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4

log = logging.getLogger("vibroimpact")


def list_scenarios():
    """Sorted ``(name, description)`` pairs of the built-in scenarios."""
    return [(name, SCENARIOS[name].description) for name in sorted(SCENARIOS)]


def load_config(source: str) -> dict:
    """Read a YAML config file, or build one from a built-in scenario name."""
    if source in SCENARIOS:
        return {"scenario": source}
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"{source!r} is neither a config file nor a scenario; "
                          f"valid names: {', '.join(sorted(SCENARIOS))}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    return raw if raw is not None else {}


def write_csv(path: Path, columns, data):
    np.savetxt(path, np.atleast_2d(data), delimiter=",", header=",".join(columns),
               comments="", fmt="%.17g")


def write_wav(path: Path, x, sample_rate):
    """Peak-normalised float32 WAV; returns the gain applied."""
    x = np.asarray(x, dtype=float)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    gain = 1.0 / peak if peak > 0 else 1.0
    wavfile.write(path, sample_rate, (x * gain).astype(np.float32))
    return gain


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def execute(cfg: dict, out_dir: Path) -> dict:
    """Run a resolved config and write its artifacts; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    t0 = time.perf_counter()
    result = run_scenario(cfg)
    wall = time.perf_counter() - t0
    files = ["config.yaml"]
    enabled = cfg["outputs"]
    for name, table in result.tables.items():
        if name in ("trajectory", "displacement") and not enabled.get("trajectory", True):
            continue
        if name in ("energy", "energy_error") and not enabled.get("energy", True):
            continue
        fname = f"{name}.csv"
        write_csv(out_dir / fname, table.columns, table.data)
        files.append(fname)
    gains = {}
    for name, audio in result.audio.items():
        fname = f"{name}.wav"
        gains[name] = write_wav(out_dir / fname, audio.signal, audio.sample_rate)
        files.append(fname)
    manifest = {
        "version": __version__,
        "scenario": cfg["scenario"],
        "config": cfg,
        "derived": result.derived,
        "newton": newton_stats(result.newton if result.newton is not None else []),
        "max_abs_energy_error": result.energy_error_max,
        "summary": result.summary,
        "audio_gain": gains,
        "wall_time_s": wall,
        "files": files + ["manifest.json"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True))
    return manifest


def build_parser():
    parser = argparse.ArgumentParser(prog="vibroimpact",
                                     description="Energy-conserving collision simulations.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario from a config file or built-in name")
    run.add_argument("config", help="YAML config path or built-in scenario name")
    run.add_argument("--out-dir", default=None, help="output directory (default: out/<scenario>)")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config entry, e.g. params.k_c=1e9 (repeatable)")
    run.add_argument("--oversample", type=int, default=None, metavar="FACTOR",
                     help="multiply the sample rate (and dx where configured)")
    run.add_argument("--quiet", action="store_true", help="suppress progress output")

    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.add_argument("--json", action="store_true", help="machine-readable output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        items = list_scenarios()
        if args.json:
            print(json.dumps([{"name": n, "description": d} for n, d in items], indent=2))
        else:
            width = max(len(n) for n, _ in items)
            for n, d in items:
                print(f"{n:<{width}}  {d}")
        return EXIT_OK

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(load_config(args.config))
        for assignment in args.overrides:
            apply_override(cfg, assignment)
        if args.oversample is not None:
            cfg["oversample"] = args.oversample
        cfg = resolve_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(args.out_dir) if args.out_dir else Path("out") / cfg["scenario"]
    log.info("running %s -> %s", cfg["scenario"], out_dir)
    try:
        manifest = execute(cfg, out_dir)
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ValueError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        print(json.dumps({"out_dir": str(out_dir), "wall_time_s": manifest["wall_time_s"],
                          "max_abs_energy_error": manifest["max_abs_energy_error"]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
