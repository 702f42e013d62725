"""Command-line driver.

``probode run <config.json | preset> [--seed N] [--out DIR]``
``probode presets``
``probode validate <config.json | preset>``

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from probode import __version__, _io
from probode.experiments import NumericalFailure, RunConfig, run_experiment
from probode.fem1d import FemSolveError
from probode.perturbation import NoiseStateError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(Exception):
    pass


def _format_validation(err):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "\n".join(lines)


def load_config(source):
    """Resolve a preset name or a JSON file into a validated :class:`RunConfig`."""
    from probode.presets import PRESETS

    path = Path(source)
    if not path.exists():
        if source in PRESETS:
            return PRESETS[source].config
        raise ConfigError(f"{source}: no such file or preset (see 'probode presets')")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{source}: invalid configuration\n{_format_validation(exc)}") from None


def with_seed(config, seed):
    if seed is None:
        return config
    if seed < 0:
        raise ConfigError("--seed must be non-negative")
    exp = config.experiment.model_copy(update={"seed": seed})
    return RunConfig.model_validate({"name": config.name, "experiment": exp.model_dump()})


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def execute(config, out_dir):
    """Run ``config`` into ``out_dir`` and write ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    files, summary = run_experiment(config.experiment, out)
    if summary:
        _io.write_json(out / "summary.json", summary)
        files.append("summary.json")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "name": config.name,
        "seed": config.experiment.seed,
        "config": config.model_dump(mode="json"),
        "files": [{"path": f, "sha256": _sha256(out / f)} for f in files],
    }
    _io.write_json(out / "manifest.json", manifest)
    return manifest


def cmd_presets(args):
    from probode.presets import PRESETS

    width = max(len(n) for n in PRESETS)
    for name, preset in PRESETS.items():
        print(f"{name.ljust(width)}  {preset.description}  [{preset.source}]")
    return EXIT_OK


def cmd_validate(args):
    config = with_seed(load_config(args.config), args.seed)
    print(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args):
    config = with_seed(load_config(args.config), args.seed)
    out = Path(args.out) if args.out else Path("results") / config.name
    try:
        manifest = execute(config, out)
    except (NumericalFailure, FemSolveError, NoiseStateError, np.linalg.LinAlgError, FloatingPointError) as exc:
        seed = config.experiment.seed
        _io.write_json(out / "failure.json", {"seed": seed, "error": str(exc), "name": config.name})
        print(f"numerical failure (seed={seed}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {len(manifest['files'])} files to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="probode", description="Randomized ODE/PDE solver experiments.")
    parser.add_argument("--version", action="version", version=f"probode {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configuration file or a named preset")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory (default results/<name>)")
    p_run.set_defaults(func=cmd_run)
    p_list = sub.add_parser("presets", help="list the named presets")
    p_list.set_defaults(func=cmd_presets)
    p_val = sub.add_parser("validate", help="check a configuration and print it fully resolved")
    p_val.add_argument("config")
    p_val.add_argument("--seed", type=int, default=None)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
