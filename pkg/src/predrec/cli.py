"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys

from .core import DataError, DegeneracyError
from .experiments import ConfigError, load_config, run, synthetic_longleaf, write_longleaf

EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERACY = 2, 3, 4

_COMMANDS = {
    "example2": "example2-sphere",
    "example3": "example3-5dim",
    "convergence": "convergence-study",
    "markedpp": "marked-pp",
}


def _common(p):
    p.add_argument("--config", help="flat YAML or JSON file of experiment settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory for manifest, results and CSV tables")
    p.add_argument("--T", type=int, help="particle count")
    p.add_argument("--n", type=int, help="sample size (simulated experiments)")
    p.add_argument("--n-seeds", type=int, dest="n_seeds")
    p.add_argument("--n-perms", type=int, dest="n_perms")
    p.add_argument("--gamma", type=float)
    p.add_argument("--rounds", type=int, help="refresh rounds")
    p.add_argument("--refresh", action=argparse.BooleanOptionalAction, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="predrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the experiment named in --config")
    _common(p)
    p.add_argument("--variant", choices=("full", "reduced", "both"))
    p.add_argument("--data", dest="data_path")

    p = sub.add_parser("example1", help="Gaussian location mixtures, ESS and KL table")
    _common(p)
    p.add_argument("--d", type=int, choices=(1, 2), default=1)

    for name, help_text in (("example2", "angular Gaussian mixtures on the sphere"),
                            ("example3", "5-dim bivariate normal mixing with refresh"),
                            ("convergence", "L1 of particle vs grid mixing density along T")):
        _common(sub.add_parser(name, help=help_text))

    p = sub.add_parser("markedpp", help="marked point process fit to a longleaf-format CSV")
    _common(p)
    p.add_argument("--data", dest="data_path", help="CSV with header x,y,diameter")
    p.add_argument("--synthetic", action="store_true", default=None,
                   help="use the built-in synthetic stand-in data")
    p.add_argument("--variant", choices=("full", "reduced", "both"))

    p = sub.add_parser("synth-longleaf", help="write a synthetic longleaf-format CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args):
    if args.command == "fit" and args.config is None:
        raise ConfigError("fit needs --config")
    keys = ("seed", "out", "T", "n", "n_seeds", "n_perms", "gamma", "rounds", "refresh",
            "variant", "data_path", "synthetic")
    overrides = {k: getattr(args, k, None) for k in keys}
    if args.command == "example1":
        overrides["experiment"] = f"example1-d{args.d}"
    elif args.command in _COMMANDS:
        overrides["experiment"] = _COMMANDS[args.command]
    return load_config(args.config, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-longleaf":
            write_longleaf(args.out, synthetic_longleaf(args.seed))
            return 0
        config = _config_from_args(args)
        results = run(config)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DegeneracyError as err:
        print(f"degenerate run: {err}", file=sys.stderr)
        print("hint: rerun with --refresh, a larger --T, or a wider initial guess", file=sys.stderr)
        return EXIT_DEGENERACY
    headline = {k: v for k, v in results.items() if not isinstance(v, (list, dict))}
    print(json.dumps(headline, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
