"""Command line entry point.

    flatprior run --preset sparse --mode flat --n-side 64 --seed 0 --iters 60 --out runs/sparse
    flatprior run --manifest runs/sparse/manifest.json --out runs/again
    flatprior check

Exit codes: 0 success, 1 usage or domain error, 2 numerical contract
violation (including a failed self-check).
"""

import argparse
import sys
from dataclasses import replace

from .errors import DomainError, NumericalContractError
from .experiment import MODES, PRESETS, ExperimentConfig, load_manifest, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _schedule(text):
    try:
        nd, nf = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("schedule must look like D,F with two integers")
    return nd, nf


def build_parser():
    parser = _Parser(prog="flatprior", description="GP inference with an unknown power spectrum in deep and flat coordinates.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="generate a synthetic problem and run inference")
    run.add_argument("--manifest", help="resolved config from an earlier run; other options override it")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--n-side", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--iters", type=int, help="outer iterations")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--coverage", type=float, help="fraction of observed pixels (overrides the preset)")
    run.add_argument("--noise", type=float)
    run.add_argument("--cg-tol", type=float)
    run.add_argument("--samples", type=int, help="antithetic sample pairs per iteration")
    run.add_argument("--schedule", type=_schedule, help="alternating schedule D,F")
    run.add_argument("--quiet", action="store_true")

    sub.add_parser("check", help="run the fast oracle checks")
    return parser


_OVERRIDES = {
    "mode": "mode", "n_side": "n_side", "seed": "seed", "iters": "outer_iterations",
    "coverage": "coverage", "noise": "noise", "cg_tol": "cg_tol", "samples": "samples",
    "schedule": "schedule",
}


def resolve_config(args):
    if args.manifest:
        cfg = load_manifest(args.manifest)
        if args.preset:
            cfg = replace(cfg, preset=args.preset, coverage=PRESETS[args.preset])
    elif args.preset:
        cfg = ExperimentConfig.from_preset(args.preset)
    else:
        cfg = ExperimentConfig()
    changes = {field: getattr(args, opt) for opt, field in _OVERRIDES.items() if getattr(args, opt) is not None}
    return replace(cfg, **changes) if changes else cfg


def _run(args):
    cfg = resolve_config(args)
    result = run_experiment(cfg, args.out)
    if not args.quiet:
        print(f"{cfg.mode}: {len(result.records)} iterations, final eps {result.final_eps:.6g}, outputs in {args.out}")
    return EXIT_OK


def _check(args):
    from .checks import run_checks

    return EXIT_OK if run_checks() else EXIT_NUMERICAL


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        return _check(args)
    except NumericalContractError as exc:
        print(f"numerical contract violation: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
