"""Command line entry point: ``irsrsma solve | sweep | check``."""
import argparse
import json
import logging
import sys
from dataclasses import replace

from .baselines import SchemeId, scheme_channels, solve_scheme
from .channels import assemble_channels, realization_rng
from .harness import ConfigError, ExperimentConfig, export, load_default_config, run_experiment
from .rates import rate_report

logger = logging.getLogger("irsrsma")


def _load_config(path):
    return ExperimentConfig.load(path) if path else load_default_config()


def cmd_solve(args):
    cfg = _load_config(args.config)
    scheme = SchemeId.parse(args.scheme or cfg.schemes[0].value)
    value = cfg.sweep_values[0]
    geometry = cfg.point_geometry(value)
    ao = cfg.point_ao(value)
    channels = assemble_channels(geometry, cfg.fading, realization_rng(args.seed, 0), cfg.noise_dbm)
    design, trace = solve_scheme(scheme, channels, ao)
    report = rate_report(design, scheme_channels(scheme, channels))
    report.r_c_sec = design.r_c_sec
    out = {
        "scheme": scheme.value,
        "seed": args.seed,
        cfg.sweep_variable: value,
        "status": trace.status,
        "iterations": trace.iterations,
        "rate_report": report.to_dict(),
        "power_split": design.power_split(),
    }
    print(json.dumps(out, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(trace.to_jsonl())
        print(f"trace written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(trace.to_jsonl())
    return 0 if trace.status != "error" else 1


def cmd_sweep(args):
    cfg = _load_config(args.config)
    overrides = {}
    if args.realizations is not None:
        overrides["realizations"] = args.realizations
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.scheme:
        overrides["schemes"] = (args.scheme,)
    if args.workers is not None:
        overrides["workers"] = args.workers
    out_dir = args.out or cfg.output_path or "results"
    overrides["output_path"] = out_dir
    cfg = replace(cfg, **overrides)

    def progress(recs):
        for r in recs:
            logger.info("%s %s=%g #%d min_sr=%s status=%s", r["scheme"], r["variable"], r["value"],
                        r["realization"], r.get("min_sr"), r["status"])

    result = run_experiment(cfg, progress=progress)
    path = f"{out_dir}/results.{args.format}"
    for p in export(result, path, args.format):
        print(p)
    if result.failed:
        print(f"{len(result.failed)} cells failed", file=sys.stderr)
    return 0


def cmd_check(args):
    from .checks import rows_to_csv, run_checks

    seeds = tuple(range(args.seed, args.seed + (args.realizations or 3)))
    rows = run_checks(seeds=seeds)
    text = rows_to_csv(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAILED {r.check} {r.instance}: {r.value:.3e} > {r.tolerance:.1e}", file=sys.stderr)
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="irsrsma", description="Secure RSMA beamforming with an IRS.")
    parser.add_argument("--verbose", "-v", action="count", default=0)
    # lets --verbose also follow the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    schemes = [s.value for s in SchemeId]

    p = sub.add_parser("solve", parents=[common], help="solve one channel realization and print the rates and trace")
    p.add_argument("--config", help="experiment JSON (default: bundled scenario)")
    p.add_argument("--scheme", choices=schemes)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the trace as JSON lines here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", parents=[common], help="run an experiment config")
    p.add_argument("--config", help="experiment JSON (default: bundled scenario)")
    p.add_argument("--scheme", choices=schemes, help="run only this scheme")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--realizations", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (records are resumable)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", parents=[common], help="run the invariant and oracle suite on small instances")
    p.add_argument("--seed", type=int, default=0, help="first instance seed")
    p.add_argument("--realizations", type=int, help="number of instances (default 3)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
