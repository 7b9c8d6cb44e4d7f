"""Command-line entry point.

Subcommands: generate, evolve, diagnose, fit-decay, harnack-check, replay.
Exit codes: 0 success, 2 configuration error, 3 numerical abort (the evolved
field left the operating regime), 4 I/O or snapshot-format error.  Failures
print a single machine-readable line to stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ExperimentConfig
from .errors import BlowUpError, ConfigError, SnapshotFormatError
from .grid import tensor_abs
from .runner import diagnose_snapshots, fit_decay_csv, generate_artifacts, run_experiment
from .snapshot import read_snapshot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deturck",
        description="Evolve near-flat metric perturbations on a periodic box "
        "and verify their decay and curvature estimates.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress summary output")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, snapshots=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None, help="override init.seed")

    common(sub.add_parser("generate", help="produce initial data and provenance"))
    common(sub.add_parser("evolve", help="run the flow with diagnostics"))
    diag = sub.add_parser("diagnose", help="recompute diagnostics from stored snapshots")
    common(diag)
    diag.add_argument("--snapshots", default=None, help="snapshot directory (default OUT/snapshots)")
    fit = sub.add_parser("fit-decay", help="fit the sup-norm decay exponent from a series CSV")
    common(fit)
    fit.add_argument("--series", default=None, help="series CSV (default OUT/series.csv)")
    common(sub.add_parser("harnack-check", help="run the flow plus kernel probes"))
    rep = sub.add_parser("replay", help="validate and describe a snapshot file")
    rep.add_argument("snapshot", help="path to an RDTF snapshot")
    return parser


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["init.seed"] = str(args.seed)
    if args.out is not None:
        out["output.dir"] = args.out
    return out


def _load_config(args) -> ExperimentConfig:
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SnapshotFormatError(f"cannot read config: {exc}") from exc
    return ExperimentConfig.from_text(text, overrides=_overrides(args))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            field, t = read_snapshot(args.snapshot)
            g = field.grid
            print(
                f"snapshot t={t!r} n={g.n} resolution={g.resolution} "
                f"box_length={g.box_length!r} sup_h={float(np.max(tensor_abs(field)))!r}"
            )
            return EXIT_OK

        cfg = _load_config(args)
        out_dir = cfg.out_dir

        if args.command == "generate":
            generate_artifacts(cfg, out_dir)
            if not args.quiet:
                print(f"initial data written to {out_dir}")
            return EXIT_OK
        if args.command == "evolve":
            run_experiment(cfg, out_dir, quiet=args.quiet)
            return EXIT_OK
        if args.command == "diagnose":
            snap_dir = args.snapshots or f"{out_dir}/snapshots"
            diagnose_snapshots(cfg, snap_dir, f"{out_dir}/series.csv")
            if not args.quiet:
                print(f"series recomputed into {out_dir}/series.csv")
            return EXIT_OK
        if args.command == "fit-decay":
            series = args.series or f"{out_dir}/series.csv"
            try:
                fit = fit_decay_csv(series, cfg.fit_window)
            except ValueError as exc:
                raise ConfigError(f"decay fit: {exc}") from exc
            print(f"decay_exponent = {fit['exponent']!r}")
            print(f"decay_r2 = {fit['r2']!r}")
            return EXIT_OK
        if args.command == "harnack-check":
            cfg.harnack_enabled = True
            if cfg.harnack_probes <= 0:
                cfg.harnack_probes = 20
            run_experiment(cfg, out_dir, quiet=args.quiet)
            return EXIT_OK
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"ERROR code={EXIT_CONFIG} kind=config detail={exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"ERROR code={EXIT_CONFIG} kind=validation detail={exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"ERROR code={EXIT_NUMERICAL} kind=blowup detail={exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SnapshotFormatError as exc:
        print(f"ERROR code={EXIT_IO} kind=format detail={exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"ERROR code={EXIT_IO} kind=io detail={exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
