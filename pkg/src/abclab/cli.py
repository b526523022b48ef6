"""Command-line entry points: run, diagnose, export-orbit, glue-report, liouville.

Exit codes: 0 pass, 1 tolerance breach or certificate failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, parse_key_values
from .errors import AbcLabError, MissingStage, RangeError, UnknownCheck


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abclab",
        description="Approximation-by-conjugacy laboratory on the cylinder, "
                    "sphere and disk")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a staged induction run")
    p_run.add_argument("--config", type=Path, help="config file (key = value)")
    p_run.add_argument("--fresh", action="store_true",
                       help="ignore existing stage records")
    _add_config_flags(p_run)

    p_diag = sub.add_parser("diagnose", help="run a named diagnostic")
    p_diag.add_argument("rundir", type=Path)
    p_diag.add_argument("check", help="symplectic | conjugacy | density | "
                        "separation | nijenhuis | holoform | sigma | glue | "
                        "liouville | lift")
    p_diag.add_argument("--stage", type=int, default=None)

    p_orb = sub.add_parser("export-orbit", help="write an orbit segment")
    p_orb.add_argument("rundir", type=Path)
    p_orb.add_argument("--stage", type=int, required=True)
    p_orb.add_argument("--theta", type=float, default=0.0)
    p_orb.add_argument("--y", type=float, default=0.0)
    p_orb.add_argument("--length", type=int, required=True)
    p_orb.add_argument("--out", type=Path, required=True)

    p_glue = sub.add_parser("glue-report",
                            help="glue an entire map and report (M1)-(M4)")
    p_glue.add_argument("--config", type=Path)
    p_glue.add_argument("--out", type=Path)
    _add_config_flags(p_glue)

    p_liou = sub.add_parser("liouville",
                            help="exact Liouville chain over a run")
    p_liou.add_argument("rundir", type=Path)
    return parser


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f"cfg_{f.name}", default=None)


def _config_from_args(args) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(parse_key_values(Path(args.config).read_text()))
    for f in fields(ExperimentConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            values[f.name] = raw
    return ExperimentConfig.from_dict(values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (RangeError, UnknownCheck, MissingStage) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AbcLabError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    from .persistence import RunDirectory, export_orbit, run

    if args.command == "run":
        config = _config_from_args(args)
        t0 = time.time()

        def progress(stage):
            print(f"stage {stage.n}: alpha bits={stage.q_bits} "
                  f"orbit covering="
                  f"{stage.certificates.get('orbit_covering', float('nan')):.5f} "
                  f"conjugacy="
                  f"{stage.certificates.get('conjugacy_residual', 0.0):.2e} "
                  f"[{time.time() - t0:.1f}s]")

        manifest = run(config, resume=not args.fresh, progress=progress)
        print(f"run {manifest.status}: {len(manifest.stage_files)} records "
              f"in {config.outdir} ({time.time() - t0:.1f}s)")
        return 0

    if args.command == "diagnose":
        from .checks import check_lift, run_check

        rd = RunDirectory(args.rundir)
        config = rd.load_config()
        stage_n = args.stage if args.stage is not None else \
            max(rd.existing_stages(), default=0)
        if args.check == "lift":
            passed, report = check_lift(rd, config, stage_n)
        else:
            passed, report = run_check(rd, config, args.check, stage_n)
        lines = [f"# abclab diagnostic {args.check} stage={stage_n}",
                 f"passed = {int(passed)}"]
        for k, v in sorted(report.items()):
            val = format(v, ".17g") if isinstance(v, float) else v
            lines.append(f"{k} = {val}")
        text = "\n".join(lines) + "\n"
        out = rd.report_path(f"{args.check}_stage{stage_n}.txt")
        out.write_text(text)
        print(text, end="")
        print(f"written: {out}")
        return 0 if passed else 1

    if args.command == "export-orbit":
        path = export_orbit(args.rundir, args.stage, args.theta, args.y,
                            args.length, args.out)
        print(f"written: {path}")
        return 0

    if args.command == "glue-report":
        from .gluing import BumpProfile, default_entire_family, glue_and_report

        config = _config_from_args(args)
        beta = BumpProfile(config.bump_eta, config.bump_eps)
        fam = default_entire_family(amplitude=config.amplitude)
        _, rep = glue_and_report(fam, beta, config.glue_r,
                                 grid_n=min(config.grid_n, 64),
                                 quad_n=config.quad_n)
        d = rep.as_dict()
        passed = (rep.det_residual <= config.tol_glue_det
                  and rep.surface_contained and rep.support_fixed_bitwise
                  and rep.sigma_residual <= config.tol_sigma
                  and abs(rep.mass_integral - 2.0) <= config.tol_mass)
        lines = ["# abclab glue report", f"passed = {int(passed)}"]
        lines += [f"{k} = {format(v, '.17g') if isinstance(v, float) else v}"
                  for k, v in sorted(d.items())]
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        print(text, end="")
        return 0 if passed else 1

    if args.command == "liouville":
        from .checks import run_check

        rd = RunDirectory(args.rundir)
        config = rd.load_config()
        passed, report = run_check(rd, config, "liouville", 0)
        for k, v in sorted(report.items()):
            print(f"{k} = {v}")
        return 0 if passed else 1

    raise RangeError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
