import argparse
import logging
import os
import sys
from typing import List, Optional

from app.core.config import settings
from app.core.exceptions import LabError, UsageError
from app.schemas.system import Engine
from app.services.campaign import BACKENDS, CampaignService
from app.services.plotdata import PlotDataService
from app.utils.manifest_loader import load_manifest, validate_manifest

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class LabArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(
        prog="rslab",
        description="Rate-splitting vs NoRS massive MISO laboratory with residual hardware impairments",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="execute a manifest")
    run.add_argument("manifest")
    run.add_argument("--engines", help="comma-separated subset of mc,de")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help=f"output directory (default {settings.results_dir})")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--backend", choices=BACKENDS, default="local")

    validate = commands.add_parser("validate", help="check every configuration of a manifest")
    validate.add_argument("manifest")

    xval = commands.add_parser("xval", help="compare DE against MC on every grid point")
    xval.add_argument("manifest")
    xval.add_argument("--tol", type=float, help="tolerance in percent, overriding the manifest")
    xval.add_argument("--trials", type=int)
    xval.add_argument("--workers", type=int, default=1)
    xval.add_argument("--backend", choices=BACKENDS, default="local")
    xval.add_argument("--out", help=f"report directory (default {settings.results_dir})")

    plot = commands.add_parser("plotdata", help="emit figure-ready series from a results file")
    plot.add_argument("results")
    plot.add_argument("--figure", required=True)
    plot.add_argument("--out", help="output directory (default: the results directory)")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    update = {}
    if getattr(args, "engines", None):
        try:
            update["engines"] = [Engine(e.strip()) for e in args.engines.split(",") if e.strip()]
        except ValueError:
            raise UsageError(f"--engines must be a comma-separated subset of mc,de: {args.engines!r}")
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise UsageError("--trials must be at least 1")
        update["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        update["seed"] = args.seed
    if getattr(args, "workers", 1) < 1:
        raise UsageError("--workers must be at least 1")
    return update


def cmd_run(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    manifest = manifest.model_copy(update=_overrides(args))
    validate_manifest(manifest)
    out_path = CampaignService.default_output(manifest, args.out)
    _, failed = CampaignService.run_manifest(manifest, out_path, args.workers, args.backend)
    logger.info(f"📊 Results written to {out_path}")
    return 3 if failed else 0


def cmd_validate(args: argparse.Namespace) -> int:
    validate_manifest(load_manifest(args.manifest))
    return 0


def cmd_xval(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    manifest = manifest.model_copy(update=_overrides(args))
    validate_manifest(manifest)
    report = CampaignService.crossvalidate(manifest, args.tol, args.workers, args.backend)
    for row in report.rows:
        marker = "✅" if row.passed else "❌"
        logger.info(
            f"{marker} point {row.point} {row.strategy.value}/{row.topology.value}/{row.csit.value} "
            f"M={row.M}: deviation {row.deviation_pct:.3f}% (tol {row.tolerance_pct}%)"
        )
    out_dir = settings.get_results_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{manifest.name}_xval.json")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(report.model_dump_json(indent=2))
    return 0 if report.passed else 3


def cmd_plotdata(args: argparse.Namespace) -> int:
    out_dir = args.out or os.path.dirname(os.path.abspath(args.results))
    PlotDataService.emit_plotdata(args.results, args.figure, out_dir)
    return 0


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "xval": cmd_xval, "plotdata": cmd_plotdata}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except LabError as e:
        logger.error(f"❌ {type(e).__name__}: {e.detail}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
