import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.exceptions import EngineError, LabError, UsageError
from app.schemas.manifest import RESULT_COLUMNS, Manifest, ResultRow, XvalReport, XvalRow
from app.schemas.system import Engine, McRates, RateReport, Strategy
from app.services.channel_model import ChannelModel
from app.services.link_sim import LinkSimulator
from app.services.rmt_engine import RmtEngine
from app.services.validation import ConfigValidator
from app.utils.results_io import ResultsWriter

logger = logging.getLogger(__name__)

BACKENDS = ("local", "celery")


def _point_payload(manifest: Manifest, index: int, point: Tuple[int, ...]) -> Dict[str, Any]:
    return {"manifest": manifest.model_dump(mode="json"), "index": index, "point": list(point)}


class CampaignService:
    @staticmethod
    def execute_grid_point(payload: Dict[str, Any]) -> List[Dict[str, Any]]:
        """Run every (csit, topology, engine, strategy) combination of one grid point.

        Takes and returns plain JSON so the same function serves in-process calls,
        process pools and Celery workers.
        """
        manifest = Manifest.model_validate(payload["manifest"])
        index = int(payload["index"])
        point = tuple(payload["point"])
        axis_fields = CampaignService._axis_fields(manifest, point)

        rows: List[Dict[str, Any]] = []
        for csit in manifest.csit:
            for topology in manifest.topologies:
                config, imp = manifest.point_configs(point, csit, topology)
                base = dict(point=index, csit=csit, topology=topology, K=config.K, **axis_fields)
                try:
                    ConfigValidator.validate(config, imp)
                    corr = ChannelModel.build_correlation(config, np.random.default_rng([config.seed, 0]))
                except LabError as e:
                    for engine in manifest.engines:
                        rows.extend(CampaignService._failed_rows(manifest, base, engine, e))
                    continue

                for engine in manifest.engines:
                    try:
                        rows.extend(CampaignService._engine_rows(manifest, base, engine, config, imp, corr))
                    except LabError as e:
                        logger.error(f"❌ Point {index} {csit.value}/{topology.value}/{engine.value}: {e.detail}")
                        rows.extend(CampaignService._failed_rows(manifest, base, engine, e))
        return [row.model_dump(mode="json") for row in rows]

    @staticmethod
    def _axis_fields(manifest: Manifest, point: Tuple[int, ...]) -> Dict[str, str]:
        labels = manifest.point_labels(point) + [("", "")] * (2 - len(manifest.axes))
        return {
            "axis1": labels[0][0],
            "value1": labels[0][1],
            "axis2": labels[1][0],
            "value2": labels[1][1],
        }

    @staticmethod
    def _engine_rows(manifest, base, engine, config, imp, corr) -> List[ResultRow]:
        if engine == Engine.DE:
            solution = RmtEngine.de_rates(config, imp, manifest.options, corr)
            reports = {Strategy.NORS: solution.nors_report, Strategy.RS: solution.rs_report}
            diagnostics = {
                "iterations": solution.stats.iterations,
                "residual": solution.stats.residual,
                "delta_r": solution.delta_r,
            }
        else:
            reports = LinkSimulator.simulate(config, imp, manifest.trials, manifest.options, corr)
            rs, nors = reports[Strategy.RS], reports[Strategy.NORS]
            diagnostics = {
                "delta_r": rs.common_rate
                + sum(p - q for p, q in zip(rs.per_user_private_rates, nors.per_user_private_rates))
            }

        rows = []
        for strategy in manifest.strategies:
            report: RateReport = reports[strategy]
            rows.append(
                ResultRow(
                    **base,
                    strategy=strategy,
                    engine=engine,
                    sum_rate=report.sum_rate,
                    common_rate=report.common_rate,
                    private_rates=report.per_user_private_rates,
                    ci=report.ci_half_width,
                    t=report.t,
                    **diagnostics,
                )
            )
        return rows

    @staticmethod
    def _failed_rows(manifest, base, engine, error: LabError) -> List[ResultRow]:
        return [
            ResultRow(**base, strategy=strategy, engine=engine, status="failed", error=error.detail)
            for strategy in manifest.strategies
        ]

    @staticmethod
    def outcome_rows(payload: Dict[str, Any], outcome: Dict[str, Any]) -> List[Dict[str, Any]]:
        """Rows of a worker outcome; a point whose task gave up fails every combination."""
        if outcome.get("status") == "completed":
            return outcome["rows"]
        manifest = Manifest.model_validate(payload["manifest"])
        index = int(payload["index"])
        point = tuple(payload["point"])
        error = EngineError(f"worker failed: {outcome.get('error', 'unknown error')}")
        logger.error(f"❌ Point {index}: {error.detail}")
        axis_fields = CampaignService._axis_fields(manifest, point)
        rows: List[ResultRow] = []
        for csit in manifest.csit:
            for topology in manifest.topologies:
                config, _ = manifest.point_configs(point, csit, topology)
                base = dict(point=index, csit=csit, topology=topology, K=config.K, **axis_fields)
                for engine in manifest.engines:
                    rows.extend(CampaignService._failed_rows(manifest, base, engine, error))
        return [row.model_dump(mode="json") for row in rows]

    @staticmethod
    def _celery_outcomes(payloads: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
        from celery import group

        from app.tasks.campaign import run_grid_point

        return group(run_grid_point.s(payload) for payload in payloads).apply_async().get()

    @staticmethod
    def _iter_points(manifest: Manifest, workers: int, backend: str) -> Iterator[List[Dict[str, Any]]]:
        """Yield each grid point's rows in grid order, whatever the backend."""
        payloads = [_point_payload(manifest, i, point) for i, point in enumerate(manifest.grid())]
        if backend == "celery":
            outcomes = CampaignService._celery_outcomes(payloads)
            for payload, outcome in zip(payloads, outcomes):
                yield CampaignService.outcome_rows(payload, outcome)
        elif workers <= 1:
            for payload in payloads:
                yield CampaignService.execute_grid_point(payload)
        else:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                yield from executor.map(CampaignService.execute_grid_point, payloads)

    @staticmethod
    def run_manifest(
        manifest: Manifest,
        out_path: Optional[str] = None,
        workers: int = 1,
        backend: str = "local",
    ) -> Tuple[pd.DataFrame, int]:
        """Execute the whole grid; returns the result table and the number of failed rows."""
        if backend not in BACKENDS:
            raise UsageError(f"unknown backend {backend!r}, expected one of {BACKENDS}")
        writer = ResultsWriter(out_path) if out_path else None
        total_points = len(manifest.grid())
        logger.info(f"📊 Running {manifest.name}: {total_points} grid points, engines {[e.value for e in manifest.engines]}")

        records: List[Dict[str, str]] = []
        failed = 0
        for index, rows in enumerate(CampaignService._iter_points(manifest, workers, backend)):
            point_records = [ResultRow.model_validate(row).to_record() for row in rows]
            failed += sum(1 for row in rows if row["status"] != "ok")
            if writer is not None:
                writer.append(point_records)
            records.extend(point_records)
            logger.info(f"✅ Grid point {index + 1}/{total_points} done")

        if failed:
            logger.error(f"❌ {failed} result rows failed")
        return pd.DataFrame(records, columns=list(RESULT_COLUMNS)), failed

    @staticmethod
    def default_output(manifest: Manifest, out_dir: Optional[str] = None) -> str:
        filename = manifest.output or f"{manifest.name}.tsv"
        return os.path.join(settings.get_results_dir(out_dir), filename)

    @staticmethod
    def crossvalidate(
        manifest: Manifest,
        tol_pct: Optional[float] = None,
        workers: int = 1,
        backend: str = "local",
    ) -> XvalReport:
        """Run both engines on every point and compare per-user rates.

        MC rates come from trial-averaged SINR terms, the quantity the DE engine
        approximates, unless the manifest names an MC rate mode itself.
        """
        options = manifest.options
        if "mc_rates" not in options.model_fields_set:
            options = options.model_copy(update={"mc_rates": McRates.AVERAGED_SINR})
        both = manifest.model_copy(update={"engines": [Engine.DE, Engine.MC], "options": options})
        xval_rows: List[XvalRow] = []
        for rows in CampaignService._iter_points(both, workers, backend):
            parsed = [ResultRow.model_validate(row) for row in rows]
            for de_row in (r for r in parsed if r.engine == Engine.DE):
                mc_row = next(
                    r
                    for r in parsed
                    if r.engine == Engine.MC
                    and (r.strategy, r.csit, r.topology) == (de_row.strategy, de_row.csit, de_row.topology)
                )
                xval_rows.append(CampaignService._compare(both, de_row, mc_row, tol_pct))

        curves: Dict[str, float] = {}
        for row in xval_rows:
            key = f"{row.strategy.value}/{row.topology.value}/{row.csit.value}"
            curves[key] = max(curves.get(key, 0.0), row.deviation_pct)
        passed = all(row.passed for row in xval_rows)
        logger.info(f"{'✅' if passed else '❌'} Cross-validation {manifest.name}: max deviation per curve {curves}")
        return XvalReport(rows=xval_rows, max_deviation_by_curve=curves, passed=passed)

    @staticmethod
    def _compare(manifest: Manifest, de_row: ResultRow, mc_row: ResultRow, tol_pct: Optional[float]) -> XvalRow:
        config, _ = manifest.point_configs(manifest.grid()[de_row.point], de_row.csit, de_row.topology)
        tolerance = tol_pct if tol_pct is not None else manifest.xval_tolerance(config.M)
        if de_row.status != "ok" or mc_row.status != "ok":
            deviation = float("inf")
        else:
            de_rates = np.asarray(de_row.private_rates)
            mc_rates = np.asarray(mc_row.private_rates)
            deviation = float(np.max(np.abs(de_rates - mc_rates) / np.maximum(np.abs(mc_rates), 1e-12))) * 100.0
        return XvalRow(
            point=de_row.point,
            value1=de_row.value1,
            value2=de_row.value2,
            strategy=de_row.strategy,
            csit=de_row.csit,
            topology=de_row.topology,
            M=config.M,
            de_rates=de_row.private_rates,
            mc_rates=mc_row.private_rates,
            deviation_pct=deviation,
            tolerance_pct=tolerance,
            passed=deviation <= tolerance,
        )
