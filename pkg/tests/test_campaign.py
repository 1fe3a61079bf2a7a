import pandas as pd
import pytest

from app.core.exceptions import UsageError
from app.schemas.manifest import RESULT_COLUMNS
from app.services.campaign import CampaignService
from app.services.plotdata import PlotDataService
from app.utils.manifest_loader import parse_manifest
from app.utils.results_io import SCHEMA_HEADER, read_results


def _manifest(**extra):
    document = {
        "name": "tiny",
        "engines": ["de", "mc"],
        "trials": 3,
        "seed": 5,
        "system": {
            "M": 8,
            "K": 2,
            "T": 10,
            "tau": "K",
            "csit": ["perfect", "imperfect"],
            "strategy": ["nors", "rs"],
        },
        "impairments": {"delta": 1e-4, "topology": ["clo", "slo"]},
        "sweep": [{"name": "rho", "values": ["0dB", "10dB"]}],
    }
    document.update(extra)
    return parse_manifest(document)


def test_run_writes_every_combination(tmp_path):
    path = tmp_path / "tiny.tsv"
    table, failed = CampaignService.run_manifest(_manifest(), str(path))
    assert failed == 0
    # 2 points x 2 csit x 2 topologies x 2 engines x 2 strategies
    assert len(table) == 32
    assert set(table["status"]) == {"ok"}
    assert list(table.columns) == list(RESULT_COLUMNS)

    stored = read_results(str(path))
    pd.testing.assert_frame_equal(stored, table.astype(str), check_dtype=False)
    nors = stored[stored["strategy"] == "nors"]
    assert set(nors["common_rate"]) == {"0"}


def test_results_file_header(tmp_path):
    path = tmp_path / "tiny.tsv"
    CampaignService.run_manifest(_manifest(engines=["de"]), str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == SCHEMA_HEADER == "# rslab-results schema-version=1"
    assert lines[1] == "\t".join(RESULT_COLUMNS)


def test_rerun_is_byte_identical(tmp_path):
    first, second = tmp_path / "a.tsv", tmp_path / "b.tsv"
    CampaignService.run_manifest(_manifest(), str(first))
    CampaignService.run_manifest(_manifest(), str(second))
    assert first.read_bytes() == second.read_bytes()


def test_worker_count_does_not_change_results(tmp_path):
    serial, parallel = tmp_path / "serial.tsv", tmp_path / "parallel.tsv"
    CampaignService.run_manifest(_manifest(), str(serial), workers=1)
    CampaignService.run_manifest(_manifest(), str(parallel), workers=2)
    assert serial.read_bytes() == parallel.read_bytes()


def test_empty_sweep_gives_a_single_point():
    table, _ = CampaignService.run_manifest(_manifest(sweep=[], engines=["de"]))
    assert set(table["point"]) == {"0"}
    assert len(table) == 2 * 2 * 2
    assert set(table["axis1"]) == {""}


def test_invalid_points_fail_without_stopping_the_run():
    manifest = _manifest(sweep=[{"name": "K", "values": [2, 20]}], engines=["de"])
    table, failed = CampaignService.run_manifest(manifest)
    assert failed == 2 * 2 * 2
    bad = table[table["status"] == "failed"]
    assert set(bad["value1"]) == {"20"}
    assert all("K <= M" in error for error in bad["error"])
    assert set(table[table["value1"] == "2"]["status"]) == {"ok"}


def test_unknown_backend_is_a_usage_error():
    with pytest.raises(UsageError):
        CampaignService.run_manifest(_manifest(), backend="threads")


def _worker_outcomes(failing):
    def outcomes(payloads):
        results = []
        for payload in payloads:
            if payload["index"] in failing:
                results.append({"status": "failed", "index": payload["index"], "rows": [], "error": "worker lost"})
            else:
                rows = CampaignService.execute_grid_point(payload)
                results.append({"status": "completed", "index": payload["index"], "rows": rows})
        return results

    return staticmethod(outcomes)


def test_exhausted_worker_retries_fail_every_combination(monkeypatch):
    monkeypatch.setattr(CampaignService, "_celery_outcomes", _worker_outcomes({0}))
    table, failed = CampaignService.run_manifest(_manifest(), backend="celery")
    assert failed == 16
    assert len(table) == 32
    lost = table[table["point"] == "0"]
    assert set(lost["status"]) == {"failed"}
    assert all("worker lost" in error for error in lost["error"])
    assert set(lost["value1"]) == {"0dB"}
    assert set(table[table["point"] == "1"]["status"]) == {"ok"}


def test_crossvalidation_fails_when_a_worker_gives_up(monkeypatch):
    monkeypatch.setattr(CampaignService, "_celery_outcomes", _worker_outcomes({0, 1}))
    report = CampaignService.crossvalidate(_manifest(), backend="celery")
    assert not report.passed
    assert len(report.rows) == 16
    assert all(row.deviation_pct == float("inf") for row in report.rows)


def test_plotdata_series(tmp_path):
    path = tmp_path / "tiny.tsv"
    CampaignService.run_manifest(_manifest(), str(path))
    paths = PlotDataService.emit_plotdata(str(path), "fig1", str(tmp_path / "plots"))
    assert sorted(p.rsplit("/", 1)[-1] for p in paths) == ["fig1_de.tsv", "fig1_mc.tsv"]

    series = pd.read_csv(tmp_path / "plots" / "fig1_de.tsv", sep="\t")
    assert list(series.columns) == ["x", "series", "y", "ci"]
    assert series["series"].nunique() == 8
    assert sorted(series["x"].unique()) == [0.0, 10.0]

    again = PlotDataService.emit_plotdata(str(path), "fig1", str(tmp_path / "again"))
    assert [open(p).read() for p in paths] == [open(p).read() for p in again]


def test_plotdata_rejects_unknown_figure(tmp_path):
    path = tmp_path / "tiny.tsv"
    CampaignService.run_manifest(_manifest(engines=["de"]), str(path))
    with pytest.raises(UsageError):
        PlotDataService.emit_plotdata(str(path), "fig42", str(tmp_path))


def test_results_with_another_schema_are_refused(tmp_path):
    path = tmp_path / "old.tsv"
    path.write_text("# rslab-results schema-version=0\npoint\n")
    with pytest.raises(UsageError):
        read_results(str(path))


@pytest.mark.slow
def test_crossvalidation_passes_on_ideal_hardware():
    manifest = parse_manifest(
        {
            "name": "ideal",
            "trials": 300,
            "system": {"M": 100, "K": 2, "T": 10, "tau": 2, "rho": "10dB", "csit": "perfect", "strategy": "nors"},
            "impairments": {"kappa2": 0.0},
        }
    )
    report = CampaignService.crossvalidate(manifest, tol_pct=2.0)
    assert report.passed
    assert len(report.rows) == 1
    assert report.rows[0].deviation_pct < 2.0
    assert list(report.max_deviation_by_curve) == ["nors/clo/perfect"]


@pytest.mark.slow
def test_crossvalidation_catches_a_corrupted_engine():
    manifest = parse_manifest(
        {
            "name": "corrupted",
            "trials": 50,
            "engine": {"qjk_literal": True},
            "system": {"M": 64, "K": 2, "T": 10, "tau": 2, "rho": "20dB", "strategy": "nors"},
            "impairments": {"delta": 1e-4},
        }
    )
    report = CampaignService.crossvalidate(manifest)
    assert not report.passed
    row = report.rows[0]
    assert row.deviation_pct > row.tolerance_pct
