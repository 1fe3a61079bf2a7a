import logging
import os
from typing import Dict, List

import pandas as pd

from app.core.exceptions import UsageError
from app.schemas.manifest import FigureSpec
from app.utils.results_io import SEPARATOR, read_results
from app.utils.units import label_to_number

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ["x", "series", "y", "ci"]

FIGURES: Dict[str, FigureSpec] = {
    spec.figure_id: spec
    for spec in (
        FigureSpec(figure_id="fig1", x_axis="value1", series_keys=("strategy", "topology", "csit"), expected_series=8),
        FigureSpec(figure_id="fig2", x_axis="value1", series_keys=("strategy", "topology", "csit"), expected_series=8),
        FigureSpec(figure_id="fig3", x_axis="value1", series_keys=("strategy", "topology", "csit"), expected_series=8),
        FigureSpec(figure_id="fig4", x_axis="value1", series_keys=("strategy", "topology", "value2"), expected_series=8),
        FigureSpec(figure_id="fig5", x_axis="value1", series_keys=("strategy", "csit", "value2"), expected_series=8),
        FigureSpec(figure_id="fig6", x_axis="value1", series_keys=("strategy", "topology", "csit"), expected_series=8),
        FigureSpec(figure_id="fig7", x_axis="value1", series_keys=("strategy", "topology"), expected_series=4),
        FigureSpec(figure_id="fig8", x_axis="value1", series_keys=("strategy", "topology"), expected_series=4),
        FigureSpec(figure_id="fig9", x_axis="value1", series_keys=("strategy", "value2"), expected_series=4),
    )
}


class PlotDataService:
    @staticmethod
    def figure(figure_id: str) -> FigureSpec:
        if figure_id not in FIGURES:
            raise UsageError(f"unknown figure id {figure_id!r}, expected one of {sorted(FIGURES)}")
        return FIGURES[figure_id]

    @staticmethod
    def series_label(row: pd.Series, spec: FigureSpec) -> str:
        parts = []
        for key in spec.series_keys:
            if key == "value2":
                parts.append(f"{row['axis2']}={row['value2']}")
            else:
                parts.append(row[key])
        return "/".join(parts)

    @staticmethod
    def build_series(table: pd.DataFrame, spec: FigureSpec) -> Dict[str, pd.DataFrame]:
        """One (x, series, y, ci) frame per engine; series in first-appearance order."""
        ok = table[table["status"] == "ok"]
        frames: Dict[str, pd.DataFrame] = {}
        for engine in ok["engine"].drop_duplicates():
            subset = ok[ok["engine"] == engine]
            frames[engine] = pd.DataFrame(
                {
                    "x": [label_to_number(v) for v in subset[spec.x_axis]],
                    "series": [PlotDataService.series_label(row, spec) for _, row in subset.iterrows()],
                    "y": subset[spec.y_column].astype(float).to_numpy(),
                    "ci": subset["ci"].to_numpy(),
                },
                columns=PLOT_COLUMNS,
            )
            count = frames[engine]["series"].nunique()
            if count != spec.expected_series:
                logger.warning(f"{spec.figure_id} ({engine}): expected {spec.expected_series} series, found {count}")
        return frames

    @staticmethod
    def emit_plotdata(results_path: str, figure_id: str, out_dir: str) -> List[str]:
        """Write figN_<engine>.tsv files and return their paths."""
        spec = PlotDataService.figure(figure_id)
        table = read_results(results_path)
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for engine, frame in PlotDataService.build_series(table, spec).items():
            path = os.path.join(out_dir, f"{figure_id}_{engine}.tsv")
            frame.to_csv(path, sep=SEPARATOR, index=False, lineterminator="\n")
            paths.append(path)
            logger.info(f"📊 {figure_id} ({engine}): {frame['series'].nunique()} series -> {path}")
        return paths
