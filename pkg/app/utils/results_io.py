import logging
import os
from typing import Dict, List

import pandas as pd

from app.core.exceptions import UsageError
from app.schemas.manifest import RESULT_COLUMNS

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SCHEMA_HEADER = f"# rslab-results schema-version={SCHEMA_VERSION}"
SEPARATOR = "\t"


class ResultsWriter:
    """Append-only result table: versioned header line, column line, one flush per grid point."""

    def __init__(self, path: str):
        self.path = path
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(SCHEMA_HEADER + "\n")
            handle.write(SEPARATOR.join(RESULT_COLUMNS) + "\n")

    def append(self, records: List[Dict[str, str]]) -> None:
        if not records:
            return
        frame = pd.DataFrame(records, columns=list(RESULT_COLUMNS))
        frame.to_csv(
            self.path, sep=SEPARATOR, mode="a", header=False, index=False, lineterminator="\n"
        )


def read_results(path: str) -> pd.DataFrame:
    """Load a result table, refusing files written with another schema."""
    if not os.path.exists(path):
        raise UsageError(f"results file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
    if header != SCHEMA_HEADER:
        raise UsageError(f"unsupported results schema in {path}: {header!r}")
    frame = pd.read_csv(path, sep=SEPARATOR, skiprows=1, dtype=str, keep_default_na=False)
    if tuple(frame.columns) != RESULT_COLUMNS:
        raise UsageError(f"unexpected result columns in {path}: {list(frame.columns)}")
    return frame
