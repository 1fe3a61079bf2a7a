import re
from typing import Tuple, Union

from app.core.exceptions import ManifestError

DB_PATTERN = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*dB\s*$")


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def is_db_literal(raw: Union[str, float, int]) -> bool:
    return isinstance(raw, str) and DB_PATTERN.match(raw) is not None


def parse_db(raw: str) -> float:
    """Numeric dB value of a "20dB" literal."""
    match = DB_PATTERN.match(raw)
    if match is None:
        raise ManifestError(f"not a dB literal: {raw!r}")
    return float(match.group(1))


def parse_quantity(raw: Union[str, float, int]) -> Tuple[float, str]:
    """Return (linear value, label). dB-suffixed strings convert, bare numbers are linear."""
    if isinstance(raw, bool):
        raise ManifestError(f"expected a number, got {raw!r}")
    if isinstance(raw, (int, float)):
        return float(raw), f"{raw:g}" if isinstance(raw, float) else str(raw)
    if not isinstance(raw, str):
        raise ManifestError(f"expected a number or dB literal, got {raw!r}")
    if is_db_literal(raw):
        return db_to_linear(parse_db(raw)), raw.strip().replace(" ", "")
    try:
        return float(raw), raw.strip()
    except ValueError:
        raise ManifestError(f"bad numeric literal: {raw!r}")


def label_to_number(label: str) -> float:
    """Plot coordinate of a stored label: dB literals stay in dB, others parse as floats."""
    if is_db_literal(label):
        return parse_db(label)
    return float(label)
