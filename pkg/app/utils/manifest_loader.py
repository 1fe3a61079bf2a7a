import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import ManifestError
from app.schemas.manifest import IMPAIRMENT_AXES, SYSTEM_AXES, Manifest, SweepAxis
from app.schemas.system import (
    CsitMode,
    Engine,
    EngineOptions,
    GeometryConfig,
    ImpairmentProfile,
    Strategy,
    SystemConfig,
    Topology,
)
from app.services.validation import ConfigValidator
from app.utils.units import db_to_linear, is_db_literal, parse_db, parse_quantity

logger = logging.getLogger(__name__)

MAX_AXES = 2
KAPPA_FIELDS = ("kappa_t2_bs", "kappa_r2_bs", "kappa_t2_ue", "kappa_r2_ue")


def _as_list(value: Any) -> List[Any]:
    return list(value) if isinstance(value, list) else [value]


def _number(raw: Any, key: str) -> float:
    try:
        return parse_quantity(raw)[0]
    except ManifestError as e:
        raise ManifestError(f"{key}: {e.detail}")


def _range_values(spec: Dict[str, Any], name: str) -> Tuple[List[float], List[str]]:
    """Expand {start, stop, step | num}; dB endpoints are stepped in dB."""
    if "start" not in spec or "stop" not in spec:
        raise ManifestError(f"sweep {name}: a range needs start and stop")
    in_db = is_db_literal(spec["start"])
    if in_db != is_db_literal(spec["stop"]):
        raise ManifestError(f"sweep {name}: start and stop must both be dB or both linear")

    start = parse_db(spec["start"]) if in_db else float(spec["start"])
    stop = parse_db(spec["stop"]) if in_db else float(spec["stop"])
    if "num" in spec:
        grid = np.linspace(start, stop, int(spec["num"]))
    elif "step" in spec:
        step = parse_db(spec["step"]) if is_db_literal(spec["step"]) else float(spec["step"])
        if step <= 0:
            raise ManifestError(f"sweep {name}: step must be positive")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        grid = start + step * np.arange(count)
    else:
        raise ManifestError(f"sweep {name}: a range needs step or num")

    if in_db:
        return [db_to_linear(v) for v in grid], [f"{v:g}dB" for v in grid]
    return [float(v) for v in grid], [f"{v:g}" for v in grid]


def _sweep_axis(entry: Dict[str, Any]) -> SweepAxis:
    name = entry.get("name")
    if name not in SYSTEM_AXES + IMPAIRMENT_AXES:
        raise ManifestError(f"unknown sweep axis: {name!r}")
    if "values" in entry:
        parsed = [parse_quantity(v) for v in _as_list(entry["values"])]
        values, labels = [v for v, _ in parsed], [label for _, label in parsed]
    else:
        values, labels = _range_values(entry, name)
    if not values:
        raise ManifestError(f"sweep {name}: no values")
    return SweepAxis(name=name, values=values, labels=labels)


def _geometry(raw: Any) -> GeometryConfig:
    if raw is None:
        return GeometryConfig()
    if isinstance(raw, str):
        return GeometryConfig(mode=raw)
    return GeometryConfig(**raw)


def _oscillator_variance(table: Dict[str, Any]) -> float:
    try:
        return ImpairmentProfile.wiener_variance(
            float(table["carrier_hz"]), float(table["constant"]), float(table["symbol_time_s"])
        )
    except KeyError as e:
        raise ManifestError(f"oscillator table is missing {e}")


def _impairments(raw: Dict[str, Any]) -> Tuple[ImpairmentProfile, List[Topology]]:
    fields: Dict[str, Any] = {}
    if "delta" in raw:
        fields["sigma_phi2"] = _number(raw["delta"], "delta")
        fields["sigma_varphi2"] = 0.0
    if "oscillator" in raw:
        fields["sigma_phi2"] = _oscillator_variance(raw["oscillator"])
    if "ue_oscillator" in raw:
        fields["sigma_varphi2"] = _oscillator_variance(raw["ue_oscillator"])
    for key in ("sigma_phi2", "sigma_varphi2"):
        if key in raw:
            fields[key] = _number(raw[key], key)
    if "kappa2" in raw:
        for key in KAPPA_FIELDS:
            fields[key] = _number(raw["kappa2"], "kappa2")
    for key in KAPPA_FIELDS:
        if key in raw:
            fields[key] = _number(raw[key], key)
    if "xi" in raw:
        fields["xi_bs"] = fields["xi_ue"] = _number(raw["xi"], "xi")
    for key in ("xi_bs", "xi_ue"):
        if key in raw:
            fields[key] = _number(raw[key], key)
    topologies = [Topology(t) for t in _as_list(raw.get("topology", "clo"))]
    fields["topology"] = topologies[0]
    return ImpairmentProfile(**fields), topologies


def parse_manifest(data: Dict[str, Any], name: str = "manifest") -> Manifest:
    """Build a Manifest from an already-decoded TOML document."""
    try:
        system_raw = dict(data.get("system", {}))
        tau_raw = system_raw.get("tau", "K")
        tau_follows_K = tau_raw == "K"
        system = SystemConfig(
            M=int(system_raw["M"]),
            K=int(system_raw["K"]),
            T=int(system_raw["T"]),
            tau=int(system_raw["K"]) if tau_follows_K else int(tau_raw),
            rho=_number(system_raw.get("rho", "20dB"), "rho"),
            rho_up=_number(system_raw.get("rho_up", "2dB"), "rho_up"),
            geometry=_geometry(system_raw.get("geometry")),
            seed=int(data.get("seed", 0)),
            alpha_reg=_number(system_raw["alpha_reg"], "alpha_reg") if "alpha_reg" in system_raw else None,
        )
        impairments, topologies = _impairments(dict(data.get("impairments", {})))
        options = EngineOptions(**data.get("engine", {}))

        sweeps = [_sweep_axis(entry) for entry in data.get("sweep", [])]
        if len(sweeps) > MAX_AXES:
            raise ManifestError(f"at most {MAX_AXES} sweep axes per run, got {len(sweeps)}")
        if len({axis.name for axis in sweeps}) != len(sweeps):
            raise ManifestError("sweep axes must be distinct")

        xval = data.get("xval", {})
        return Manifest(
            name=str(data.get("name", name)),
            system=system,
            impairments=impairments,
            options=options,
            csit=[CsitMode(c) for c in _as_list(system_raw.get("csit", "imperfect"))],
            strategies=[Strategy(s) for s in _as_list(system_raw.get("strategy", ["nors", "rs"]))],
            topologies=topologies,
            engines=[Engine(e) for e in _as_list(data.get("engines", "de"))],
            trials=int(data.get("trials", 100)),
            seed=int(data.get("seed", 0)),
            output=data.get("output"),
            axes=sweeps,
            tau_follows_K=tau_follows_K,
            xval_tol_pct=float(xval.get("tol_pct", 5.0)),
            xval_tol_by_M={int(k): float(v) for k, v in xval.get("tol_by_M", {}).items()},
        )
    except KeyError as e:
        raise ManifestError(f"manifest is missing required key {e}")
    except (ValidationError, ValueError, TypeError) as e:
        raise ManifestError(f"invalid manifest: {e}")


def load_manifest(path: str) -> Manifest:
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise ManifestError(f"unreadable manifest {path}: {e}")
    default_name = os.path.splitext(os.path.basename(path))[0]
    return parse_manifest(data, default_name)


def validate_manifest(manifest: Manifest) -> int:
    """Validate every (grid point, csit, topology) combination; return how many were checked."""
    checked = 0
    for point in manifest.grid():
        for csit in manifest.csit:
            for topology in manifest.topologies:
                config, imp = manifest.point_configs(point, csit, topology)
                ConfigValidator.validate(config, imp)
                checked += 1
    logger.info(f"✅ Manifest {manifest.name}: {checked} configurations valid")
    return checked
