import itertools
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from app.schemas.system import (
    CsitMode,
    Engine,
    EngineOptions,
    ImpairmentProfile,
    Strategy,
    SystemConfig,
    Topology,
)

SYSTEM_AXES = ("M", "K", "T", "tau", "rho", "rho_up", "alpha_reg")
IMPAIRMENT_AXES = (
    "delta",
    "sigma_phi2",
    "sigma_varphi2",
    "kappa2",
    "kappa_t2_bs",
    "kappa_r2_bs",
    "kappa_t2_ue",
    "kappa_r2_ue",
    "xi",
    "xi_bs",
    "xi_ue",
)
INTEGER_AXES = ("M", "K", "T", "tau")


class SweepAxis(BaseModel):
    name: str
    values: List[float]
    labels: List[str]

    class Config:
        frozen = True


class Manifest(BaseModel):
    """A parsed experiment manifest: base point, series, sweep axes and run options."""

    name: str
    system: SystemConfig
    impairments: ImpairmentProfile
    options: EngineOptions = EngineOptions()
    csit: List[CsitMode] = [CsitMode.IMPERFECT]
    strategies: List[Strategy] = [Strategy.NORS, Strategy.RS]
    topologies: List[Topology] = [Topology.CLO]
    engines: List[Engine] = [Engine.DE]
    trials: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)
    output: Optional[str] = None
    axes: List[SweepAxis] = []
    tau_follows_K: bool = False
    xval_tol_pct: float = 5.0
    xval_tol_by_M: Dict[int, float] = {}

    class Config:
        frozen = True

    def grid(self) -> List[Tuple[int, ...]]:
        """Index tuples of every grid point in deterministic (row-major) order."""
        return list(itertools.product(*[range(len(axis.values)) for axis in self.axes]))

    def point_overrides(self, point: Tuple[int, ...]) -> Dict[str, float]:
        return {axis.name: axis.values[i] for axis, i in zip(self.axes, point)}

    def point_labels(self, point: Tuple[int, ...]) -> List[Tuple[str, str]]:
        return [(axis.name, axis.labels[i]) for axis, i in zip(self.axes, point)]

    def point_configs(
        self, point: Tuple[int, ...], csit: CsitMode, topology: Topology
    ) -> Tuple[SystemConfig, ImpairmentProfile]:
        """Base configuration with the swept values and series choices applied."""
        system_update: Dict[str, Any] = {"csit": csit, "seed": self.seed}
        impairment_update: Dict[str, Any] = {"topology": topology}

        for name, value in self.point_overrides(point).items():
            if name in INTEGER_AXES:
                value = int(round(value))
            if name in SYSTEM_AXES:
                system_update[name] = value
            elif name == "delta":
                impairment_update["sigma_phi2"] = value
                impairment_update["sigma_varphi2"] = 0.0
            elif name == "kappa2":
                for field in ("kappa_t2_bs", "kappa_r2_bs", "kappa_t2_ue", "kappa_r2_ue"):
                    impairment_update[field] = value
            elif name == "xi":
                impairment_update["xi_bs"] = value
                impairment_update["xi_ue"] = value
            else:
                impairment_update[name] = value

        if self.tau_follows_K and "tau" not in system_update:
            system_update["tau"] = system_update.get("K", self.system.K)

        return (
            self.system.model_copy(update=system_update),
            self.impairments.model_copy(update=impairment_update),
        )

    def xval_tolerance(self, M: int) -> float:
        return self.xval_tol_by_M.get(M, self.xval_tol_pct)


RESULT_COLUMNS = (
    "point",
    "axis1",
    "value1",
    "axis2",
    "value2",
    "strategy",
    "csit",
    "topology",
    "engine",
    "K",
    "sum_rate",
    "common_rate",
    "private_rates",
    "ci",
    "t",
    "delta_r",
    "iterations",
    "residual",
    "status",
    "error",
)


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{value:.10g}"


class ResultRow(BaseModel):
    point: int
    axis1: str = ""
    value1: str = ""
    axis2: str = ""
    value2: str = ""
    strategy: Strategy
    csit: CsitMode
    topology: Topology
    engine: Engine
    K: int
    sum_rate: Optional[float] = None
    common_rate: Optional[float] = None
    private_rates: List[float] = []
    ci: Optional[float] = None
    t: Optional[float] = None
    delta_r: Optional[float] = None
    iterations: Optional[int] = None
    residual: Optional[float] = None
    status: str = "ok"
    error: str = ""

    def to_record(self) -> Dict[str, str]:
        """Flatten to preformatted strings in RESULT_COLUMNS order."""
        return {
            "point": str(self.point),
            "axis1": self.axis1,
            "value1": self.value1,
            "axis2": self.axis2,
            "value2": self.value2,
            "strategy": self.strategy.value,
            "csit": self.csit.value,
            "topology": self.topology.value,
            "engine": self.engine.value,
            "K": str(self.K),
            "sum_rate": _fmt(self.sum_rate),
            "common_rate": _fmt(self.common_rate),
            "private_rates": ";".join(_fmt(r) for r in self.private_rates),
            "ci": _fmt(self.ci),
            "t": _fmt(self.t),
            "delta_r": _fmt(self.delta_r),
            "iterations": "" if self.iterations is None else str(self.iterations),
            "residual": _fmt(self.residual),
            "status": self.status,
            "error": self.error.replace("\t", " ").replace("\n", " "),
        }


class XvalRow(BaseModel):
    point: int
    value1: str = ""
    value2: str = ""
    strategy: Strategy
    csit: CsitMode
    topology: Topology
    M: int
    de_rates: List[float]
    mc_rates: List[float]
    deviation_pct: float
    tolerance_pct: float
    passed: bool


class XvalReport(BaseModel):
    rows: List[XvalRow]
    max_deviation_by_curve: Dict[str, float]
    passed: bool


class FigureSpec(BaseModel):
    figure_id: str
    x_axis: str
    series_keys: Tuple[str, ...]
    expected_series: int
    y_column: str = "sum_rate"

    class Config:
        frozen = True
