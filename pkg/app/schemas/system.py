import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field

from app.core.config import settings


class CsitMode(str, Enum):
    PERFECT = "perfect"
    IMPERFECT = "imperfect"


class Strategy(str, Enum):
    NORS = "nors"
    RS = "rs"


class Topology(str, Enum):
    CLO = "clo"
    SLO = "slo"


class GeometryMode(str, Enum):
    IID = "iid"
    CELL = "cell"


class Engine(str, Enum):
    MC = "mc"
    DE = "de"


class SplitRule(str, Enum):
    CLOSED_FORM = "closed_form"
    SEARCH = "search"


class McRates(str, Enum):
    ERGODIC = "ergodic"  # mean over trials of log2(1 + SINR)
    AVERAGED_SINR = "averaged_sinr"  # log2(1 + SINR) of the trial-averaged signal and noise powers


class GeometryConfig(BaseModel):
    mode: GeometryMode = GeometryMode.IID
    side_m: float = 250.0
    user_distance_m: float = 25.0
    # variance of the log-normal shadowing exponent; 0 disables shadowing
    shadowing_var: float = 3.16

    class Config:
        frozen = True


class SystemConfig(BaseModel):
    """Dimensions, power budget and operating mode of one campaign point."""

    M: int = Field(..., description="BS antennas")
    K: int = Field(..., description="single-antenna users")
    T: int = Field(..., description="coherence block length (channel uses)")
    tau: int = Field(..., description="pilot length (channel uses)")
    rho: float = Field(..., description="downlink SNR budget, linear")
    rho_up: float = Field(..., description="uplink pilot power per symbol, linear")
    csit: CsitMode = CsitMode.IMPERFECT
    strategy: Strategy = Strategy.NORS
    geometry: GeometryConfig = GeometryConfig()
    seed: int = Field(0, ge=0)
    # None -> K/(M rho)
    alpha_reg: Optional[float] = None

    class Config:
        frozen = True

    @property
    def data_slots(self) -> int:
        return self.T - self.tau


class ImpairmentProfile(BaseModel):
    """Residual hardware impairments on both link ends, noise-normalized."""

    sigma_phi2: float = 0.0
    sigma_varphi2: float = 0.0
    kappa_t2_bs: float = 0.0
    kappa_r2_bs: float = 0.0
    kappa_t2_ue: float = 0.0
    kappa_r2_ue: float = 0.0
    xi_bs: float = 1.0
    xi_ue: float = 1.0
    topology: Topology = Topology.CLO

    class Config:
        frozen = True

    @staticmethod
    def wiener_variance(carrier_hz: float, oscillator_const: float, symbol_time_s: float) -> float:
        """Phase-noise increment variance 4 pi^2 f_c c T_s."""
        return 4.0 * math.pi ** 2 * carrier_hz * oscillator_const * symbol_time_s

    @property
    def total_pn(self) -> float:
        return self.sigma_phi2 + self.sigma_varphi2

    @property
    def kappa_tilde2(self) -> float:
        return 1.0 + self.kappa_t2_bs

    @property
    def is_ideal(self) -> bool:
        return (
            self.total_pn == 0.0
            and self.kappa_t2_bs == self.kappa_r2_bs == 0.0
            and self.kappa_t2_ue == self.kappa_r2_ue == 0.0
            and self.xi_bs == self.xi_ue == 1.0
        )


class EngineOptions(BaseModel):
    fixed_point_tol: float = settings.fixed_point_tol
    max_iter: int = settings.fixed_point_max_iter
    split_rule: SplitRule = SplitRule.CLOSED_FORM
    search_points: int = settings.split_search_points
    mc_rates: McRates = McRates.ERGODIC
    qjk_literal: bool = False
    s_matrix_literal: bool = False
    tau_literal: bool = False

    class Config:
        frozen = True


class PowerSplit(BaseModel):
    t: float
    rho: float
    K: int

    class Config:
        frozen = True

    @property
    def rho_c(self) -> float:
        return self.rho * (1.0 - self.t)

    @property
    def rho_private_per_user(self) -> float:
        return self.rho * self.t / self.K

    @classmethod
    def create(cls, t: float, rho: float, K: int) -> "PowerSplit":
        from app.core.exceptions import DomainError

        if not 0.0 < t <= 1.0:
            raise DomainError(f"t in (0, 1] violated: t={t}")
        return cls(t=float(t), rho=float(rho), K=int(K))

    @classmethod
    def private_only(cls, rho: float, K: int) -> "PowerSplit":
        return cls.create(1.0, rho, K)


class RateReport(BaseModel):
    per_user_private_rates: List[float]
    common_rate: float = 0.0
    sum_rate: float
    strategy: Strategy
    engine: Engine
    ci_half_width: Optional[float] = None
    t: float = 1.0

    @classmethod
    def compose(
        cls,
        private_rates,
        common_rate: float,
        strategy: Strategy,
        engine: Engine,
        ci_half_width: Optional[float] = None,
        t: float = 1.0,
    ) -> "RateReport":
        private = [max(float(r), 0.0) for r in private_rates]
        common = max(float(common_rate), 0.0) if strategy == Strategy.RS else 0.0
        return cls(
            per_user_private_rates=private,
            common_rate=common,
            sum_rate=common + sum(private),
            strategy=strategy,
            engine=engine,
            ci_half_width=ci_half_width,
            t=t,
        )
