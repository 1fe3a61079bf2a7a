import logging
import math
from typing import Tuple

from app.core.exceptions import DimensionError, DomainError, GeometryError
from app.schemas.system import GeometryMode, ImpairmentProfile, SystemConfig

logger = logging.getLogger(__name__)

VARIANCE_FIELDS = (
    "sigma_phi2",
    "sigma_varphi2",
    "kappa_t2_bs",
    "kappa_r2_bs",
    "kappa_t2_ue",
    "kappa_r2_ue",
)


class ConfigValidator:
    @staticmethod
    def validate(config: SystemConfig, imp: ImpairmentProfile) -> Tuple[SystemConfig, ImpairmentProfile]:
        """Check every invariant in a fixed order and name the first one violated."""
        ConfigValidator.check_dimensions(config)
        ConfigValidator.check_powers(config)
        ConfigValidator.check_impairments(imp)
        ConfigValidator.check_geometry(config)
        return config, imp

    @staticmethod
    def check_dimensions(config: SystemConfig) -> None:
        if config.M < 1:
            raise DimensionError(f"M >= 1 violated: M={config.M}")
        if config.K < 1:
            raise DimensionError(f"K >= 1 violated: K={config.K}")
        if config.K > config.M:
            raise DimensionError(f"K <= M violated: K={config.K} > M={config.M}")
        if config.tau < config.K:
            raise DimensionError(f"tau >= K violated: tau={config.tau} < K={config.K}")
        if config.tau >= config.T:
            raise DimensionError(f"tau < T violated: tau={config.tau} >= T={config.T}")

    @staticmethod
    def check_powers(config: SystemConfig) -> None:
        for name in ("rho", "rho_up"):
            value = getattr(config, name)
            if not math.isfinite(value) or value <= 0:
                raise DomainError(f"{name} > 0 violated: {name}={value}")
        if config.alpha_reg is not None and not config.alpha_reg > 0:
            raise DomainError(f"alpha_reg > 0 violated: alpha_reg={config.alpha_reg}")

    @staticmethod
    def check_impairments(imp: ImpairmentProfile) -> None:
        for name in VARIANCE_FIELDS:
            value = getattr(imp, name)
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"{name} >= 0 violated: {name}={value}")
        for name in ("xi_bs", "xi_ue"):
            value = getattr(imp, name)
            if not math.isfinite(value) or value < 1.0:
                raise DomainError(f"{name} >= 1 violated: {name}={value}")

    @staticmethod
    def check_geometry(config: SystemConfig) -> None:
        geometry = config.geometry
        if geometry.mode != GeometryMode.CELL:
            return
        if geometry.side_m <= 0:
            raise GeometryError(f"side_m > 0 violated: side_m={geometry.side_m}")
        if geometry.user_distance_m <= 0:
            raise GeometryError(f"user_distance_m > 0 violated: user_distance_m={geometry.user_distance_m}")
        if geometry.user_distance_m > geometry.side_m / math.sqrt(2.0):
            raise GeometryError(
                f"user inside cell violated: user_distance_m={geometry.user_distance_m}, side_m={geometry.side_m}"
            )
        if geometry.shadowing_var < 0:
            raise DomainError(f"shadowing_var >= 0 violated: shadowing_var={geometry.shadowing_var}")
