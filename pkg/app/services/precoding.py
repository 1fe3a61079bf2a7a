import logging
from typing import Optional

import numpy as np
from scipy import linalg

from app.core.exceptions import NumericalError
from app.schemas.realization import DeStatistics, PrecoderBundle
from app.schemas.system import CsitMode, ImpairmentProfile, PowerSplit, SystemConfig

logger = logging.getLogger(__name__)


class PrecodingService:
    @staticmethod
    def default_alpha_reg(K: int, M: int, rho: float) -> float:
        return K / (M * rho)

    @staticmethod
    def alpha_reg_for(config: SystemConfig) -> float:
        if config.alpha_reg is not None:
            return config.alpha_reg
        return PrecodingService.default_alpha_reg(config.K, config.M, config.rho)

    @staticmethod
    def regularizer_noise(imp: ImpairmentProfile, csit: CsitMode) -> float:
        """Noise level inside the RZF regularizer: xi_bs for estimated CSIT, xi_ue for perfect CSIT."""
        return imp.xi_bs if csit == CsitMode.IMPERFECT else imp.xi_ue

    @staticmethod
    def rzf_private(
        G: np.ndarray,
        imp: ImpairmentProfile,
        alpha_reg: float,
        xi: float,
        Z: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """F = (k~^2 W + kappa_r,UE^2 diag(W) + Z + M alpha_reg xi I)^-1 G with W = G G^H."""
        M = G.shape[0]
        W = G @ G.conj().T
        A = imp.kappa_tilde2 * W + imp.kappa_r2_ue * np.diag(np.real(np.diag(W))) + M * alpha_reg * xi * np.eye(M)
        if Z is not None:
            A = A + Z
        try:
            return linalg.solve(A, G, assume_a="her")
        except (linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"regularized Gram matrix is singular: {e}")

    @staticmethod
    def normalize_lambda(F: np.ndarray, K: int) -> float:
        energy = float(np.real(np.vdot(F, F)))
        if energy <= 0.0:
            raise NumericalError("zero precoder cannot be normalized")
        return K / energy

    @staticmethod
    def common_weights(q: np.ndarray, traces: np.ndarray, M: int) -> np.ndarray:
        """Max-min weights: q_k alpha_k^2 tr^2 equal across users, sum alpha^2 = 1/M."""
        q = np.asarray(q, dtype=float)
        traces = np.asarray(traces, dtype=float)
        if np.any(traces <= 0.0):
            raise NumericalError(f"common weights need positive traces: {traces}")
        if np.any(q <= 0.0):
            raise NumericalError(f"common weights need positive q: {q}")
        score = q * traces ** 2
        return 1.0 / np.sqrt(M * score * np.sum(1.0 / score))

    @staticmethod
    def common_precoder(alpha: np.ndarray, G: np.ndarray) -> np.ndarray:
        beam = G @ np.asarray(alpha)
        norm = np.linalg.norm(beam)
        if norm == 0.0:
            raise NumericalError("common precoder is the zero vector")
        return beam / norm

    @staticmethod
    def build_bundle(
        G: np.ndarray,
        imp: ImpairmentProfile,
        config: SystemConfig,
        split: PowerSplit,
        alpha: Optional[np.ndarray] = None,
    ) -> PrecoderBundle:
        """RZF private precoders plus, for a common share, the weighted common beam."""
        alpha_reg = PrecodingService.alpha_reg_for(config)
        xi = PrecodingService.regularizer_noise(imp, config.csit)
        F = PrecodingService.rzf_private(G, imp, alpha_reg, xi)
        lam = PrecodingService.normalize_lambda(F, config.K)
        f_c = None
        if alpha is not None and split.rho_c > 0.0:
            f_c = PrecodingService.common_precoder(alpha, G)
        return PrecoderBundle(F=F, f_c=f_c, lam=lam, alpha=alpha, split=split, alpha_reg=alpha_reg, xi_reg=xi)

    @staticmethod
    def split_noise(K: int, M: int, xi: float, literal: bool = False) -> float:
        return M * xi if literal else K * M * xi

    @staticmethod
    def split_ratio(
        K: int, M: int, interference: float, distortion: float, xi: float, literal: bool = False
    ) -> float:
        """min{K^2 M / (interference + distortion + K M xi), 1}; literal uses M xi."""
        denominator = interference + distortion + PrecodingService.split_noise(K, M, xi, literal)
        if denominator <= 0.0:
            raise NumericalError(f"power split denominator must be positive: {denominator}")
        return min(K ** 2 * M / denominator, 1.0)

    @staticmethod
    def power_split(
        stats: DeStatistics,
        Q: np.ndarray,
        config: SystemConfig,
        imp: ImpairmentProfile,
        literal: bool = False,
    ) -> float:
        """Closed-form private share over the whole data phase.

        Each user's denominator is the harmonic mean of its per-slot denominators,
        and the user with the smallest one sets t. With no distortion this keeps
        every user's block-averaged private-rate loss below log2(1 + 1/K).
        """
        K, M = config.K, config.M
        scale = stats.lambda_bar * config.rho / (1.0 + stats.e) ** 2  # indexed by the interfering beam j
        off_diagonal = Q * (1.0 - np.eye(K))
        interference = np.einsum("njk,j->nk", off_diagonal, scale)
        distortion = stats.hat_traces * config.rho * (imp.kappa_t2_bs + imp.kappa_r2_ue)
        noise = PrecodingService.split_noise(K, M, imp.xi_ue, literal)

        total = interference + distortion[None, :] + noise
        block = 1.0 / np.mean(1.0 / total, axis=0)
        k = int(np.argmin(block))
        t = PrecodingService.split_ratio(
            K, M, float(block[k] - distortion[k] - noise), float(distortion[k]), imp.xi_ue, literal
        )
        logger.debug(f"Closed-form split t={t:.6f} set by user {k}")
        return t
