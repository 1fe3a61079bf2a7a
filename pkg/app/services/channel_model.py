import logging

import numpy as np
from scipy import linalg

from app.core.exceptions import GeometryError, NotPSDError
from app.schemas.realization import ChannelRealization, CorrelationSet
from app.schemas.system import GeometryMode, SystemConfig

logger = logging.getLogger(__name__)

# large-scale fading 10^(s - 1.53) / d^3.76
PATHLOSS_OFFSET = 1.53
PATHLOSS_EXPONENT = 3.76
PSD_TOLERANCE = 1e-10


class ChannelModel:
    @staticmethod
    def path_loss(distance_m: float, shadowing: np.ndarray) -> np.ndarray:
        """Per-antenna large-scale gain for one user."""
        if distance_m <= 0:
            raise GeometryError(f"user_distance_m > 0 violated: user_distance_m={distance_m}")
        return 10.0 ** (np.asarray(shadowing, dtype=float) - PATHLOSS_OFFSET) / distance_m ** PATHLOSS_EXPONENT

    @staticmethod
    def build_correlation(config: SystemConfig, rng: np.random.Generator) -> CorrelationSet:
        """Build R_k for every user; Cell mode draws shadowing once per (user, antenna)."""
        M, K = config.M, config.K
        geometry = config.geometry

        if geometry.mode == GeometryMode.IID:
            R = np.broadcast_to(np.eye(M, dtype=complex), (K, M, M)).copy()
            return CorrelationSet(R=R, R_sqrt=R.copy())

        if geometry.user_distance_m <= 0 or geometry.side_m <= 0:
            raise GeometryError(
                f"positive cell geometry violated: side_m={geometry.side_m}, user_distance_m={geometry.user_distance_m}"
            )
        shadowing = rng.normal(0.0, np.sqrt(geometry.shadowing_var), size=(K, M))
        gains = np.stack([ChannelModel.path_loss(geometry.user_distance_m, s) for s in shadowing])
        R = np.zeros((K, M, M), dtype=complex)
        R_sqrt = np.zeros((K, M, M), dtype=complex)
        idx = np.arange(M)
        R[:, idx, idx] = gains
        R_sqrt[:, idx, idx] = np.sqrt(gains)
        logger.debug(f"Cell correlation built: mean gain {gains.mean():.3e}")
        return CorrelationSet(R=R, R_sqrt=R_sqrt)

    @staticmethod
    def from_matrices(R: np.ndarray) -> CorrelationSet:
        """Wrap arbitrary Hermitian PSD covariances, computing their principal roots."""
        R = np.asarray(R, dtype=complex)
        R_sqrt = np.stack([ChannelModel.matrix_sqrt(Rk) for Rk in R])
        return CorrelationSet(R=R, R_sqrt=R_sqrt)

    @staticmethod
    def matrix_sqrt(R: np.ndarray) -> np.ndarray:
        """Principal square root through an eigendecomposition."""
        R = np.asarray(R, dtype=complex)
        off_diagonal = R - np.diag(np.diag(R))
        if not np.any(off_diagonal):
            diag = np.real(np.diag(R))
            scale = np.max(np.abs(diag)) if diag.size else 0.0
            if np.any(diag < -PSD_TOLERANCE * scale):
                raise NotPSDError(f"matrix is not PSD: min eigenvalue {diag.min():.3e}")
            return np.diag(np.sqrt(np.clip(diag, 0.0, None))).astype(complex)

        hermitian = 0.5 * (R + R.conj().T)
        eigvals, eigvecs = linalg.eigh(hermitian)
        scale = np.max(np.abs(eigvals))
        if eigvals.min() < -PSD_TOLERANCE * scale:
            raise NotPSDError(f"matrix is not PSD: min eigenvalue {eigvals.min():.3e}")
        if eigvals.min() < 0:
            logger.debug(f"Clipping negative eigenvalue {eigvals.min():.3e} to zero")
        root = np.sqrt(np.clip(eigvals, 0.0, None))
        return (eigvecs * root) @ eigvecs.conj().T

    @staticmethod
    def draw_channel(corr: CorrelationSet, rng: np.random.Generator) -> ChannelRealization:
        """h_k = R_k^{1/2} w_k with w_k ~ CN(0, I)."""
        K, M = corr.K, corr.M
        w = (rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M))) / np.sqrt(2.0)
        h = np.einsum("kmn,kn->mk", corr.R_sqrt, w)
        return ChannelRealization(h=h)
