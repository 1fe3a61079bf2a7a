import logging
from typing import Optional, Union

import numpy as np
from scipy import linalg

from app.core.config import settings
from app.core.exceptions import DimensionError, NumericalError
from app.schemas.realization import (
    ConsistencyReport,
    CorrelationSet,
    EstimateSet,
    PhaseTrajectory,
    PilotBook,
    TrainingStatistics,
)
from app.schemas.system import ImpairmentProfile
from app.services.impairments import Impairments

logger = logging.getLogger(__name__)


class TrainingService:
    @staticmethod
    def build_pilots(K: int, tau: int, rho_up: float) -> PilotBook:
        """First K columns of the tau-point DFT, unit-modulus entries scaled by sqrt(rho_up)."""
        if tau < K:
            raise DimensionError(f"tau >= K violated: tau={tau} < K={K}")
        u = np.arange(tau)
        dft = np.exp(-2j * np.pi * np.outer(u, u) / tau)
        return PilotBook(omega=np.sqrt(rho_up) * dft[:, :K], rho_up=float(rho_up))

    @staticmethod
    def phase_decay(imp: ImpairmentProfile, tau: int) -> np.ndarray:
        """Diagonal of the phase-decay matrix: exp(-sigma^2 (tau - u) / 2) for pilot slots u = 1..tau."""
        u = np.arange(1, tau + 1)
        return np.exp(-0.5 * imp.total_pn * (tau - u))

    @staticmethod
    def training_statistics(corr: CorrelationSet, pilots: PilotBook, imp: ImpairmentProfile) -> TrainingStatistics:
        """Assemble Sigma, factorize it once and derive the estimator weights and R_hat."""
        R = corr.R
        K, M = corr.K, corr.M
        tau = pilots.tau
        omega = pilots.omega
        rho_up = pilots.rho_up
        sigma2 = imp.total_pn

        lag = np.abs(np.subtract.outer(np.arange(tau), np.arange(tau)))
        decay = np.exp(-0.5 * sigma2 * lag)
        eye_tau = np.eye(tau)

        sigma = imp.xi_bs * np.eye(tau * M, dtype=complex)
        for j in range(K):
            X_tilde = np.outer(omega[:, j], omega[:, j].conj()) * decay + imp.kappa_t2_ue * rho_up * eye_tau
            sigma += np.kron(X_tilde, R[j])
            sigma += imp.kappa_r2_bs * rho_up * np.kron(eye_tau, np.diag(np.diag(R[j])))

        delta = TrainingService.phase_decay(imp, tau)
        # cross[k] = omega_k^H Delta_k (x) R_k, shape (M, tau M)
        cross = np.stack(
            [np.hstack([np.conj(omega[u, k]) * delta[u] * R[k] for u in range(tau)]) for k in range(K)]
        )

        try:
            factor = linalg.cho_factor(sigma, lower=True)
        except linalg.LinAlgError as e:
            raise NumericalError(f"training covariance is singular: {e}")
        weights = np.stack([linalg.cho_solve(factor, cross[k].conj().T).conj().T for k in range(K)])

        R_hat = np.einsum("kab,kcb->kac", weights, cross.conj())
        R_hat = 0.5 * (R_hat + np.conj(np.transpose(R_hat, (0, 2, 1))))
        R_err = R - R_hat
        logger.debug(f"Training statistics: tr R_hat = {np.real(np.trace(R_hat, axis1=1, axis2=2))}")
        return TrainingStatistics(
            sigma=sigma,
            cross=cross,
            weights=weights,
            delta=np.broadcast_to(delta, (K, tau)).copy(),
            R_hat=R_hat,
            R_err=R_err,
        )

    @staticmethod
    def simulate_uplink(
        channels: np.ndarray,
        traj: PhaseTrajectory,
        pilots: PilotBook,
        imp: ImpairmentProfile,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Stacked received pilots psi (slot-major, tau M entries) for slots 1..tau."""
        M, K = channels.shape
        tau = pilots.tau
        rho_up = pilots.rho_up
        tx_distortion = np.diag(Impairments.tx_distortion_cov(imp.kappa_t2_ue, np.full(K, rho_up)))
        rx_distortion = np.diag(Impairments.rx_distortion_cov_bs(imp.kappa_r2_bs, channels, np.full(K, rho_up)))

        psi = np.empty(tau * M, dtype=complex)
        for u in range(1, tau + 1):
            theta = traj.phi[:, u][:, None] + traj.varphi[:, u][None, :]
            g = np.exp(1j * theta) * channels
            eta_t = Impairments.draw_gaussian(tx_distortion, rng)
            y = g @ (pilots.omega[u - 1] + eta_t)
            y += Impairments.draw_gaussian(rx_distortion, rng)
            y += Impairments.draw_gaussian(np.full(M, imp.xi_bs), rng)
            psi[(u - 1) * M : u * M] = y
        return psi

    @staticmethod
    def lmmse_estimate(
        psi: np.ndarray,
        corr: CorrelationSet,
        pilots: PilotBook,
        imp: ImpairmentProfile,
        stats: Optional[TrainingStatistics] = None,
    ) -> EstimateSet:
        """g_hat_k = (omega_k^H Delta_k (x) R_k) Sigma^-1 psi at the anchor slot tau."""
        if stats is None:
            stats = TrainingService.training_statistics(corr, pilots, imp)
        g_hat = np.einsum("kmn,n->mk", stats.weights, psi)
        return EstimateSet(g_hat=g_hat, stats=stats)

    @staticmethod
    def ideal_estimate(psi: np.ndarray, corr: CorrelationSet, pilots: PilotBook, xi: float = 1.0) -> np.ndarray:
        """Ideal-hardware shortcut R (R + xi/rho_p I)^-1 psi_k with rho_p = tau rho_up."""
        M = corr.M
        tau = pilots.tau
        rho_p = tau * pilots.rho_up
        Y = psi.reshape(tau, M)
        combined = (pilots.omega.conj().T @ Y) / rho_p  # (K, M)
        g_hat = np.empty((M, corr.K), dtype=complex)
        for k in range(corr.K):
            A = corr.R[k] + (xi / rho_p) * np.eye(M)
            g_hat[:, k] = linalg.solve(A, corr.R[k] @ combined[k], assume_a="her")
        return g_hat

    @staticmethod
    def estimate_stats_consistency(
        estimates: Union[EstimateSet, TrainingStatistics],
        corr: CorrelationSet,
        tol: float = settings.consistency_tol,
        raise_on_breach: bool = True,
    ) -> ConsistencyReport:
        """Check R_hat + R_err = R and that both pieces are PSD."""
        R_hat, R_err = estimates.R_hat, estimates.R_err
        decomposition = 0.0
        min_hat = np.inf
        min_err = np.inf
        for k in range(corr.K):
            scale = max(np.linalg.norm(corr.R[k]), 1.0)
            decomposition = max(decomposition, np.linalg.norm(R_hat[k] + R_err[k] - corr.R[k]) / scale)
            min_hat = min(min_hat, np.linalg.eigvalsh(R_hat[k]).min() / scale)
            min_err = min(min_err, np.linalg.eigvalsh(0.5 * (R_err[k] + R_err[k].conj().T)).min() / scale)

        ok = decomposition <= tol and min_hat >= -tol and min_err >= -tol
        report = ConsistencyReport(
            max_decomposition_error=float(decomposition),
            min_eig_hat=float(min_hat),
            min_eig_err=float(min_err),
            ok=bool(ok),
        )
        if not ok and raise_on_breach:
            raise NumericalError(f"estimate statistics inconsistent: {report.model_dump()}")
        return report
