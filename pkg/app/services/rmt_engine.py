"""Deterministic-equivalent (DE) engine.

All large-system quantities are built from one fixed point
e_k = (1/M) tr D_k T with T = ((1/M) sum_j D_j / (1 + e_j) + S + a I)^-1,
plus derivative solves that give the DE of T K T. Everything downstream
(lambda_bar, Q, SINRs, rates, the power split) is a closed-form function of
those traces.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from app.core.exceptions import ConvergenceError, SpectralRadiusError
from app.schemas.realization import (
    CorrelationSet,
    DeInputs,
    DeLinkTerms,
    DerivativeResult,
    DeSolution,
    DeStatistics,
    FixedPointResult,
    SlotSinr,
)
from app.schemas.system import (
    CsitMode,
    Engine,
    EngineOptions,
    ImpairmentProfile,
    PowerSplit,
    SplitRule,
    Strategy,
    SystemConfig,
)
from app.services.channel_model import ChannelModel
from app.services.impairments import Impairments
from app.services.link_sim import LinkSimulator
from app.services.precoding import PrecodingService
from app.services.training import TrainingService

logger = logging.getLogger(__name__)

SEARCH_T_MIN = 1e-3


def _traces(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """(1/M) tr(A_k B) for a stack A of shape (K, M, M)."""
    return np.real(np.einsum("kab,ba->k", A, B)) / B.shape[0]


class RmtEngine:
    @staticmethod
    def resolvent(inputs: DeInputs, e: np.ndarray) -> np.ndarray:
        M = inputs.S.shape[0]
        A = np.einsum("k,kab->ab", 1.0 / (1.0 + e), inputs.D) / M + inputs.S + inputs.rho_arg * np.eye(M)
        T = linalg.inv(A)
        return 0.5 * (T + T.conj().T)

    @staticmethod
    def fixed_point(inputs: DeInputs, tol: float, max_iter: int) -> FixedPointResult:
        """Iterate from e = 1/rho until the largest change drops below tol.

        The change is measured relative to max(1, max_k e_k), so the stopping rule
        is absolute for e of order one and stays reachable at high SNR.
        """
        K = inputs.D.shape[0]
        e = np.full(K, 1.0 / inputs.rho_arg)
        residuals = []
        for iteration in range(1, max_iter + 1):
            T = RmtEngine.resolvent(inputs, e)
            e_next = _traces(inputs.D, T)
            residual = float(np.max(np.abs(e_next - e)) / max(1.0, float(np.max(np.abs(e_next)))))
            residuals.append(residual)
            e = e_next
            if residual < tol:
                logger.debug(f"Fixed point converged in {iteration} iterations (residual {residual:.2e})")
                return FixedPointResult(
                    e=e,
                    T=RmtEngine.resolvent(inputs, e),
                    iterations=iteration,
                    residual=residual,
                    residuals=residuals,
                )
        raise ConvergenceError(
            f"fixed point did not converge in {max_iter} iterations (residual {residuals[-1]:.3e})",
            residual=residuals[-1],
        )

    @staticmethod
    def derivative_system(inputs: DeInputs, fixed_point: FixedPointResult, K_mat: np.ndarray) -> DerivativeResult:
        """DE of T K_mat T: solve (I - J) e' = v and assemble T'."""
        D = inputs.D
        K, M = D.shape[0], D.shape[1]
        T, e = fixed_point.T, fixed_point.e
        weights = 1.0 / (1.0 + e) ** 2

        DT = D @ T
        coupling = np.real(np.einsum("kab,lba->kl", DT, DT)) / M
        J = coupling * weights[None, :] / M
        radius = float(np.max(np.abs(np.linalg.eigvals(J))))
        if radius >= 1.0:
            raise SpectralRadiusError(f"spectral radius of J must be < 1, got {radius:.6f}")

        TKT = T @ K_mat @ T
        v = _traces(D, TKT)
        e_prime = linalg.solve(np.eye(K) - J, v)
        X = np.einsum("l,lab->ab", e_prime * weights, D) / M
        T_prime = TKT + T @ X @ T
        return DerivativeResult(e_prime=e_prime, T_prime=T_prime, J=J, spectral_radius=radius)

    @staticmethod
    def de_lambda_bar(delta_prime: np.ndarray, e: np.ndarray, M: int) -> float:
        """lambda_bar = K ((1/M) sum_k delta'_k / (1 + e_k)^2)^-1."""
        K = len(delta_prime)
        return float(K / (np.sum(delta_prime / (1.0 + e) ** 2) / M))

    @staticmethod
    def phase_factors(config: SystemConfig, imp: ImpairmentProfile) -> np.ndarray:
        """Squared DE phase factor for every data slot."""
        elapsed = np.arange(1, config.T - config.tau + 1)
        return np.abs(Impairments.pn_trace_limit(imp, elapsed, imp.topology)) ** 2

    @staticmethod
    def estimate_covariances(
        config: SystemConfig, imp: ImpairmentProfile, corr: CorrelationSet
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(R_hat, R_err): the training split for estimated CSIT, (R, 0) for perfect CSIT."""
        if config.csit == CsitMode.PERFECT:
            return corr.R, np.zeros_like(corr.R)
        pilots = TrainingService.build_pilots(config.K, config.tau, config.rho_up)
        stats = TrainingService.training_statistics(corr, pilots, imp)
        TrainingService.estimate_stats_consistency(stats, corr)
        return stats.R_hat, stats.R_err

    @staticmethod
    def statistics(
        config: SystemConfig,
        imp: ImpairmentProfile,
        R: np.ndarray,
        R_hat: np.ndarray,
        options: EngineOptions,
    ) -> DeStatistics:
        """Slot-independent DE quantities from the true and estimate covariances."""
        K, M = config.K, config.M
        R_err = R - R_hat
        eye = np.eye(M)

        hat_diag = np.real(np.einsum("kmm->km", R_hat))
        diag_load = hat_diag.mean(axis=0) if options.s_matrix_literal else hat_diag.sum(axis=0)
        S = np.diag(imp.kappa_r2_ue * diag_load).astype(complex) / M
        rho_arg = PrecodingService.alpha_reg_for(config) * PrecodingService.regularizer_noise(imp, config.csit)
        inputs = DeInputs(D=imp.kappa_tilde2 * R_hat, S=S, rho_arg=rho_arg, K_mat=eye)

        fp = RmtEngine.fixed_point(inputs, options.fixed_point_tol, options.max_iter)
        e, T = fp.e, fp.T
        delta = _traces(R_hat, T)
        delta_prime = _traces(R_hat, RmtEngine.derivative_system(inputs, fp, eye).T_prime)
        lambda_bar = RmtEngine.de_lambda_bar(delta_prime, e, M)

        has_error = bool(np.any(R_err))
        mu = np.zeros((K, K))
        nu = np.zeros((K, K))
        beam_diag = np.zeros((K, M))
        for k in range(K):
            T_hat = RmtEngine.derivative_system(inputs, fp, R_hat[k]).T_prime
            mu[:, k] = _traces(R_hat, T_hat)
            beam_diag[k] = np.real(np.diag(T_hat)) / (M ** 2 * (1.0 + e[k]) ** 2)
            if has_error:
                nu[:, k] = _traces(R_hat, RmtEngine.derivative_system(inputs, fp, R_err[k]).T_prime)

        TR = T @ R_hat  # (K, M, M)
        own_corr = lambda_bar * np.sum(np.abs(np.einsum("kmm->km", TR)) ** 2, axis=1) / (M ** 2 * (1.0 + e) ** 2)

        return DeStatistics(
            M=M,
            K=K,
            e=e,
            delta=delta,
            delta_prime=delta_prime,
            T=T,
            lambda_bar=lambda_bar,
            mu=mu,
            nu=nu,
            hat_traces=np.real(np.trace(R_hat, axis1=1, axis2=2)),
            hat_diag=hat_diag,
            true_diag=np.real(np.einsum("kmm->km", R)),
            beam_diag=beam_diag,
            own_corr=own_corr,
            psi2=RmtEngine.phase_factors(config, imp),
            iterations=fp.iterations,
            residual=fp.residual,
        )

    @staticmethod
    def prepare(
        config: SystemConfig,
        imp: ImpairmentProfile,
        options: Optional[EngineOptions] = None,
        corr: Optional[CorrelationSet] = None,
    ) -> DeStatistics:
        options = options or EngineOptions()
        if corr is None:
            corr = ChannelModel.build_correlation(config, np.random.default_rng([config.seed, 0]))
        R_hat, _ = RmtEngine.estimate_covariances(config, imp, corr)
        return RmtEngine.statistics(config, imp, corr.R, R_hat, options)

    @staticmethod
    def de_qjk(stats: DeStatistics, literal: bool = False) -> np.ndarray:
        """Q[n, j, k]: interference of beam j at user k in data slot n (zero diagonal)."""
        psi2 = stats.psi2[:, None, None]
        e = stats.e
        if literal:
            own = np.diag(stats.mu)[None, None, :]  # mu_kk
            delta_j = stats.delta[None, :, None]
            delta_k = stats.delta[None, None, :]
            Q = (
                stats.mu[None] / stats.M
                + own ** 3 / (stats.M * (1.0 + delta_j) ** 2)
                - 2.0 * np.sqrt(psi2) * delta_k * own / (stats.M * (1.0 + delta_j))
            )
            Q = np.clip(Q, 0.0, None)
        else:
            nulling = 1.0 - psi2 + psi2 / (1.0 + e[None, None, :]) ** 2
            Q = stats.mu[None] * nulling + stats.nu[None]
        return Q * (1.0 - np.eye(stats.K))[None]

    @staticmethod
    def de_link_terms(
        stats: DeStatistics,
        Q: np.ndarray,
        split: PowerSplit,
        imp: ImpairmentProfile,
        alpha: Optional[np.ndarray] = None,
        include_common: bool = True,
    ) -> DeLinkTerms:
        """Per-slot DE powers of every term in the SINR denominators."""
        M = stats.M
        p = split.rho_private_per_user
        rho_c = split.rho_c if include_common else 0.0
        e = stats.e
        psi2 = stats.psi2[:, None]

        desired = p * stats.lambda_bar * psi2 * stats.delta[None, :] ** 2 / (1.0 + e[None, :]) ** 2
        interference = p * np.einsum("njk,j->nk", Q, stats.lambda_bar / (M * (1.0 + e) ** 2))

        common = np.zeros_like(desired)
        common_corr = np.zeros(stats.K)
        common_power = np.zeros(M)
        if alpha is not None and rho_c > 0.0:
            weights = alpha ** 2
            norm = float(np.sum(weights * stats.hat_traces))
            common = rho_c * psi2 * (weights * stats.hat_traces ** 2)[None, :] / norm
            common_corr = weights * np.sum(stats.hat_diag ** 2, axis=1) / norm
            common_power = weights @ stats.hat_diag / norm

        q_bar = p * stats.lambda_bar * stats.beam_diag.sum(axis=0) + rho_c * common_power
        tx = imp.kappa_t2_bs * (stats.true_diag @ q_bar + p * stats.own_corr + rho_c * common_corr)
        tx = np.broadcast_to(tx[None, :], desired.shape).copy()
        rx = imp.kappa_r2_ue * (desired + interference + common)
        return DeLinkTerms(
            desired=desired, interference=interference, common=common, tx_distortion=tx, rx_distortion=rx
        )

    @staticmethod
    def de_private_sinr(terms: DeLinkTerms, imp: ImpairmentProfile) -> np.ndarray:
        return terms.desired / (terms.interference + terms.tx_distortion + terms.rx_distortion + imp.xi_ue)

    @staticmethod
    def de_common_sinr(terms: DeLinkTerms, imp: ImpairmentProfile) -> Tuple[np.ndarray, np.ndarray]:
        """Per-user common SINRs (N, K) and their per-slot minimum."""
        denominator = (
            terms.desired + terms.interference + terms.tx_distortion + terms.rx_distortion + imp.xi_ue
        )
        per_user = terms.common / denominator
        return per_user, per_user.min(axis=1)

    @staticmethod
    def de_common_weights(
        stats: DeStatistics, Q: np.ndarray, split: PowerSplit, imp: ImpairmentProfile
    ) -> np.ndarray:
        """Max-min weights with q_k the inverse common-SINR denominator at the first data slot."""
        terms = RmtEngine.de_link_terms(stats, Q, split, imp, include_common=False)
        noise = terms.desired + terms.interference + terms.tx_distortion + terms.rx_distortion + imp.xi_ue
        return PrecodingService.common_weights(1.0 / noise[0], stats.hat_traces, stats.M)

    @staticmethod
    def rs_sinrs(
        stats: DeStatistics, Q: np.ndarray, split: PowerSplit, imp: ImpairmentProfile
    ) -> Tuple[Optional[np.ndarray], SlotSinr]:
        alpha = None
        if split.rho_c > 0.0:
            alpha = RmtEngine.de_common_weights(stats, Q, split, imp)
        terms = RmtEngine.de_link_terms(stats, Q, split, imp, alpha)
        private = RmtEngine.de_private_sinr(terms, imp)
        per_user, common = RmtEngine.de_common_sinr(terms, imp)
        return alpha, SlotSinr(
            private=private,
            common_per_user=per_user,
            common=common,
            slots=np.arange(private.shape[0], dtype=np.int64),
        )

    @staticmethod
    def search_grid(rho: float, points: int) -> np.ndarray:
        """Log grid on (0, 1] with t = 1 included; the floor drops as 1/rho at high SNR."""
        floor = min(SEARCH_T_MIN, 1.0 / rho)
        return np.unique(np.append(np.logspace(np.log10(floor), 0.0, points), 1.0))

    @staticmethod
    def search_power_split(
        stats: DeStatistics,
        Q: np.ndarray,
        config: SystemConfig,
        imp: ImpairmentProfile,
        points: int,
    ) -> float:
        """t on a log grid over (0, 1], t = 1 included, maximizing the DE RS sum-rate."""
        grid = RmtEngine.search_grid(config.rho, points)
        best_t, best_rate = 1.0, -np.inf
        for t in grid:
            split = PowerSplit.create(float(t), config.rho, config.K)
            _, sinr = RmtEngine.rs_sinrs(stats, Q, split, imp)
            rate = LinkSimulator.accumulate_rates(sinr, config.T, Strategy.RS, Engine.DE).sum_rate
            if rate > best_rate:
                best_t, best_rate = float(t), rate
        return best_t

    @staticmethod
    def de_rates(
        config: SystemConfig,
        imp: ImpairmentProfile,
        options: Optional[EngineOptions] = None,
        corr: Optional[CorrelationSet] = None,
    ) -> DeSolution:
        """DE NoRS and RS reports plus the sum-rate gain of RS."""
        options = options or EngineOptions()
        stats = RmtEngine.prepare(config, imp, options, corr)
        Q = RmtEngine.de_qjk(stats, options.qjk_literal)

        nors_split = PowerSplit.private_only(config.rho, config.K)
        _, nors_sinr = RmtEngine.rs_sinrs(stats, Q, nors_split, imp)
        nors_report = LinkSimulator.accumulate_rates(nors_sinr, config.T, Strategy.NORS, Engine.DE)

        if options.split_rule == SplitRule.SEARCH:
            t = RmtEngine.search_power_split(stats, Q, config, imp, options.search_points)
        else:
            t = PrecodingService.power_split(stats, Q, config, imp, options.tau_literal)
        split = PowerSplit.create(t, config.rho, config.K)
        alpha, rs_sinr = RmtEngine.rs_sinrs(stats, Q, split, imp)
        rs_report = LinkSimulator.accumulate_rates(rs_sinr, config.T, Strategy.RS, Engine.DE, t=t)

        delta_r = rs_report.common_rate + sum(
            p - q for p, q in zip(rs_report.per_user_private_rates, nors_report.per_user_private_rates)
        )
        logger.debug(f"DE rates: NoRS {nors_report.sum_rate:.4f}, RS {rs_report.sum_rate:.4f}, t={t:.4f}")
        return DeSolution(
            stats=stats,
            Q=Q,
            t=t,
            alpha=alpha,
            sinr_private=rs_sinr.private,
            sinr_common=rs_sinr.common_per_user,
            sinr_nors=nors_sinr.private,
            nors_report=nors_report,
            rs_report=rs_report,
            delta_r=delta_r,
        )
