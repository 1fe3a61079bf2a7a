import logging
from typing import Dict, Optional, Tuple

import numpy as np

from app.core.exceptions import DomainError
from app.schemas.realization import CorrelationSet, PhaseTrajectory, SlotSinr
from app.schemas.system import (
    CsitMode,
    Engine,
    EngineOptions,
    ImpairmentProfile,
    McRates,
    PowerSplit,
    RateReport,
    Strategy,
    SystemConfig,
)
from app.services.channel_model import ChannelModel
from app.services.impairments import Impairments
from app.services.precoding import PrecodingService
from app.services.training import TrainingService

logger = logging.getLogger(__name__)

CI_Z = 1.96


class RateAccumulator:
    """Sum, sum of squares and count of per-trial rates; merging is order-free."""

    def __init__(self, K: int):
        self.K = K
        self.count = 0
        self.private_sum = np.zeros(K)
        self.common_sum = 0.0
        self.sum_rate_sum = 0.0
        self.sum_rate_sq = 0.0

    def add(self, report: RateReport) -> "RateAccumulator":
        self.count += 1
        self.private_sum += np.asarray(report.per_user_private_rates)
        self.common_sum += report.common_rate
        self.sum_rate_sum += report.sum_rate
        self.sum_rate_sq += report.sum_rate ** 2
        return self

    def merge(self, other: "RateAccumulator") -> "RateAccumulator":
        merged = RateAccumulator(self.K)
        merged.count = self.count + other.count
        merged.private_sum = self.private_sum + other.private_sum
        merged.common_sum = self.common_sum + other.common_sum
        merged.sum_rate_sum = self.sum_rate_sum + other.sum_rate_sum
        merged.sum_rate_sq = self.sum_rate_sq + other.sum_rate_sq
        return merged

    def ci_half_width(self) -> float:
        if self.count < 2:
            return 0.0
        mean = self.sum_rate_sum / self.count
        variance = max(self.sum_rate_sq - self.count * mean ** 2, 0.0) / (self.count - 1)
        return CI_Z * float(np.sqrt(variance / self.count))

    def finalize(self, strategy: Strategy, t: float = 1.0) -> RateReport:
        return RateReport.compose(
            self.private_sum / self.count,
            self.common_sum / self.count,
            strategy,
            Engine.MC,
            ci_half_width=self.ci_half_width(),
            t=t,
        )


class TermAccumulator:
    """Trial sums of the per-slot SINR terms; rates come from their averages."""

    def __init__(self):
        self.count = 0
        self.sums: Optional[np.ndarray] = None

    def add(self, terms: Tuple[np.ndarray, ...]) -> "TermAccumulator":
        stacked = np.stack(terms)
        self.sums = stacked if self.sums is None else self.sums + stacked
        self.count += 1
        return self

    def mean(self) -> Tuple[np.ndarray, ...]:
        if self.count == 0:
            raise DomainError("no trials accumulated")
        return tuple(self.sums / self.count)


class LinkSimulator:
    @staticmethod
    def effective_channel(h_k: np.ndarray, traj: PhaseTrajectory, k: int, n: int, anchor: int) -> np.ndarray:
        """g_{k,n}: the anchor-slot channel carried forward by the relative rotation."""
        Theta_anchor, _ = Impairments.rotation(traj, k, anchor, anchor)
        _, Theta_rel = Impairments.rotation(traj, k, n, anchor)
        return Theta_rel.conj() @ (Theta_anchor @ h_k)

    @staticmethod
    def effective_channels(h: np.ndarray, traj: PhaseTrajectory, slots: np.ndarray) -> np.ndarray:
        """All users' channels for a batch of slots, shape (N, M, K)."""
        theta = traj.phi[:, slots].T[:, :, None] + traj.varphi[:, slots].T[:, None, :]
        return np.exp(1j * theta) * h[None, :, :]

    @staticmethod
    def transmit_covariance(
        F: np.ndarray, lam: float, split: PowerSplit, f_c: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """p lam F F^H + rho_c f_c f_c^H."""
        Q = split.rho_private_per_user * lam * (F @ F.conj().T)
        if f_c is not None:
            Q = Q + split.rho_c * np.outer(f_c, f_c.conj())
        return Q

    @staticmethod
    def transmit_powers(F: np.ndarray, lam: float, split: PowerSplit, f_c: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-antenna transmit power, the diagonal of the transmit covariance."""
        return np.real(np.diag(LinkSimulator.transmit_covariance(F, lam, split, f_c)))

    @staticmethod
    def _link_terms(
        G: np.ndarray,
        F: np.ndarray,
        lam: float,
        split: PowerSplit,
        imp: ImpairmentProfile,
        f_c: Optional[np.ndarray],
    ) -> Tuple[np.ndarray, ...]:
        """(desired, private_total, common, tx, rx) powers, each (N, K)."""
        G = G if G.ndim == 3 else G[None]
        p = split.rho_private_per_user
        P = np.abs(np.einsum("nmk,mj->nkj", G.conj(), F)) ** 2
        desired = p * lam * np.einsum("nkk->nk", P)
        private_total = p * lam * P.sum(axis=2)
        with_common = f_c is not None and split.rho_c > 0.0
        if with_common:
            common = split.rho_c * np.abs(np.einsum("nmk,m->nk", G.conj(), f_c)) ** 2
        else:
            common = np.zeros_like(desired)
        Q_bs = LinkSimulator.transmit_covariance(F, lam, split, f_c if with_common else None)
        distortion = Impairments.downlink_distortion(imp, Q_bs, G)
        tx = np.einsum("m,nmk->nk", distortion.Lambda, np.abs(G) ** 2)
        return desired, private_total, common, tx, distortion.Upsilon

    @staticmethod
    def sinr_from_terms(
        terms: Tuple[np.ndarray, ...], imp: ImpairmentProfile, slots: Optional[np.ndarray] = None
    ) -> SlotSinr:
        """Common and private SINRs; the common stream is removed before private decoding."""
        desired, private_total, common, tx, rx = terms
        base = tx + rx + imp.xi_ue
        private = desired / (private_total - desired + base)
        common_per_user = common / (private_total + base)
        if slots is None:
            slots = np.arange(private.shape[0])
        return SlotSinr(
            private=private,
            common_per_user=common_per_user,
            common=common_per_user.min(axis=1),
            slots=np.asarray(slots, dtype=np.int64),
        )

    @staticmethod
    def sinr_nors(
        G: np.ndarray, F: np.ndarray, lam: float, split: PowerSplit, imp: ImpairmentProfile
    ) -> np.ndarray:
        """Private-only SINRs for each user and slot, shape (N, K)."""
        return LinkSimulator.sinr_from_terms(LinkSimulator._link_terms(G, F, lam, split, imp, None), imp).private

    @staticmethod
    def sinr_rs(
        G: np.ndarray,
        F: np.ndarray,
        f_c: Optional[np.ndarray],
        lam: float,
        split: PowerSplit,
        imp: ImpairmentProfile,
        slots: Optional[np.ndarray] = None,
    ) -> SlotSinr:
        return LinkSimulator.sinr_from_terms(LinkSimulator._link_terms(G, F, lam, split, imp, f_c), imp, slots)

    @staticmethod
    def accumulate_rates(
        sinr: SlotSinr, T: int, strategy: Strategy, engine: Engine = Engine.MC, t: float = 1.0
    ) -> RateReport:
        """(1/T) sum over the data slots of log2(1 + SINR) per stream."""
        private = np.sum(np.log2(1.0 + sinr.private), axis=0) / T
        common = float(np.sum(np.log2(1.0 + sinr.common))) / T
        return RateReport.compose(private, common, strategy, engine, t=t)

    @staticmethod
    def simulate(
        config: SystemConfig,
        imp: ImpairmentProfile,
        trials: int,
        options: Optional[EngineOptions] = None,
        corr: Optional[CorrelationSet] = None,
    ) -> Dict[Strategy, RateReport]:
        """Monte Carlo NoRS and RS reports from one shared set of channel trials."""
        from app.services.rmt_engine import RmtEngine

        if trials < 1:
            raise DomainError(f"trials >= 1 violated: trials={trials}")
        options = options or EngineOptions()
        M, K, T, tau = config.M, config.K, config.T, config.tau
        if corr is None:
            corr = ChannelModel.build_correlation(config, np.random.default_rng([config.seed, 0]))

        # t and the common weights are statistics, shared with the DE engine
        solution = RmtEngine.de_rates(config, imp, options, corr)
        rs_split = PowerSplit.create(solution.t, config.rho, K)
        nors_split = PowerSplit.private_only(config.rho, K)
        alpha = solution.alpha

        pilots = TrainingService.build_pilots(K, tau, config.rho_up)
        stats = None
        if config.csit == CsitMode.IMPERFECT:
            stats = TrainingService.training_statistics(corr, pilots, imp)

        slots = np.arange(tau + 1, T + 1)
        averaged = options.mc_rates == McRates.AVERAGED_SINR
        nors_acc, rs_acc = RateAccumulator(K), RateAccumulator(K)
        nors_terms, rs_terms = TermAccumulator(), TermAccumulator()
        for i in range(trials):
            rng = np.random.default_rng([config.seed, 1, i])
            h = ChannelModel.draw_channel(corr, rng).h
            traj = Impairments.sample_trajectory(M, K, T, imp, rng)
            if config.csit == CsitMode.IMPERFECT:
                psi = TrainingService.simulate_uplink(h, traj, pilots, imp, rng)
                G_hat = TrainingService.lmmse_estimate(psi, corr, pilots, imp, stats).g_hat
            else:
                G_hat = LinkSimulator.effective_channels(h, traj, np.array([tau]))[0]

            G = LinkSimulator.effective_channels(h, traj, slots)

            nors = PrecodingService.build_bundle(G_hat, imp, config, nors_split)
            rs = nors.model_copy(update={"split": rs_split})
            if rs_split.rho_c > 0.0:
                rs = rs.model_copy(update={"f_c": PrecodingService.common_precoder(alpha, G_hat), "alpha": alpha})

            if averaged:
                nors_terms.add(LinkSimulator._link_terms(G, nors.F, nors.lam, nors_split, imp, None))
                rs_terms.add(LinkSimulator._link_terms(G, rs.F, rs.lam, rs_split, imp, rs.f_c))
                continue

            sinr = LinkSimulator.sinr_nors(G, nors.F, nors.lam, nors_split, imp)
            nors_slot = SlotSinr(
                private=sinr, common_per_user=np.zeros_like(sinr), common=np.zeros(len(slots)), slots=slots
            )
            nors_acc.add(LinkSimulator.accumulate_rates(nors_slot, T, Strategy.NORS))
            rs_acc.add(
                LinkSimulator.accumulate_rates(
                    LinkSimulator.sinr_rs(G, rs.F, rs.f_c, rs.lam, rs_split, imp, slots), T, Strategy.RS, t=rs_split.t
                )
            )

        logger.debug(f"Monte Carlo finished: {trials} trials, M={M}, K={K}, {options.mc_rates.value} rates")
        if averaged:
            # no per-trial rates, so no confidence interval
            return {
                Strategy.NORS: LinkSimulator.accumulate_rates(
                    LinkSimulator.sinr_from_terms(nors_terms.mean(), imp, slots), T, Strategy.NORS
                ),
                Strategy.RS: LinkSimulator.accumulate_rates(
                    LinkSimulator.sinr_from_terms(rs_terms.mean(), imp, slots), T, Strategy.RS, t=rs_split.t
                ),
            }
        return {
            Strategy.NORS: nors_acc.finalize(Strategy.NORS),
            Strategy.RS: rs_acc.finalize(Strategy.RS, t=rs_split.t),
        }

    @staticmethod
    def run_monte_carlo(
        config: SystemConfig,
        imp: ImpairmentProfile,
        trials: int,
        options: Optional[EngineOptions] = None,
        corr: Optional[CorrelationSet] = None,
    ) -> RateReport:
        """Monte Carlo report for the strategy the configuration names."""
        return LinkSimulator.simulate(config, imp, trials, options, corr)[config.strategy]
