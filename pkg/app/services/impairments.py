import logging
from typing import Optional, Tuple, Union

import numpy as np

from app.schemas.realization import DistortionCov, PhaseTrajectory
from app.schemas.system import ImpairmentProfile, Topology
from app.services.channel_model import ChannelModel

logger = logging.getLogger(__name__)


class Impairments:
    @staticmethod
    def initial_trajectory(M: int, K: int, topology: Topology) -> PhaseTrajectory:
        """Slot 0 of a trajectory: every oscillator starts at phase zero."""
        return PhaseTrajectory(phi=np.zeros((M, 1)), varphi=np.zeros((K, 1)), topology=topology)

    @staticmethod
    def advance_phase(
        traj: PhaseTrajectory, imp: ImpairmentProfile, rng: np.random.Generator
    ) -> PhaseTrajectory:
        """Append one slot of Wiener increments."""
        M, K = traj.phi.shape[0], traj.varphi.shape[0]
        if traj.topology == Topology.CLO:
            bs_step = np.full(M, rng.normal(0.0, np.sqrt(imp.sigma_phi2)))
        else:
            bs_step = rng.normal(0.0, np.sqrt(imp.sigma_phi2), size=M)
        ue_step = rng.normal(0.0, np.sqrt(imp.sigma_varphi2), size=K)
        phi = np.hstack([traj.phi, (traj.phi[:, -1] + bs_step)[:, None]])
        varphi = np.hstack([traj.varphi, (traj.varphi[:, -1] + ue_step)[:, None]])
        return PhaseTrajectory(phi=phi, varphi=varphi, topology=traj.topology)

    @staticmethod
    def sample_trajectory(
        M: int, K: int, n_slots: int, imp: ImpairmentProfile, rng: np.random.Generator
    ) -> PhaseTrajectory:
        """Slots 0..n_slots in one pass: cumulative sums of i.i.d. increments."""
        topology = imp.topology
        bs_width = 1 if topology == Topology.CLO else M
        bs_steps = rng.normal(0.0, np.sqrt(imp.sigma_phi2), size=(n_slots, bs_width))
        ue_steps = rng.normal(0.0, np.sqrt(imp.sigma_varphi2), size=(n_slots, K))

        phi = np.zeros((M, n_slots + 1))
        # a CLO path has one row and broadcasts over antennas
        phi[:, 1:] = np.cumsum(bs_steps, axis=0).T
        varphi = np.zeros((K, n_slots + 1))
        varphi[:, 1:] = np.cumsum(ue_steps, axis=0).T
        return PhaseTrajectory(phi=phi, varphi=varphi, topology=topology)

    @staticmethod
    def rotation(traj: PhaseTrajectory, k: int, n: int, anchor: int) -> Tuple[np.ndarray, np.ndarray]:
        """Return (Theta_{k,n}, relative rotation w.r.t. the anchor slot), both diagonal unitary."""
        theta = traj.theta(k)
        Theta = np.diag(np.exp(1j * theta[:, n]))
        Theta_rel = np.diag(np.exp(-1j * (theta[:, n] - theta[:, anchor])))
        return Theta, Theta_rel

    @staticmethod
    def pn_trace(traj: PhaseTrajectory, k: int, n: int, anchor: int) -> complex:
        """Empirical (1/M) tr of the relative rotation."""
        theta = traj.theta(k)
        return complex(np.mean(np.exp(-1j * (theta[:, n] - theta[:, anchor]))))

    @staticmethod
    def pn_trace_limit(
        imp: ImpairmentProfile,
        n_elapsed: Union[int, np.ndarray],
        topology: Topology,
        rng: Optional[np.random.Generator] = None,
    ) -> Union[complex, np.ndarray]:
        """Large-M limit of (1/M) tr of the relative rotation.

        The magnitude is 1 under CLO and exp(-sigma_phi2 n / 2) under SLO. Without
        an rng the rotation part is left out, which is all the DE engine needs.
        """
        n_elapsed = np.asarray(n_elapsed, dtype=float)
        if topology == Topology.CLO:
            magnitude = np.ones_like(n_elapsed)
        else:
            magnitude = np.exp(-0.5 * imp.sigma_phi2 * n_elapsed)
        value = magnitude.astype(complex)
        if rng is not None:
            variance = imp.sigma_varphi2 * n_elapsed
            if topology == Topology.CLO:
                variance = variance + imp.sigma_phi2 * n_elapsed
            value = value * np.exp(-1j * rng.normal(0.0, 1.0, size=n_elapsed.shape) * np.sqrt(variance))
        if value.ndim == 0:
            return complex(value)
        return value

    @staticmethod
    def tx_distortion_cov(kappa_t2: float, q_diag: np.ndarray) -> np.ndarray:
        return np.diag(kappa_t2 * np.asarray(q_diag, dtype=float))

    @staticmethod
    def rx_distortion_var_ue(
        kappa_r2: float, h_k: np.ndarray, Q_bs: np.ndarray
    ) -> Union[float, np.ndarray]:
        """kappa^2 h^H Q_bs h; h_k may carry leading batch axes before the antenna axis."""
        h = np.asarray(h_k)
        value = kappa_r2 * np.real(np.sum(h.conj() * (h @ Q_bs.T), axis=-1))
        if h.ndim == 1:
            return float(value)
        return value

    @staticmethod
    def rx_distortion_cov_bs(kappa_r2: float, channels: np.ndarray, pilot_powers: np.ndarray) -> np.ndarray:
        """kappa^2 diag(sum_k p_k |h_k^m|^2) for an (M, K) channel matrix."""
        power = np.abs(np.asarray(channels)) ** 2 @ np.asarray(pilot_powers, dtype=float)
        return np.diag(kappa_r2 * power)

    @staticmethod
    def downlink_distortion(imp: ImpairmentProfile, Q_bs: np.ndarray, channels: np.ndarray) -> DistortionCov:
        """Transmit-distortion diagonal and the receive distortion every user sees.

        Q_bs is the full transmit covariance; channels are (M, K) or a slot batch (N, M, K).
        """
        q_diag = np.real(np.diag(Q_bs))
        Lambda = np.diag(Impairments.tx_distortion_cov(imp.kappa_t2_bs, q_diag))
        G = channels if channels.ndim == 3 else channels[None]
        if imp.kappa_r2_ue == 0.0:
            Upsilon = np.zeros((G.shape[0], G.shape[2]))
        else:
            Upsilon = Impairments.rx_distortion_var_ue(imp.kappa_r2_ue, np.swapaxes(G, 1, 2), Q_bs)
        return DistortionCov(Lambda=Lambda, Upsilon=Upsilon)

    @staticmethod
    def draw_gaussian(cov: np.ndarray, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Circularly-symmetric complex Gaussian vector(s); a 1-D cov is read as a diagonal."""
        cov = np.asarray(cov)
        if cov.ndim == 1:
            root = np.diag(np.sqrt(np.clip(cov.real, 0.0, None)))
        else:
            root = ChannelModel.matrix_sqrt(cov)
        M = root.shape[0]
        shape = (M,) if size is None else (size, M)
        w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        return w @ root.T
