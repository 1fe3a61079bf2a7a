"""Array-carrying domain types shared by the simulation services.

Shapes follow one convention throughout: antenna index first for vectors
and channel matrices (M x K), user index first for per-user stacks of
matrices (K x M x M), slot index first for per-slot batches (N x K).
"""

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.schemas.system import PowerSplit, RateReport, Topology

ArrayConfig = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class CorrelationSet(BaseModel):
    model_config = ArrayConfig

    R: np.ndarray
    R_sqrt: np.ndarray

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def M(self) -> int:
        return self.R.shape[1]


class ChannelRealization(BaseModel):
    model_config = ArrayConfig

    # column k is h_k
    h: np.ndarray


class PhaseTrajectory(BaseModel):
    model_config = ArrayConfig

    phi: np.ndarray  # (M, slots) BS LO phase per antenna
    varphi: np.ndarray  # (K, slots) UE LO phase per user
    topology: Topology

    @property
    def n_slots(self) -> int:
        return self.phi.shape[1]

    def theta(self, k: int) -> np.ndarray:
        """Total phase seen on user k's channel, shape (M, slots)."""
        return self.phi + self.varphi[k][None, :]


class DistortionCov(BaseModel):
    model_config = ArrayConfig

    Lambda: np.ndarray  # diagonal of the transmit-distortion covariance
    Upsilon: np.ndarray  # (N, K) receive-distortion power per slot and user


class PilotBook(BaseModel):
    model_config = ArrayConfig

    omega: np.ndarray  # (tau, K)
    rho_up: float

    @property
    def tau(self) -> int:
        return self.omega.shape[0]


class TrainingStatistics(BaseModel):
    """Everything the LMMSE estimator needs that does not depend on a realization."""

    model_config = ArrayConfig

    sigma: np.ndarray  # (tau M, tau M) training Gram matrix
    cross: np.ndarray  # (K, M, tau M) rows of (omega_k^H Delta_k (x) R_k)
    weights: np.ndarray  # (K, M, tau M) cross Sigma^-1
    delta: np.ndarray  # (K, tau) phase-decay diagonal
    R_hat: np.ndarray
    R_err: np.ndarray


class EstimateSet(BaseModel):
    model_config = ArrayConfig

    g_hat: np.ndarray  # (M, K) estimate of the slot-tau channel
    stats: TrainingStatistics

    @property
    def R_hat(self) -> np.ndarray:
        return self.stats.R_hat

    @property
    def R_err(self) -> np.ndarray:
        return self.stats.R_err


class ConsistencyReport(BaseModel):
    max_decomposition_error: float
    min_eig_hat: float
    min_eig_err: float
    ok: bool


class PrecoderBundle(BaseModel):
    model_config = ArrayConfig

    F: np.ndarray
    f_c: Optional[np.ndarray] = None
    lam: float
    alpha: Optional[np.ndarray] = None
    split: PowerSplit
    alpha_reg: float
    xi_reg: float


class SlotSinr(BaseModel):
    """SINRs for a batch of data slots; leading axis is the slot."""

    model_config = ArrayConfig

    private: np.ndarray  # (N, K)
    common_per_user: np.ndarray  # (N, K)
    common: np.ndarray  # (N,)
    slots: np.ndarray


class DeInputs(BaseModel):
    model_config = ArrayConfig

    D: np.ndarray  # (K, M, M)
    S: np.ndarray  # (M, M)
    rho_arg: float
    K_mat: Optional[np.ndarray] = None


class FixedPointResult(BaseModel):
    model_config = ArrayConfig

    e: np.ndarray
    T: np.ndarray
    iterations: int
    residual: float
    residuals: List[float]


class DerivativeResult(BaseModel):
    model_config = ArrayConfig

    e_prime: np.ndarray
    T_prime: np.ndarray
    J: np.ndarray
    spectral_radius: float


class DeStatistics(BaseModel):
    """Slot-independent DE quantities for one configuration point."""

    model_config = ArrayConfig

    M: int
    K: int
    e: np.ndarray
    delta: np.ndarray
    delta_prime: np.ndarray
    T: np.ndarray
    lambda_bar: float
    mu: np.ndarray  # (K, K) mu[j, k] = (1/M) tr R_hat_j T'(R_hat_k)
    nu: np.ndarray  # (K, K) nu[j, k] = (1/M) tr R_hat_j T'(R_err_k)
    hat_traces: np.ndarray
    hat_diag: np.ndarray  # (K, M) diag of R_hat_k
    true_diag: np.ndarray  # (K, M) diag of R_k
    beam_diag: np.ndarray  # (K, M) per-antenna power of beam j per unit private power
    own_corr: np.ndarray  # (K,) beam-to-own-channel correlation
    psi2: np.ndarray  # (N,) squared phase factor per data slot
    iterations: int
    residual: float


class DeLinkTerms(BaseModel):
    """Per-slot DE signal and distortion powers (N x K)."""

    model_config = ArrayConfig

    desired: np.ndarray
    interference: np.ndarray
    common: np.ndarray
    tx_distortion: np.ndarray
    rx_distortion: np.ndarray


class DeSolution(BaseModel):
    model_config = ArrayConfig

    stats: DeStatistics
    Q: np.ndarray  # (N, K, K)
    t: float
    alpha: Optional[np.ndarray] = None
    sinr_private: np.ndarray  # RS private SINRs, (N, K)
    sinr_common: np.ndarray  # (N, K)
    sinr_nors: np.ndarray  # (N, K)
    nors_report: RateReport
    rs_report: RateReport
    delta_r: float
