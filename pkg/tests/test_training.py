import numpy as np
import pytest

from app.core.exceptions import DimensionError, NumericalError
from app.schemas.realization import CorrelationSet
from app.schemas.system import Topology
from app.services.channel_model import ChannelModel
from app.services.impairments import Impairments
from app.services.link_sim import LinkSimulator
from app.services.training import TrainingService

from tests.factories import make_impairments, random_psd


def _iid(M: int, K: int) -> CorrelationSet:
    R = np.broadcast_to(np.eye(M, dtype=complex), (K, M, M)).copy()
    return CorrelationSet(R=R, R_sqrt=R.copy())


def _still(M: int, K: int, tau: int):
    return Impairments.sample_trajectory(M, K, tau, make_impairments(), np.random.default_rng(0))


def test_build_pilots_dft_columns():
    pilots = TrainingService.build_pilots(2, 2, 3.0)
    expected = np.sqrt(3.0) * np.array([[1, 1], [1, -1]])
    np.testing.assert_allclose(pilots.omega, expected, atol=1e-12)


def test_pilots_are_orthogonal_with_constant_modulus():
    pilots = TrainingService.build_pilots(3, 5, 2.0)
    gram = pilots.omega.conj().T @ pilots.omega
    np.testing.assert_allclose(gram, 5 * 2.0 * np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.abs(pilots.omega) ** 2, 2.0)


def test_build_pilots_needs_tau_at_least_K():
    with pytest.raises(DimensionError, match="tau >= K"):
        TrainingService.build_pilots(3, 2, 1.0)


def test_uplink_without_noise_reproduces_pilots():
    imp = make_impairments(xi_bs=0.0)
    pilots = TrainingService.build_pilots(1, 2, 4.0)
    psi = TrainingService.simulate_uplink(np.ones((1, 1)), _still(1, 1, 2), pilots, imp, np.random.default_rng(1))
    np.testing.assert_allclose(psi, [2.0, 2.0])


def test_uplink_noise_only():
    M = 5000
    imp = make_impairments(xi_bs=1.5)
    pilots = TrainingService.build_pilots(1, 2, 1.0)
    psi = TrainingService.simulate_uplink(np.zeros((M, 1)), _still(M, 1, 2), pilots, imp, np.random.default_rng(2))
    assert np.mean(np.abs(psi) ** 2) == pytest.approx(1.5, rel=0.03)


def test_uplink_energy_matches_impairment_model():
    M, K, tau, rho_up = 4, 2, 2, 2.0
    imp = make_impairments(kappa_t2_ue=0.05, kappa_r2_bs=0.1, xi_bs=1.3)
    rng = np.random.default_rng(3)
    h = ChannelModel.draw_channel(_iid(M, K), rng).h
    pilots = TrainingService.build_pilots(K, tau, rho_up)
    traj = _still(M, K, tau)
    energy = np.mean(
        [np.sum(np.abs(TrainingService.simulate_uplink(h, traj, pilots, imp, rng)) ** 2) for _ in range(4000)]
    )
    channel_energy = np.sum(np.abs(h) ** 2)
    expected = tau * rho_up * (1 + 0.05 + 0.1) * channel_energy + tau * M * 1.3
    assert energy == pytest.approx(expected, rel=0.03)


def test_lmmse_matches_ideal_shortcut_without_impairments(rng):
    M, K, tau = 4, 2, 3
    corr = ChannelModel.from_matrices(np.stack([random_psd(rng, M), random_psd(rng, M, rank=2)]))
    pilots = TrainingService.build_pilots(K, tau, 1.7)
    imp = make_impairments()
    psi = rng.standard_normal(tau * M) + 1j * rng.standard_normal(tau * M)
    lmmse = TrainingService.lmmse_estimate(psi, corr, pilots, imp).g_hat
    shortcut = TrainingService.ideal_estimate(psi, corr, pilots)
    np.testing.assert_allclose(lmmse, shortcut, atol=1e-10 * np.max(np.abs(shortcut)))


def test_lmmse_scalar_example():
    corr = _iid(1, 1)
    pilots = TrainingService.build_pilots(1, 1, 1.0)
    g_hat = TrainingService.lmmse_estimate(np.array([1.0 + 0j]), corr, pilots, make_impairments()).g_hat
    assert g_hat[0, 0] == pytest.approx(0.5)


def test_lmmse_is_linear(rng, impaired):
    corr = _iid(3, 2)
    pilots = TrainingService.build_pilots(2, 2, 1.5)
    stats = TrainingService.training_statistics(corr, pilots, impaired)
    psi1, psi2 = (rng.standard_normal(6) + 1j * rng.standard_normal(6) for _ in range(2))

    zero = TrainingService.lmmse_estimate(np.zeros(6, dtype=complex), corr, pilots, impaired, stats).g_hat
    assert not np.any(zero)

    a, b = 0.7 - 0.2j, -1.3
    combined = TrainingService.lmmse_estimate(a * psi1 + b * psi2, corr, pilots, impaired, stats).g_hat
    separate = (
        a * TrainingService.lmmse_estimate(psi1, corr, pilots, impaired, stats).g_hat
        + b * TrainingService.lmmse_estimate(psi2, corr, pilots, impaired, stats).g_hat
    )
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_statistics_decompose_and_stay_psd(impaired):
    corr = _iid(4, 2)
    stats = TrainingService.training_statistics(corr, TrainingService.build_pilots(2, 3, 1.2), impaired)
    report = TrainingService.estimate_stats_consistency(stats, corr)
    assert report.ok
    assert report.max_decomposition_error <= 1e-10


def test_consistency_breach_is_reported():
    corr = _iid(2, 1)
    stats = TrainingService.training_statistics(corr, TrainingService.build_pilots(1, 1, 1.0), make_impairments())
    broken = stats.model_copy(update={"R_hat": 2.0 * corr.R})
    with pytest.raises(NumericalError):
        TrainingService.estimate_stats_consistency(broken, corr)
    assert not TrainingService.estimate_stats_consistency(broken, corr, raise_on_breach=False).ok


def test_estimate_quality_limits():
    corr = _iid(3, 2)
    imp = make_impairments()
    strong = TrainingService.training_statistics(corr, TrainingService.build_pilots(2, 2, 1e6), imp)
    weak = TrainingService.training_statistics(corr, TrainingService.build_pilots(2, 2, 1e-9), imp)
    trace_R = np.real(np.trace(corr.R[0]))
    assert np.real(np.trace(strong.R_err[0])) < 1e-3 * trace_R
    assert np.real(np.trace(weak.R_hat[0])) < 1e-6 * trace_R


def _estimate_samples(imp, corr, pilots, stats, trials, seed):
    M, K, tau = corr.M, corr.K, pilots.tau
    rng = np.random.default_rng(seed)
    estimates, errors = [], []
    for _ in range(trials):
        h = ChannelModel.draw_channel(corr, rng).h
        traj = Impairments.sample_trajectory(M, K, tau, imp, rng)
        psi = TrainingService.simulate_uplink(h, traj, pilots, imp, rng)
        g_hat = TrainingService.lmmse_estimate(psi, corr, pilots, imp, stats).g_hat
        g = LinkSimulator.effective_channels(h, traj, np.array([tau]))[0]
        estimates.append(g_hat[:, 0])
        errors.append(g[:, 0] - g_hat[:, 0])
    return np.array(estimates), np.array(errors)


def test_estimate_covariance_and_orthogonality():
    M, K, tau, trials = 8, 2, 2, 20_000
    imp = make_impairments(
        sigma_phi2=1e-2,
        sigma_varphi2=1e-2,
        kappa_t2_ue=0.01,
        kappa_r2_bs=0.01,
        xi_bs=1.2,
        topology=Topology.SLO,
    )
    corr = _iid(M, K)
    pilots = TrainingService.build_pilots(K, tau, 10 ** 0.2)
    stats = TrainingService.training_statistics(corr, pilots, imp)
    estimates, errors = _estimate_samples(imp, corr, pilots, stats, trials, seed=4)

    sample_cov = estimates.T @ estimates.conj() / trials
    R_hat = stats.R_hat[0]
    assert np.max(np.abs(sample_cov - R_hat)) < 0.05 * np.max(np.abs(R_hat))

    cross = estimates.T @ errors.conj() / trials
    assert np.max(np.abs(cross)) < 0.05 * np.linalg.norm(R_hat, 2)


def test_pilot_contamination_needs_impairments(rng):
    M, K, tau = 3, 2, 2
    R1, R2 = random_psd(rng, M), random_psd(rng, M)
    pilots = TrainingService.build_pilots(K, tau, 2.0)

    def estimate_cov(imp, R_other):
        corr = ChannelModel.from_matrices(np.stack([R1, R_other]))
        return TrainingService.training_statistics(corr, pilots, imp).R_hat[0]

    clean = make_impairments()
    np.testing.assert_allclose(estimate_cov(clean, R2), estimate_cov(clean, 3.0 * R2), atol=1e-12)

    noisy = make_impairments(sigma_phi2=0.05)
    assert np.max(np.abs(estimate_cov(noisy, R2) - estimate_cov(noisy, 3.0 * R2))) > 1e-6
