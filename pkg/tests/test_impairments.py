import numpy as np
import pytest

from app.schemas.system import Topology
from app.services.impairments import Impairments

from tests.factories import make_impairments


def test_zero_variance_trajectory_stays_at_zero():
    traj = Impairments.sample_trajectory(4, 2, 10, make_impairments(topology=Topology.SLO), np.random.default_rng(0))
    assert traj.n_slots == 11
    assert not np.any(traj.phi) and not np.any(traj.varphi)


def test_advance_phase_keeps_clo_antennas_in_lockstep():
    imp = make_impairments(sigma_phi2=1e-2, sigma_varphi2=1e-3)
    rng = np.random.default_rng(1)
    traj = Impairments.initial_trajectory(5, 2, Topology.CLO)
    for _ in range(4):
        traj = Impairments.advance_phase(traj, imp, rng)
    assert traj.phi.shape == (5, 5)
    assert np.all(traj.phi == traj.phi[0])
    assert np.any(traj.phi[0] != 0.0)


def test_sampled_clo_rows_are_identical():
    imp = make_impairments(sigma_phi2=1e-2, topology=Topology.CLO)
    traj = Impairments.sample_trajectory(6, 2, 20, imp, np.random.default_rng(2))
    assert np.all(traj.phi == traj.phi[0])


def test_slo_increment_variance():
    # antennas are independent walks under SLO, so they serve as samples
    sigma2, n = 1e-2, 50
    imp = make_impairments(sigma_phi2=sigma2, topology=Topology.SLO)
    traj = Impairments.sample_trajectory(50_000, 1, n, imp, np.random.default_rng(3))
    assert np.var(traj.phi[:, n] - traj.phi[:, 0]) == pytest.approx(n * sigma2, rel=0.03)


def test_rotation_is_identity_at_anchor_and_without_noise():
    imp = make_impairments(sigma_phi2=1e-2, sigma_varphi2=1e-3, topology=Topology.SLO)
    traj = Impairments.sample_trajectory(4, 2, 6, imp, np.random.default_rng(4))
    _, rel = Impairments.rotation(traj, 1, 2, 2)
    np.testing.assert_allclose(rel, np.eye(4))

    still = Impairments.sample_trajectory(4, 2, 6, make_impairments(), np.random.default_rng(4))
    Theta, rel = Impairments.rotation(still, 0, 5, 2)
    np.testing.assert_array_equal(Theta, np.eye(4))
    np.testing.assert_array_equal(rel, np.eye(4))


def test_rotation_is_diagonal_unitary():
    imp = make_impairments(sigma_phi2=0.1, sigma_varphi2=0.1, topology=Topology.SLO)
    traj = Impairments.sample_trajectory(3, 2, 4, imp, np.random.default_rng(5))
    Theta, rel = Impairments.rotation(traj, 0, 4, 1)
    for matrix in (Theta, rel):
        assert abs(abs(np.linalg.det(matrix)) - 1.0) < 1e-12
        np.testing.assert_array_equal(matrix, np.diag(np.diag(matrix)))


def test_pn_trace_limit_closed_forms():
    imp = make_impairments(sigma_phi2=1e-4)
    assert Impairments.pn_trace_limit(make_impairments(), 100, Topology.SLO) == 1.0
    assert Impairments.pn_trace_limit(imp, 100, Topology.CLO) == 1.0
    assert abs(Impairments.pn_trace_limit(imp, 100, Topology.SLO)) == pytest.approx(np.exp(-0.005), rel=1e-12)
    assert abs(Impairments.pn_trace_limit(imp, 100, Topology.SLO)) == pytest.approx(0.99501, abs=1e-5)


def test_pn_trace_limit_rotation_keeps_magnitude():
    imp = make_impairments(sigma_phi2=1e-3, sigma_varphi2=1e-3)
    values = Impairments.pn_trace_limit(imp, np.arange(1, 6), Topology.SLO, np.random.default_rng(0))
    np.testing.assert_allclose(np.abs(values), np.exp(-0.5e-3 * np.arange(1, 6)))


def test_empirical_pn_trace_matches_limit():
    imp = make_impairments(sigma_phi2=1e-3, sigma_varphi2=1e-4, topology=Topology.SLO)
    rng = np.random.default_rng(6)
    magnitudes = [
        abs(Impairments.pn_trace(Impairments.sample_trajectory(400, 1, 100, imp, rng), 0, 100, 0))
        for _ in range(100)
    ]
    limit = abs(Impairments.pn_trace_limit(imp, 100, Topology.SLO))
    assert np.mean(magnitudes) == pytest.approx(limit, rel=0.02)


def test_empirical_pn_trace_error_shrinks_with_M():
    # E|tr/M|^2 exceeds the squared limit by (1 - limit^2) / M
    imp = make_impairments(sigma_phi2=0.1, topology=Topology.SLO)
    n = 20
    limit2 = abs(Impairments.pn_trace_limit(imp, n, Topology.SLO)) ** 2
    rng = np.random.default_rng(7)
    errors = []
    for M in (16, 64, 256):
        powers = [
            abs(Impairments.pn_trace(Impairments.sample_trajectory(M, 1, n, imp, rng), 0, n, 0)) ** 2
            for _ in range(2000)
        ]
        errors.append(abs(np.mean(powers) - limit2))
    assert errors[0] > errors[1] > errors[2]


def test_tx_distortion_cov():
    np.testing.assert_array_equal(Impairments.tx_distortion_cov(0.0, [3.0, 4.0]), np.zeros((2, 2)))
    np.testing.assert_allclose(Impairments.tx_distortion_cov(0.01, [2.0, 2.0]), np.diag([0.02, 0.02]))
    rho, M = 7.0, 5
    cov = Impairments.tx_distortion_cov(0.02, np.full(M, rho / M))
    assert np.trace(cov) == pytest.approx(0.02 * rho)


def test_rx_distortion_var_ue(rng):
    assert Impairments.rx_distortion_var_ue(0.0, np.ones(3), np.eye(3)) == 0.0
    e1 = np.array([1.0, 0.0, 0.0])
    assert Impairments.rx_distortion_var_ue(0.05, e1, np.diag([3.0, 1.0, 1.0])) == pytest.approx(0.15)

    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    Q = np.diag(rng.uniform(0.5, 2.0, 4))
    oracle = 0.03 * np.sum(np.abs(h) ** 2 * np.diag(Q))
    assert Impairments.rx_distortion_var_ue(0.03, h, Q) == pytest.approx(oracle, rel=1e-12)
    assert Impairments.rx_distortion_var_ue(0.06, h, Q) == pytest.approx(2 * oracle, rel=1e-12)


def test_rx_distortion_cov_bs():
    channels = np.ones((3, 1))
    np.testing.assert_allclose(Impairments.rx_distortion_cov_bs(0.1, channels, [2.0]), 0.2 * np.eye(3))
    np.testing.assert_array_equal(Impairments.rx_distortion_cov_bs(0.1, np.zeros((3, 2)), [1.0, 1.0]), 0.0)


def test_batched_rx_distortion_var_ue(rng):
    H = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    Q = A @ A.conj().T
    batch = Impairments.rx_distortion_var_ue(0.02, H, Q)
    assert batch.shape == (3, 2)
    assert batch[2, 1] == pytest.approx(Impairments.rx_distortion_var_ue(0.02, H[2, 1], Q), rel=1e-12)


def test_downlink_distortion_uses_full_covariance(rng):
    imp = make_impairments(kappa_t2_bs=0.01, kappa_r2_ue=0.03)
    G = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    beams = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    Q_bs = beams @ beams.conj().T
    cov = Impairments.downlink_distortion(imp, Q_bs, G)
    np.testing.assert_allclose(cov.Lambda, 0.01 * np.sum(np.abs(beams) ** 2, axis=1), rtol=1e-12)
    received = np.sum(np.abs(G.conj().T @ beams) ** 2, axis=1)
    assert cov.Upsilon.shape == (1, 2)
    np.testing.assert_allclose(cov.Upsilon[0], 0.03 * received, rtol=1e-12)

    silent = Impairments.downlink_distortion(make_impairments(), Q_bs, np.stack([G, G]))
    assert silent.Upsilon.shape == (2, 2)
    assert not np.any(silent.Upsilon) and not np.any(silent.Lambda)


def test_draw_gaussian_moments():
    rng = np.random.default_rng(8)
    assert not np.any(Impairments.draw_gaussian(np.zeros(3), rng))

    samples = Impairments.draw_gaussian(np.eye(2), rng, size=100_000)
    sample_cov = samples.T @ samples.conj() / samples.shape[0]
    assert np.max(np.abs(sample_cov - np.eye(2))) < 0.02

    samples = Impairments.draw_gaussian(np.array([2.0, 0.5]), rng, size=100_000)
    cross = np.mean(samples[:, 0] * samples[:, 1].conj())
    assert abs(cross) < 0.02
    assert np.mean(np.abs(samples[:, 0]) ** 2) == pytest.approx(2.0, rel=0.02)
