import math

import numpy as np
import pytest

from microdse import (
    DiscreteLtiModel,
    KalmanEstimator,
    NoiseSpec,
    build_dgu_model,
    discretize_exact,
    effective_process_noise,
    innovation_consistency,
    steady_state_covariance,
)
from microdse.models import DguParams

OMEGA_60 = 2 * math.pi * 60.0
DGU1 = DguParams(r_t=1.1e-3, l_t=90e-6, c_t=50e-6)


def scalar_estimator(a=1.0, b=0.0, q=0.0, r=1.0, p0=1.0, x0=0.0):
    model = DiscreteLtiModel(np.array([[a]]), np.array([[b]]), 1.0, "euler")
    return KalmanEstimator(
        model,
        q_eff=np.array([[q]]),
        r=np.array([[r]]),
        x0=np.array([x0]),
        p0=np.array([[p0]]),
    )


def dgu_discrete(t_s=1e-4):
    return discretize_exact(build_dgu_model(DGU1, OMEGA_60), t_s)


def test_noise_spec_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValueError, match="symmetric"):
        NoiseSpec(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), np.eye(2))
    with pytest.raises(ValueError, match="semidefinite"):
        NoiseSpec(np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2), np.eye(2))


def test_noise_spec_from_std():
    spec = NoiseSpec.from_std([1.0, 2.0], [3.0, 4.0], [0.5, 0.5])
    np.testing.assert_array_equal(spec.q, np.diag([1.0, 4.0]))
    np.testing.assert_array_equal(spec.r, np.diag([9.0, 16.0]))


def test_effective_process_noise_limits():
    q = np.diag([1.0, 2.0])
    np.testing.assert_array_equal(
        effective_process_noise(q, np.eye(2), np.zeros((2, 2))), q
    )
    m = np.diag([3.0, 4.0])
    np.testing.assert_array_equal(
        effective_process_noise(np.zeros((2, 2)), np.eye(2), m), m
    )


def test_effective_process_noise_hand_case():
    out = effective_process_noise(
        np.eye(2), np.array([[2.0], [0.0]]), np.array([[1.0]])
    )
    np.testing.assert_array_equal(out, np.array([[5.0, 0.0], [0.0, 1.0]]))


def test_effective_process_noise_dimension_mismatch():
    with pytest.raises(ValueError):
        effective_process_noise(np.eye(3), np.ones((2, 1)), np.eye(1))
    with pytest.raises(ValueError):
        effective_process_noise(np.eye(2), np.ones((2, 1)), np.eye(2))


def test_effective_process_noise_psd_on_random_draws():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, mdim = rng.integers(1, 6), rng.integers(1, 6)
        gq = rng.standard_normal((n, n))
        gm = rng.standard_normal((mdim, mdim))
        b = rng.standard_normal((n, mdim))
        out = effective_process_noise(gq @ gq.T, b, gm @ gm.T)
        assert np.linalg.eigvalsh(out).min() >= -1e-10 * max(1.0, np.abs(out).max())


def test_predict_identity_keeps_state():
    est = scalar_estimator(a=1.0, q=0.0, p0=1.0, x0=3.0)
    est.predict(np.array([0.0]))
    assert est.x_hat[0] == 3.0
    assert est.p[0, 0] == 1.0


def test_predict_scalar_covariance():
    est = scalar_estimator(a=2.0, q=0.5, p0=1.0)
    est.predict(np.array([0.0]))
    assert est.p[0, 0] == 4.5


def test_predict_rejects_wrong_input_shape():
    est = scalar_estimator()
    with pytest.raises(ValueError):
        est.predict(np.array([1.0, 2.0]))


def test_update_scalar_hand_recursion():
    # P=1, R=1, prior estimate 0, measurement 2:
    # S=2, K=0.5, posterior estimate 1, Joseph P = 0.25 + 0.25 = 0.5
    est = scalar_estimator(p0=1.0, r=1.0, x0=0.0)
    innovation, postfit = est.update(np.array([2.0]))
    assert innovation[0] == 2.0
    assert est.x_hat[0] == 1.0
    assert est.p[0, 0] == 0.5
    assert postfit[0] == 1.0


def test_update_huge_r_leaves_estimate():
    model = DiscreteLtiModel(np.eye(2), np.zeros((2, 1)), 1.0, "euler")
    est = KalmanEstimator(
        model, q_eff=np.zeros((2, 2)), r=1e12 * np.eye(2), p0=np.eye(2),
        x0=np.array([1.0, -1.0]),
    )
    est.update(np.array([5.0, 5.0]))
    assert np.abs(est.x_hat - np.array([1.0, -1.0])).max() < 1e-10


def test_update_zero_innovation_contracts_covariance():
    est = scalar_estimator(p0=2.0, r=1.0, x0=0.7)
    innovation, _ = est.update(np.array([0.7]))
    assert innovation[0] == 0.0
    assert est.x_hat[0] == 0.7
    assert est.p[0, 0] < 2.0


def test_step_equals_predict_then_update():
    disc = dgu_discrete()
    spec = NoiseSpec.from_std([0.5] * 4, [30.0, 30.0, 20.0, 20.0], [2.0, 2.0, 1.0, 1.0])
    a = KalmanEstimator(disc, noise=spec)
    b = KalmanEstimator(disc, noise=spec)
    rng = np.random.default_rng(5)
    for _ in range(50):
        u = rng.standard_normal(4)
        z = rng.standard_normal(4)
        a.step(u, z)
        b.predict(u)
        b.update(z)
        np.testing.assert_array_equal(a.x_hat, b.x_hat)
        np.testing.assert_array_equal(a.p, b.p)


def test_exact_measurements_drive_estimate_to_truth():
    rng = np.random.default_rng(17)
    a = rng.standard_normal((3, 3))
    a *= 0.9 / np.abs(np.linalg.eigvals(a)).max()
    b = rng.standard_normal((3, 2))
    model = DiscreteLtiModel(a, b, 1.0, "euler")
    est = KalmanEstimator(
        model,
        q_eff=np.zeros((3, 3)),
        r=1e-9 * np.eye(3),
        x0=np.array([100.0, -50.0, 20.0]),
        p0=np.eye(3),
    )
    x = np.zeros(3)
    for _ in range(100):
        u = rng.standard_normal(2)
        x = a @ x + b @ u
        est.step(u, x)
    assert np.abs(est.x_hat - x).max() < 1e-6


def _riccati_oracle(a, q, r, tol=1e-14, iters=500000):
    # direct iteration of the prediction/innovation/gain/Joseph equations
    n = a.shape[0]
    p = r.copy()
    for _ in range(iters):
        p_prior = a @ p @ a.T + q
        s = r + p_prior
        k = p_prior @ np.linalg.inv(s)
        i_k = np.eye(n) - k
        p_next = i_k @ p_prior @ i_k.T + k @ r @ k.T
        if np.abs(p_next - p).max() < tol * max(1.0, np.abs(p_next).max()):
            return p_next
        p = p_next
    raise AssertionError("oracle iteration did not converge")


def test_covariance_converges_to_riccati_fixed_point():
    disc = dgu_discrete()
    q = np.diag([0.01, 0.01, 0.04, 0.04])
    r = np.eye(4)
    est = KalmanEstimator(disc, q_eff=q, r=r)
    rng = np.random.default_rng(2)
    for _ in range(3000):
        est.step(rng.standard_normal(4), rng.standard_normal(4))
    p_star = _riccati_oracle(disc.a_d, q, r)
    assert np.abs(est.p - p_star).max() < 1e-9
    assert np.abs(steady_state_covariance(disc.a_d, q, r) - p_star).max() < 1e-9
    # the limit satisfies the fixed-point equation itself
    p_prior = disc.a_d @ p_star @ disc.a_d.T + q
    k = p_prior @ np.linalg.inv(r + p_prior)
    i_k = np.eye(4) - k
    residual = i_k @ p_prior @ i_k.T + k @ r @ k.T - p_star
    assert np.abs(residual).max() < 1e-9


def test_covariance_stays_symmetric_psd_under_random_steps():
    disc = dgu_discrete()
    spec = NoiseSpec.from_std([0.5] * 4, [30.0, 30.0, 20.0, 20.0], [2.0, 2.0, 1.0, 1.0])
    est = KalmanEstimator(disc, noise=spec)
    rng = np.random.default_rng(9)
    for _ in range(2000):
        est.step(rng.standard_normal(4) * 100, rng.standard_normal(4) * 100)
        assert np.abs(est.p - est.p.T).max() < 1e-10
        assert np.linalg.eigvalsh(est.p).min() >= -1e-10


def test_larger_r_never_gains_more():
    # the covariance reduction K S K^T = P_prior - P_post shrinks when R grows
    rng = np.random.default_rng(21)
    for n in (1, 2):
        g = rng.standard_normal((n, n))
        p0 = g @ g.T + np.eye(n)
        extra = rng.standard_normal((n, n))
        r1 = np.eye(n)
        r2 = r1 + extra @ extra.T
        reductions = []
        for r in (r1, r2):
            model = DiscreteLtiModel(np.eye(n), np.zeros((n, 1)), 1.0, "euler")
            est = KalmanEstimator(model, q_eff=np.zeros((n, n)), r=r, p0=p0)
            est.update(rng.standard_normal(n))
            reductions.append(np.diag(p0 - est.p))
        assert (reductions[1] <= reductions[0] + 1e-12).all()


def test_input_noise_term_has_zero_mean():
    disc = dgu_discrete()
    m_cov = np.diag([4.0, 4.0, 1.0, 1.0])
    rng = np.random.default_rng(33)
    draws = rng.multivariate_normal(np.zeros(4), m_cov, size=100_000)
    pushed = draws @ disc.b_d.T
    mean = pushed.mean(axis=0)
    sigma = math.sqrt(np.trace(disc.b_d @ m_cov @ disc.b_d.T))
    assert np.linalg.norm(mean) < 4.0 * sigma / math.sqrt(100_000)


def _generative_run(steps, q_std, r_std, seed, bias=0.0):
    disc = dgu_discrete()
    q = np.diag(np.square(q_std))
    r = np.diag(np.square(r_std))
    est = KalmanEstimator(disc, q_eff=q, r=r)
    rng = np.random.default_rng(seed)
    x = np.zeros(4)
    u = np.array([11000.0, 100.0, 150.0, 30.0])
    innovations = np.empty((steps, 4))
    covs = np.empty((steps, 4, 4))
    for k in range(steps):
        x = disc.a_d @ x + disc.b_d @ u + rng.multivariate_normal(np.zeros(4), q)
        z = x + rng.multivariate_normal(np.zeros(4), r) + bias
        innovation, _ = est.step(u, z)
        innovations[k] = innovation
        covs[k] = est.innovation_cov
    return innovations, covs


def test_innovation_consistency_on_generative_model():
    innovations, covs = _generative_run(
        10_000, [0.5, 0.5, 0.5, 0.5], [30.0, 30.0, 20.0, 20.0], seed=101
    )
    stat = innovation_consistency(innovations, covs)
    assert 3.5 < stat < 4.5


def test_innovation_consistency_zero_noise_is_zero():
    disc = dgu_discrete()
    est = KalmanEstimator(disc, q_eff=np.zeros((4, 4)), r=np.eye(4))
    x = np.zeros(4)
    u = np.array([500.0, 10.0, 5.0, 1.0])
    innovations = []
    covs = []
    for _ in range(100):
        x = disc.a_d @ x + disc.b_d @ u
        innovation, _ = est.step(u, x)
        innovations.append(innovation)
        covs.append(est.innovation_cov)
    stat = innovation_consistency(np.array(innovations), np.array(covs))
    assert stat < 1e-12


def test_innovation_consistency_detects_bias():
    r_std = [30.0, 30.0, 20.0, 20.0]
    unbiased, covs_u = _generative_run(3000, [0.5] * 4, r_std, seed=7)
    biased, covs_b = _generative_run(
        3000, [0.5] * 4, r_std, seed=7, bias=5.0 * np.asarray(r_std)
    )
    stat_u = innovation_consistency(unbiased, covs_u)
    stat_b = innovation_consistency(biased, covs_b)
    assert stat_b > 1.25 * 4
    assert stat_b > stat_u + 5.0


def test_innovation_consistency_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        innovation_consistency(np.empty((0, 4)), np.empty((0, 4, 4)))


def test_singular_innovation_covariance_raises():
    est = scalar_estimator(q=0.0, r=0.0, p0=0.0)
    with pytest.raises(np.linalg.LinAlgError):
        est.update(np.array([1.0]))


def test_update_rejects_wrong_measurement_shape():
    est = scalar_estimator()
    with pytest.raises(ValueError):
        est.update(np.array([1.0, 2.0]))
