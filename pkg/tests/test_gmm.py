"""Gaussian mixture fitting, densities, and analytic gradients."""

import numpy as np
import pytest

from radlab.gmm import (RIDGE, FitError, GmmModel, gmm_e_step, gmm_fit_em,
                        gmm_nll, gmm_nll_batch, gmm_nll_grad,
                        gmm_nll_grad_batch, load_gmm, save_gmm)


def _unit_gmm(d=2):
    return GmmModel(np.array([1.0]), np.zeros((1, d)), np.eye(d)[None])


class TestDensity:
    def test_standard_normal_at_origin(self):
        # -log N(0; 0, I_1) = 0.5 ln(2 pi)
        m = _unit_gmm(d=1)
        assert gmm_nll(m, np.zeros(1)) == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_matches_scipy_style_oracle(self):
        rng = np.random.default_rng(0)
        d, k = 3, 2
        a = rng.normal(size=(d, d))
        sig = np.stack([a @ a.T + d * np.eye(d), np.eye(d)])
        m = GmmModel(np.array([0.3, 0.7]), rng.normal(size=(k, d)), sig)
        z = rng.normal(size=(5, d))
        dens = np.zeros(5)
        for j in range(k):
            diff = z - m.mu[j]
            inv = np.linalg.inv(sig[j])
            quad = np.einsum("ni,ij,nj->n", diff, inv, diff)
            norm = (2 * np.pi) ** (d / 2) * np.sqrt(np.linalg.det(sig[j]))
            dens += m.pi[j] * np.exp(-0.5 * quad) / norm
        np.testing.assert_allclose(gmm_nll_batch(m, z), -np.log(dens), rtol=1e-5)

    def test_integrates_to_one_2d(self):
        rng = np.random.default_rng(1)
        mu = rng.normal(size=(2, 2))
        m = GmmModel(np.array([0.4, 0.6]), mu,
                     np.stack([0.5 * np.eye(2), np.array([[1.0, 0.3], [0.3, 0.7]])]))
        xs = np.linspace(-8, 8, 401)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        grid = np.stack([gx.ravel(), gy.ravel()], 1)
        dens = np.exp(-gmm_nll_batch(m, grid).astype(np.float64))
        integral = dens.sum() * (xs[1] - xs[0]) ** 2
        assert integral == pytest.approx(1.0, rel=0.02)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        m = GmmModel(np.array([0.5, 0.5]), rng.normal(size=(2, 3)),
                     np.stack([np.eye(3), 2 * np.eye(3)]))
        z = rng.normal(size=(7, 3))
        batch = gmm_nll_batch(m, z)
        singles = [gmm_nll(m, z[i]) for i in range(7)]
        np.testing.assert_allclose(batch, singles, rtol=1e-6)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            gmm_nll(_unit_gmm(2), np.zeros(3))

    def test_singular_covariance_raises(self):
        with pytest.raises(FitError):
            GmmModel(np.array([1.0]), np.zeros((1, 2)), np.zeros((1, 2, 2)))


class TestGradient:
    def test_single_gaussian_closed_form(self):
        # For one component the gradient is Sigma^{-1} (z - mu).
        rng = np.random.default_rng(3)
        a = rng.normal(size=(2, 2))
        sig = (a @ a.T + 2 * np.eye(2))[None]
        m = GmmModel(np.array([1.0]), rng.normal(size=(1, 2)), sig)
        z = rng.normal(size=2)
        expected = np.linalg.solve(sig[0], z - m.mu[0])
        np.testing.assert_allclose(gmm_nll_grad(m, z), expected, rtol=1e-10)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        m = GmmModel(np.array([0.25, 0.75]), rng.normal(size=(2, 3)),
                     np.stack([np.eye(3), 0.5 * np.eye(3)]))
        z = rng.normal(size=3)
        grad = gmm_nll_grad(m, z)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (gmm_nll(m, z + e) - gmm_nll(m, z - e)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_batch_grad_matches_single(self):
        rng = np.random.default_rng(5)
        m = GmmModel(np.array([0.5, 0.5]), rng.normal(size=(2, 4)),
                     np.stack([np.eye(4), 3 * np.eye(4)]))
        z = rng.normal(size=(6, 4))
        batch = gmm_nll_grad_batch(m, z)
        for i in range(6):
            np.testing.assert_allclose(batch[i], gmm_nll_grad(m, z[i]), rtol=1e-8)


class TestEm:
    def test_loglik_monotone_over_many_fits(self):
        rng = np.random.default_rng(6)
        for trial in range(20):
            z = rng.normal(size=(rng.integers(30, 120), rng.integers(2, 5)))
            _, info = gmm_fit_em(z, int(rng.integers(1, 5)), rng, tol=1e-6)
            hist = info["log_likelihood"]
            diffs = np.diff(hist)
            assert np.all(diffs >= -1e-7), f"trial {trial}: {hist}"

    def test_k1_closed_form(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(200, 3)) * np.array([1.0, 2.0, 0.5]) + 1.0
        m, _ = gmm_fit_em(z, 1, rng, tol=1e-12, max_iter=5)
        np.testing.assert_allclose(m.mu[0], z.mean(0), atol=1e-6)
        diff = z - z.mean(0)
        biased_cov = diff.T @ diff / len(z) + RIDGE * np.eye(3)
        np.testing.assert_allclose(m.sigma[0], biased_cov, atol=1e-6)
        assert m.pi[0] == pytest.approx(1.0)

    def test_two_cluster_recovery(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(300, 2)) * 0.3 + np.array([3.0, 0.0])
        b = rng.normal(size=(300, 2)) * 0.3 + np.array([-3.0, 0.0])
        m, _ = gmm_fit_em(np.concatenate([a, b]), 2, rng, tol=1e-8)
        mus = m.mu[np.argsort(m.mu[:, 0])]
        np.testing.assert_allclose(mus[0], [-3.0, 0.0], atol=0.1)
        np.testing.assert_allclose(mus[1], [3.0, 0.0], atol=0.1)
        np.testing.assert_allclose(m.pi, [0.5, 0.5], atol=0.05)

    def test_e_step_responsibilities_normalized(self):
        rng = np.random.default_rng(9)
        m = GmmModel(np.array([0.2, 0.8]), rng.normal(size=(2, 2)),
                     np.stack([np.eye(2), np.eye(2)]))
        resp, ll = gmm_e_step(m, rng.normal(size=(10, 2)))
        np.testing.assert_allclose(resp.sum(1), 1.0, rtol=1e-12)
        assert ll.shape == (10,)

    def test_needs_enough_samples(self):
        with pytest.raises(FitError):
            gmm_fit_em(np.zeros((2, 2)), 3, np.random.default_rng(0))

    def test_deterministic_given_rng(self):
        z = np.random.default_rng(10).normal(size=(80, 3))
        m1, _ = gmm_fit_em(z, 2, np.random.default_rng(11))
        m2, _ = gmm_fit_em(z, 2, np.random.default_rng(11))
        np.testing.assert_array_equal(m1.mu, m2.mu)
        np.testing.assert_array_equal(m1.sigma, m2.sigma)


class TestPersistence:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(12)
        z = rng.normal(size=(100, 4))
        m, _ = gmm_fit_em(z, 2, rng)
        save_gmm(tmp_path / "g", m, {"source": "test"})
        loaded = load_gmm(tmp_path / "g")
        # storage is float32; the round trip is exact at that precision
        np.testing.assert_array_equal(loaded.pi, m.pi.astype(np.float32))
        np.testing.assert_array_equal(loaded.mu, m.mu.astype(np.float32))
        np.testing.assert_array_equal(loaded.sigma, m.sigma.astype(np.float32))
        zq = rng.normal(size=(5, 4))
        np.testing.assert_allclose(gmm_nll_batch(loaded, zq), gmm_nll_batch(m, zq),
                                   rtol=1e-4)
        reload = load_gmm(tmp_path / "g")
        np.testing.assert_array_equal(gmm_nll_batch(loaded, zq), gmm_nll_batch(reload, zq))
