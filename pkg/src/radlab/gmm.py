"""Full-covariance Gaussian mixture fitted by expectation-maximization.

Interfaces take and return float32; all internal math runs in float64 for
Cholesky stability at representation dimensions up to a few hundred.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crtf

RIDGE = 1e-6


class FitError(RuntimeError):
    pass


@dataclass
class GmmModel:
    pi: np.ndarray     # (K,)
    mu: np.ndarray     # (K, d)
    sigma: np.ndarray  # (K, d, d)
    _chol: np.ndarray = field(default=None, repr=False)
    _logdet: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, np.float64)
        self.mu = np.asarray(self.mu, np.float64)
        self.sigma = np.asarray(self.sigma, np.float64)
        self.refresh()

    @property
    def k(self) -> int:
        return len(self.pi)

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def refresh(self):
        """Recompute cached Cholesky factors and log-determinants."""
        try:
            self._chol = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular covariance despite ridge: {exc}") from exc
        self._logdet = 2.0 * np.log(
            np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1)


def _component_log_density(model: GmmModel, z: np.ndarray) -> np.ndarray:
    """log N(z_i; mu_k, Sigma_k) for all samples and components, (n, K)."""
    n, d = z.shape
    out = np.empty((n, model.k))
    for k in range(model.k):
        diff = (z - model.mu[k]).T  # (d, n)
        y = np.linalg.solve(model._chol[k], diff)
        maha = (y ** 2).sum(axis=0)
        out[:, k] = -0.5 * (d * np.log(2.0 * np.pi) + model._logdet[k] + maha)
    return out


def _log_joint(model: GmmModel, z: np.ndarray) -> np.ndarray:
    return _component_log_density(model, z) + np.log(model.pi)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def gmm_e_step(model: GmmModel, z: np.ndarray):
    """Responsibilities (n, K) and per-sample log-likelihoods (n,)."""
    z = np.asarray(z, np.float64)
    lj = _log_joint(model, z)
    ll = _logsumexp(lj, axis=1)
    resp = np.exp(lj - ll[:, None])
    return resp, ll


def gmm_m_step(z: np.ndarray, resp: np.ndarray, rng: np.random.Generator | None = None,
               fit_log: list | None = None):
    """Weighted MLE updates with ridge-regularized covariances.

    Components whose total responsibility collapses below 1e-8 get their
    mean reinitialized to a random data point (recorded in the fit log).
    """
    z = np.asarray(z, np.float64)
    n, d = z.shape
    k = resp.shape[1]
    nk = resp.sum(axis=0)
    pi = nk / n
    mu = np.empty((k, d))
    sigma = np.empty((k, d, d))
    for j in range(k):
        if nk[j] < 1e-8:
            if rng is None:
                raise FitError(f"component {j} collapsed and no rng given for rescue")
            mu[j] = z[rng.integers(n)]
            sigma[j] = np.cov(z, rowvar=False).reshape(d, d) + RIDGE * np.eye(d)
            pi[j] = 1.0 / n
            if fit_log is not None:
                fit_log.append(f"component {j} reinitialized (empty responsibility)")
            continue
        mu[j] = resp[:, j] @ z / nk[j]
        diff = z - mu[j]
        sigma[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + RIDGE * np.eye(d)
    pi = pi / pi.sum()
    return pi, mu, sigma


def gmm_fit_em(z: np.ndarray, k: int, rng: np.random.Generator,
               tol: float = 0.1, max_iter: int = 500):
    """EM fit: means start at K distinct random data points, covariances at
    the global covariance plus ridge, weights uniform. Stops when the mean
    per-sample log-likelihood changes by less than ``tol``."""
    z = np.asarray(z, np.float64)
    n, d = z.shape
    if n < k:
        raise FitError(f"need at least K={k} samples, got {n}")
    idx = rng.choice(n, size=k, replace=False)
    mu = z[idx].copy()
    base_sigma = np.cov(z, rowvar=False).reshape(d, d) + RIDGE * np.eye(d)
    model = GmmModel(np.full(k, 1.0 / k), mu, np.repeat(base_sigma[None], k, axis=0))

    fit_log: list[str] = []
    history: list[float] = []
    prev = -np.inf
    for it in range(max_iter):
        resp, ll = gmm_e_step(model, z)
        mean_ll = float(ll.mean())
        history.append(mean_ll)
        if abs(mean_ll - prev) < tol:
            break
        prev = mean_ll
        pi, mu, sigma = gmm_m_step(z, resp, rng=rng, fit_log=fit_log)
        model = GmmModel(pi, mu, sigma)
    return model, {"log_likelihood": history, "events": fit_log}


def gmm_nll(model: GmmModel, z: np.ndarray) -> float:
    """-log sum_k pi_k N(z; mu_k, Sigma_k), evaluated in the log domain."""
    z = np.asarray(z, np.float64).reshape(1, -1)
    if z.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model d={model.dim}, z d={z.shape[1]}")
    return float(-_logsumexp(_log_joint(model, z), axis=1)[0])


def gmm_nll_batch(model: GmmModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, np.float64)
    return (-_logsumexp(_log_joint(model, z), axis=1)).astype(np.float32)


def gmm_nll_grad(model: GmmModel, z: np.ndarray) -> np.ndarray:
    """Analytic gradient of the NLL: sum_k r_k(z) Sigma_k^{-1} (z - mu_k)."""
    zq = np.asarray(z, np.float64).reshape(1, -1)
    resp, _ = gmm_e_step(model, zq)
    grad = np.zeros(model.dim)
    for k in range(model.k):
        diff = zq[0] - model.mu[k]
        y = np.linalg.solve(model._chol[k], diff)
        grad += resp[0, k] * np.linalg.solve(model._chol[k].T, y)
    return grad.astype(np.float64)


def gmm_nll_grad_batch(model: GmmModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, np.float64)
    resp, _ = gmm_e_step(model, z)
    grad = np.zeros_like(z)
    for k in range(model.k):
        diff = (z - model.mu[k]).T
        y = np.linalg.solve(model._chol[k], diff)
        grad += resp[:, k, None] * np.linalg.solve(model._chol[k].T, y).T
    return grad


def save_gmm(directory: str | Path, model: GmmModel, manifest: dict[str, str]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    crtf.save_tensor(directory / "pi.crtf", model.pi)
    crtf.save_tensor(directory / "mu.crtf", model.mu)
    crtf.save_tensor(directory / "sigma.crtf", model.sigma)
    crtf.save_manifest(directory / "manifest.txt", {"model": "gmm", "k": str(model.k),
                                                    "dim": str(model.dim), **manifest})


def load_gmm(directory: str | Path) -> GmmModel:
    directory = Path(directory)
    return GmmModel(crtf.load_tensor(directory / "pi.crtf"),
                    crtf.load_tensor(directory / "mu.crtf"),
                    crtf.load_tensor(directory / "sigma.crtf"))
