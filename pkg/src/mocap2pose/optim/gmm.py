"""Full-covariance Gaussian mixtures: EM fitting and a differentiable negative log density."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

GMM_FORMAT = "mocap2pose-gmm-v1"


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    log_likelihood_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(
            self.means.shape[0], self.means.shape[1], self.means.shape[1])
        if self.weights.shape != (self.means.shape[0],):
            raise ValueError("weights and means disagree on the number of components")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-6:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        self._chol = np.linalg.cholesky(self.covariances)  # raises if not positive definite
        self._log_norm = (np.log(np.maximum(self.weights, 1e-300))
                          - 0.5 * self.dim * np.log(2 * np.pi)
                          - np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _component_log_prob(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted per-component log densities (N, K) and whitened residuals (K, N, D)."""
        diff = x[None, :, :] - self.means[:, None, :]
        z = np.stack([solve_triangular(L, d.T, lower=True).T for L, d in zip(self._chol, diff)])
        return self._log_norm[None, :] - 0.5 * (z ** 2).sum(axis=2).T, z

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        lp, _ = self._component_log_prob(x2)
        out = logsumexp(lp, axis=1)
        return out if np.ndim(x) > 1 else out[0]


def gmm_neg_log_prob(model: GmmModel, x: np.ndarray) -> tuple[np.ndarray | float, np.ndarray]:
    """Negative log density and its gradient with respect to ``x``.

    Accepts a single point (D,) or a batch (N, D). The gradient is the
    responsibility-weighted sum of precision-times-residual terms.
    """
    single = np.ndim(x) == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    lp, z = model._component_log_prob(x2)
    total = logsumexp(lp, axis=1)
    resp = np.exp(lp - total[:, None])  # (N, K)
    # Sigma^-1 (x - mu) = L^-T z
    prec_diff = np.stack([solve_triangular(L, zk.T, lower=True, trans="T").T
                          for L, zk in zip(model._chol, z)])  # (K, N, D)
    grad = np.einsum("nk,knd->nd", resp, prec_diff)
    if single:
        return float(-total[0]), grad[0]
    return -total, grad


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        if d2.sum() <= 0:
            idx = rng.integers(len(x))
        else:
            idx = rng.choice(len(x), p=d2 / d2.sum())
        centres.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def gmm_fit_em(samples: np.ndarray, n_components: int, seed: int = 0, max_iterations: int = 200,
               tolerance: float = 1e-8, regularization: float = 1e-6) -> GmmModel:
    """Fit a full-covariance mixture by expectation-maximisation.

    Means start from a k-means++ draw; ``regularization`` is added to every
    covariance diagonal. A component whose responsibility mass collapses is
    re-seeded at the sample farthest from all current means.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must be (N, D)")
    n, d = x.shape
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n <= n_components * d:
        raise ValueError(f"need more than K*D = {n_components * d} samples, got {n}")
    rng = np.random.default_rng(seed)
    means = _kmeans_pp_init(x, n_components, rng)
    # hard assignment to seed the first covariances
    labels = np.argmin(((x[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1)
    resp = np.eye(n_components)[labels]
    history: list[float] = []
    model = None
    eye = np.eye(d)
    for it in range(max_iterations):
        # M-step
        nk = resp.sum(axis=0)
        for k in np.flatnonzero(nk < 1e-10 * n):
            far = np.argmax(np.min(((x[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1))
            warnings.warn(f"GMM component {k} became empty; re-seeding from sample {far}", RuntimeWarning)
            resp[:, k] = 0.0
            resp[far] = 0.0
            resp[far, k] = 1.0
            nk = resp.sum(axis=0)
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((n_components, d, d))
        for k in range(n_components):
            diff = x - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + regularization * eye
        model = GmmModel(weights, means, covs)
        # E-step
        lp, _ = model._component_log_prob(x)
        total = logsumexp(lp, axis=1)
        ll = float(total.mean())
        history.append(ll)
        resp = np.exp(lp - total[:, None])
        if it > 0 and abs(history[-1] - history[-2]) < tolerance * max(1.0, abs(history[-1])):
            break
    model.log_likelihood_history = history
    logger.debug("GMM EM: %d iterations, mean log-likelihood %.4f", len(history), history[-1])
    return model


def save_gmm(model: GmmModel, path: str | Path) -> None:
    np.savez(Path(path), format=np.array(GMM_FORMAT), weights=model.weights, means=model.means,
             covariances=model.covariances)


def load_gmm(path: str | Path) -> GmmModel:
    with np.load(Path(path), allow_pickle=False) as data:
        if "format" not in data or str(data["format"]) != GMM_FORMAT:
            raise ValueError(f"{path}: not a {GMM_FORMAT} file")
        return GmmModel(data["weights"], data["means"], data["covariances"])
