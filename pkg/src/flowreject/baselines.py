"""Classical anomaly scorers fit on TP features only.

All estimators follow the sklearn convention (``fit`` / ``score_samples`` /
``get_params``) with one shared sign convention: ``score_samples`` returns
an anomaly score, higher = more FP-like.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError


def _check_fit_input(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 2:
        raise DataError(f"need at least 2 samples to fit, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in fit data")
    return X


def _check_query(X, d: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != d:
        raise DataError(f"expected {d} features, got {X.shape[1]}")
    return X


class KDEScorer(BaseEstimator):
    """Gaussian kernel density estimate; score is the negative log density.

    Bandwidth defaults to Scott's factor ``n**(-1/(d+4))`` times the mean
    per-coordinate standard deviation of the fit data.
    """

    def __init__(self, bandwidth=None):
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        X = _check_fit_input(X)
        self.X_fit_ = X
        n, d = X.shape
        if self.bandwidth is not None:
            self.bandwidth_ = float(self.bandwidth)
        else:
            sigma = float(np.mean(X.std(axis=0, ddof=1)))
            if sigma == 0.0:
                raise DataError("degenerate fit data: zero variance in every direction")
            self.bandwidth_ = n ** (-1.0 / (d + 4)) * sigma
        return self

    def score_samples(self, X):
        X = _check_query(X, self.X_fit_.shape[1])
        n, d = self.X_fit_.shape
        bw = self.bandwidth_
        # log (1/n) sum_i N(x; x_i, bw^2 I)
        d2 = ((X[:, None, :] - self.X_fit_[None, :, :]) ** 2).sum(axis=2)
        log_kernel = -0.5 * d2 / bw ** 2 - 0.5 * d * np.log(2 * np.pi * bw ** 2)
        return -(logsumexp(log_kernel, axis=1) - np.log(n))


class PCAScorer(BaseEstimator):
    """Reconstruction error after projection onto the top-k principal axes."""

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = _check_fit_input(X)
        n, d = X.shape
        k = int(self.n_components)
        if not 1 <= k <= min(n - 1, d):
            raise ConfigError(
                f"n_components={k} out of range for {n} samples in {d} dimensions"
            )
        self.mean_ = X.mean(axis=0)
        _, _, vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        self.components_ = vt[:k]
        return self

    def score_samples(self, X):
        X = _check_query(X, self.mean_.shape[0])
        centered = X - self.mean_
        recon = (centered @ self.components_.T) @ self.components_
        return ((centered - recon) ** 2).sum(axis=1)


class GaussianScorer(BaseEstimator):
    """Mahalanobis distance under a shrinkage-regularized Gaussian fit.

    Covariance is shrunk toward the scaled identity:
    ``(1 - shrinkage) * S + shrinkage * trace(S)/d * I``.
    """

    def __init__(self, shrinkage=0.05):
        self.shrinkage = shrinkage

    def fit(self, X, y=None):
        X = _check_fit_input(X)
        d = X.shape[1]
        self.mean_ = X.mean(axis=0)
        cov = np.cov(X, rowvar=False, ddof=1).reshape(d, d)
        lam = float(self.shrinkage)
        cov = (1.0 - lam) * cov + lam * (np.trace(cov) / d) * np.eye(d)
        # fail early on a still-degenerate fit
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() <= 0:
            raise DataError(
                "covariance is not positive definite; raise the shrinkage parameter"
            )
        self.covariance_ = cov
        self.precision_ = np.linalg.inv(cov)
        return self

    def score_samples(self, X):
        X = _check_query(X, self.mean_.shape[0])
        centered = X - self.mean_
        return np.einsum("ij,jk,ik->i", centered, self.precision_, centered)


BASELINES = {
    "kde": KDEScorer,
    "pca": PCAScorer,
    "gaussian": GaussianScorer,
}


def make_baseline(kind: str, **kwargs) -> BaseEstimator:
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}, expected one of {sorted(BASELINES)}")
    return BASELINES[kind](**kwargs)
