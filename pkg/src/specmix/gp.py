"""Exact multi-output GP linear algebra: Gram assembly, prior sampling,
log marginal likelihood, posterior prediction and the SMSE metric.

Data is interleaved: every observation is a (location, channel) pair, so
channels may be observed at different locations.  Factorizations are
dense; the prior-sampling path climbs a fixed jitter ladder while the
likelihood/prediction path factorizes K + noise as-is and reports
failure, so singular trained models are rejected rather than silently
regularized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DegenerateVarianceError, NotPSDError

JITTER_LADDER = tuple(10.0 ** e for e in range(-10, -3))


@dataclass(eq=False)
class MultiOutputDataset:
    """Interleaved multi-output observations."""

    locations: np.ndarray
    channels: np.ndarray
    targets: np.ndarray
    channel_stats: dict | None = None

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.channels = np.atleast_1d(np.asarray(self.channels, dtype=int))
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        n = self.locations.shape[0]
        if self.channels.shape[0] != n or self.targets.shape[0] != n:
            raise ValueError("locations, channels and targets must align")
        if np.any(self.channels < 0):
            raise ValueError("channel indices must be nonnegative")
        if not (np.all(np.isfinite(self.locations))
                and np.all(np.isfinite(self.targets))):
            raise ValueError("locations and targets must be finite")

    def __len__(self):
        return self.locations.shape[0]


@dataclass(eq=False)
class GPModel:
    """A kernel plus per-channel Gaussian observation noise."""

    kernel: object
    noise_variance: np.ndarray

    def __post_init__(self):
        nv = np.atleast_1d(np.asarray(self.noise_variance, dtype=float))
        if nv.shape[0] == 1:
            nv = np.full(self.kernel.n_channels, nv[0])
        if nv.shape[0] != self.kernel.n_channels:
            raise ValueError("one noise variance per channel required")
        if np.any(nv < 0):
            raise ValueError("noise variances must be nonnegative")
        self.noise_variance = nv

    def noise_for(self, channels):
        return self.noise_variance[np.asarray(channels, dtype=int)]


def gram(kernel, locations, channels):
    """Symmetrized Gram matrix K_{c(a) c(b)}(x_a - x_b)."""
    m = kernel.cov_matrix(locations, channels, locations, channels)
    return 0.5 * (m + m.T)


def chol_with_jitter(matrix, ladder=JITTER_LADDER):
    """Lower Cholesky factor of `matrix` + jitter * I.

    Climbs the jitter ladder in decade steps until the factorization
    succeeds and returns ``(L, jitter_used)``; raises NotPSDError when
    even the largest jitter fails.
    """
    matrix = np.asarray(matrix, dtype=float)
    eye = np.eye(matrix.shape[0])
    for jitter in ladder:
        try:
            L = cholesky(matrix + jitter * eye, lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise NotPSDError(
        f"matrix not positive definite even with jitter {ladder[-1]:g}")


def _plain_chol(matrix):
    try:
        return cholesky(np.asarray(matrix, dtype=float), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPSDError(f"covariance matrix not positive definite: {exc}")


def sample_prior(model, locations, channels, seed, num_samples):
    """Joint prior draws of the latent process at the given points.

    Returns an (num_samples, n) array.  Uses the counter-based Philox
    generator, so fixed (seed, points, model) gives bitwise identical
    output, and factorizes the Gram with the jitter ladder.
    """
    K = gram(model.kernel, locations, channels)
    L, _ = chol_with_jitter(K)
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((K.shape[0], num_samples))
    return (L @ z).T


def _train_factor(model, dataset):
    K = gram(model.kernel, dataset.locations, dataset.channels)
    K[np.diag_indices_from(K)] += model.noise_for(dataset.channels)
    return _plain_chol(K)


def log_marginal_likelihood(model, dataset):
    """Exact Gaussian log evidence of the dataset under the model."""
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    L = _train_factor(model, dataset)
    alpha = cho_solve((L, True), dataset.targets)
    n = len(dataset)
    return float(-0.5 * dataset.targets @ alpha
                 - np.sum(np.log(np.diag(L)))
                 - 0.5 * n * np.log(2.0 * np.pi))


def predict(model, dataset, test_locations, test_channels):
    """Posterior mean and (noise-free) variance at the test points."""
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    L = _train_factor(model, dataset)
    alpha = cho_solve((L, True), dataset.targets)
    test_locations = np.atleast_2d(np.asarray(test_locations, dtype=float))
    test_channels = np.atleast_1d(np.asarray(test_channels, dtype=int))
    ks = model.kernel.cov_matrix(test_locations, test_channels,
                                 dataset.locations, dataset.channels)
    mean = ks @ alpha
    v = solve_triangular(L, ks.T, lower=True)
    prior = np.array([
        model.kernel.cov_matrix(x[None, :], [c], x[None, :], [c])[0, 0]
        for x, c in zip(test_locations, test_channels)
    ])
    var = np.maximum(prior - np.sum(v * v, axis=0), 0.0)
    return mean, var


def smse(pred_mean, actual, train_targets):
    """Mean squared error normalized by the training-target variance."""
    pred_mean = np.asarray(pred_mean, dtype=float)
    actual = np.asarray(actual, dtype=float)
    train_targets = np.asarray(train_targets, dtype=float)
    if pred_mean.size == 0 or actual.size == 0 or train_targets.size == 0:
        raise ValueError("inputs must be nonempty")
    denom = float(np.var(train_targets))
    if not np.isfinite(denom) or denom <= 0.0:
        raise DegenerateVarianceError("training targets have zero variance")
    return float(np.mean((pred_mean - actual) ** 2) / denom)
