"""Proper scoring rules for probabilistic forecasts.

All scores follow the *larger is better* orientation: a perfect forecast
maximizes the score.  Note that this flips the sign of the CRPS relative
to the classical forecasting literature, where CRPS is reported as a loss.

Supported forecast representations:

- a plain density value at the realized outcome (log score),
- Gaussian and Gaussian-mixture forecasts (quadratic score, CRPS in
  closed form),
- sample-based forecasts, i.e. a matrix of predictive draws (empirical
  CRPS, energy score),
- first/second-moment summaries (log-determinant quadratic-form score).

Every divergence ``d(P, Q) = S(Q, Q) - S(P, Q)`` induced by these rules is
nonnegative, and zero iff ``P = Q`` for the strictly proper ones (log,
quadratic, CRPS, energy with ``beta`` in ``(0, 2)``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "GaussianForecast",
    "SampleForecast",
    "MomentForecast",
    "ZeroDensityWarning",
    "score_log",
    "score_quadratic_gaussian_mixture",
    "score_quadratic_numeric",
    "score_crps_gaussian",
    "score_crps_empirical",
    "score_energy",
    "score_moments",
]

_SQRT_PI = math.sqrt(math.pi)

# Full pairwise enumeration in the energy score is O(S^2); above this draw
# count pairs are subsampled instead.
FULL_PAIRING_LIMIT = 2000


class ZeroDensityWarning(UserWarning):
    """Raised-as-warning flag for a log score evaluated at density zero."""


@dataclass(frozen=True)
class GaussianForecast:
    """Univariate normal predictive distribution."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma)):
            raise ValueError("GaussianForecast parameters must be finite")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class SampleForecast:
    """Predictive distribution represented by draws.

    ``draws`` has shape (S,) for univariate or (S, d) for multivariate
    forecasts.  ``beta`` is the energy-score exponent and must lie in
    (0, 2]; the score is strictly proper only for ``beta < 2``.
    """

    draws: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        draws = np.atleast_1d(np.asarray(self.draws, dtype=float))
        if draws.ndim == 1:
            draws = draws[:, None]
        if draws.ndim != 2:
            raise ValueError("draws must be a vector or a (S, d) matrix")
        if draws.shape[0] < 2:
            raise ValueError("at least 2 draws are required")
        if not np.all(np.isfinite(draws)):
            raise ValueError("draws must be finite")
        if not (0.0 < self.beta <= 2.0):
            raise ValueError(f"beta must be in (0, 2], got {self.beta}")
        object.__setattr__(self, "draws", draws)

    @property
    def dim(self) -> int:
        return self.draws.shape[1]


@dataclass(frozen=True)
class MomentForecast:
    """Forecast summarized by its mean vector and covariance matrix."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if mu.ndim != 1 or Sigma.shape != (mu.size, mu.size):
            raise ValueError("Sigma must be a square matrix matching mu")
        if not np.allclose(Sigma, Sigma.T, atol=1e-12):
            raise ValueError("Sigma must be symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)


def _norm_pdf(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


def score_log(density: float) -> float:
    """Logarithmic score: log of the predictive density at the outcome.

    A zero density returns ``-inf`` and emits :class:`ZeroDensityWarning`
    rather than raising, so a single impossible point cannot abort a
    batch evaluation.  Negative or non-finite densities are invalid.
    """
    density = float(density)
    if not np.isfinite(density) or density < 0:
        raise ValueError(f"density must be finite and nonnegative, got {density}")
    if density == 0.0:
        warnings.warn("log score of zero density is -inf", ZeroDensityWarning, stacklevel=2)
        return float("-inf")
    return math.log(density)


def score_quadratic_gaussian_mixture(weights, components, y: float) -> float:
    """Quadratic score ``2 p(y) - ||p||_2^2`` for a Gaussian mixture.

    The squared L2 norm of the mixture density uses the closed-form
    Gaussian product integral
    ``int N(t|mu_i, s_i) N(t|mu_j, s_j) dt = N(mu_i | mu_j, sqrt(s_i^2 + s_j^2))``,
    so no quadrature is involved.

    Parameters
    ----------
    weights : array-like, shape (K,)
        Nonnegative mixture weights summing to one.
    components : sequence of GaussianForecast
        Mixture components; must be nonempty.
    y : float
        Realized outcome.
    """
    components = list(components)
    if not components:
        raise ValueError("components must be nonempty")
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != len(components):
        raise ValueError("weights and components length mismatch")
    mus = np.array([c.mu for c in components])
    sigmas = np.array([c.sigma for c in components])
    if np.any(sigmas <= 0):
        raise ValueError("degenerate sigma in mixture component")

    dens = float(np.sum(w * _norm_pdf((y - mus) / sigmas) / sigmas))
    pair_sd = np.sqrt(sigmas[:, None] ** 2 + sigmas[None, :] ** 2)
    cross = _norm_pdf((mus[:, None] - mus[None, :]) / pair_sd) / pair_sd
    norm_sq = float(w @ cross @ w)
    return 2.0 * dens - norm_sq


def score_quadratic_numeric(density_fn, y: float, grid: np.ndarray) -> float:
    """Quadratic score for an arbitrary density via trapezoid integration.

    Fallback for non-Gaussian forecasts: the caller supplies the
    integration ``grid``, which must cover the density's effective support.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-D array with at least 2 points")
    p = np.asarray([density_fn(t) for t in grid], dtype=float)
    norm_sq = float(np.trapezoid(p * p, grid))
    return 2.0 * float(density_fn(y)) - norm_sq


def score_crps_gaussian(f: GaussianForecast, y: float) -> float:
    """Closed-form CRPS of a normal forecast, larger-is-better orientation.

    Returns ``-sigma * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))`` with
    ``z = (y - mu) / sigma``; always nonpositive, with zero approached only
    in the point-forecast limit.
    """
    z = (y - f.mu) / f.sigma
    return -f.sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * _norm_pdf(z) - 1.0 / _SQRT_PI)


def score_crps_empirical(f: SampleForecast, y: float) -> float:
    """CRPS of an empirical (draws-based) univariate forecast.

    Uses the kernel identity ``-(E|X - y| - 0.5 E|X - X'|)`` over all
    ordered draw pairs (self-pairs included), which coincides with the
    energy score at ``beta = 1`` in one dimension.
    """
    if f.dim != 1:
        raise ValueError("empirical CRPS requires univariate draws")
    x = f.draws[:, 0]
    term_y = float(np.mean(np.abs(x - y)))
    term_xx = float(np.mean(np.abs(x[:, None] - x[None, :])))
    return -(term_y - 0.5 * term_xx)


def score_energy(f: SampleForecast, y, max_pairs: int = 2_000_000, seed: int = 0) -> float:
    """Energy score ``0.5 E||X - X'||^b - E||X - y||^b`` from draws.

    Full O(S^2) pairing is used for S <= 2000 draws; above that,
    ``max_pairs`` draw pairs are subsampled uniformly with the given seed.
    At ``beta = 2`` the full-pairing estimate equals
    ``-||mean(draws) - y||^2`` exactly.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != f.dim:
        raise ValueError(f"outcome dimension {y.size} != forecast dimension {f.dim}")
    x = f.draws
    s = x.shape[0]
    term_y = float(np.mean(np.linalg.norm(x - y[None, :], axis=1) ** f.beta))
    if s <= FULL_PAIRING_LIMIT:
        diff = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        term_xx = float(np.mean(diff**f.beta))
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, s, size=max_pairs)
        jj = rng.integers(0, s, size=max_pairs)
        term_xx = float(np.mean(np.linalg.norm(x[ii] - x[jj], axis=1) ** f.beta))
    return 0.5 * term_xx - term_y


def score_moments(f: MomentForecast, y) -> float:
    """Moment-based score ``-log det(Sigma) - (y - mu)' Sigma^{-1} (y - mu)``.

    Proper (not strictly) within families matched on first two moments.
    Raises on a singular covariance, naming the failed factorization.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != f.mu.shape:
        raise ValueError("outcome dimension does not match forecast mean")
    try:
        chol = np.linalg.cholesky(f.Sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Sigma is singular: Cholesky factorization failed") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    resid = np.linalg.solve(chol, y - f.mu)
    return -logdet - float(resid @ resid)
