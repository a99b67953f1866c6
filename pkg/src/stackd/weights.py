"""Model-combination weight solvers.

Given an (n, K) matrix of pointwise log predictive densities, this module
computes:

- stacking weights, maximizing the average log score of the linear pool
  over the K-simplex (a concave problem, solved here by gradient ascent
  on softmax parameters with backtracking line search and restarts);
- pointwise-selection weights, the per-observation argmax frequencies,
  which stacking approaches when models are pointwise well separated;
- BMA weights from log marginal likelihoods and a model-space prior;
- pseudo Bayes factors, pseudo-BMA, and Bayesian-bootstrap pseudo-BMA+
  weights from estimated pointwise predictive densities.

Log densities of -inf are legal input (a model may be impossible at some
points yet still earn weight elsewhere); all mixture arithmetic runs in
log space so such entries never poison a row.  A row at -inf under every
model is an error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "LooDensityMatrix",
    "SimplexWeights",
    "LogMarginalVector",
    "StackingConfig",
    "SolverDiagnostics",
    "stacking_objective",
    "stacking_weights",
    "pointwise_selection_weights",
    "separation_check",
    "bma_weights",
    "pseudo_bma",
    "pseudo_bma_plus",
    "bootstrap_replicate_weights",
    "pseudo_bayes_factor",
]

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative model weights summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size < 1:
            raise ValueError("weights must be nonempty")
        if np.any(w < -SIMPLEX_TOL) or np.any(w > 1 + SIMPLEX_TOL):
            raise ValueError("weights must lie in [0, 1]")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "w", np.clip(w, 0.0, 1.0))

    @classmethod
    def uniform(cls, k: int) -> "SimplexWeights":
        return cls(np.full(k, 1.0 / k))

    def __len__(self) -> int:
        return self.w.size

    def __getitem__(self, k: int) -> float:
        return float(self.w[k])


@dataclass(frozen=True)
class LooDensityMatrix:
    """(n, K) matrix of log LOO predictive densities, one column per model."""

    logdens: np.ndarray
    model_ids: tuple[str, ...] = ()

    def __post_init__(self):
        logdens = np.asarray(self.logdens, dtype=float)
        if logdens.ndim != 2:
            raise ValueError("logdens must be an (n, K) matrix")
        if logdens.shape[0] < 1 or logdens.shape[1] < 1:
            raise ValueError("need at least one observation and one model")
        if np.any(np.isnan(logdens)) or np.any(logdens == np.inf):
            raise ValueError("logdens entries must be finite or -inf")
        ids = tuple(self.model_ids) or tuple(
            f"model_{k}" for k in range(logdens.shape[1])
        )
        if len(ids) != logdens.shape[1]:
            raise ValueError("model_ids length must match column count")
        object.__setattr__(self, "logdens", logdens)
        object.__setattr__(self, "model_ids", ids)

    @property
    def n_obs(self) -> int:
        return self.logdens.shape[0]

    @property
    def n_models(self) -> int:
        return self.logdens.shape[1]


@dataclass(frozen=True)
class LogMarginalVector:
    """Per-model log marginal likelihoods with a model-space prior."""

    logml: np.ndarray
    prior: SimplexWeights

    def __post_init__(self):
        logml = np.asarray(self.logml, dtype=float).ravel()
        if not np.all(np.isfinite(logml)):
            raise ValueError("log marginal likelihoods must be finite")
        if logml.size != len(self.prior):
            raise ValueError("prior length must match logml length")
        object.__setattr__(self, "logml", logml)


@dataclass(frozen=True)
class StackingConfig:
    """Solver controls; the reltol default matches common LOO tooling."""

    reltol: float = 1e-10
    max_iter: int = 10_000
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if self.reltol <= 0:
            raise ValueError("reltol must be positive")
        if self.max_iter < 1 or self.restarts < 1:
            raise ValueError("max_iter and restarts must be positive")


@dataclass
class SolverDiagnostics:
    """Final state of the stacking optimizer."""

    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    restarts: int = 1


def _row_log_mix(logdens: np.ndarray, log_w: np.ndarray) -> np.ndarray:
    """Per-row log sum_k w_k exp(logdens[i, k]) via logsumexp."""
    shifted = logdens + log_w[None, :]
    top = np.max(shifted, axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = safe + np.log(np.sum(np.exp(shifted - safe[:, None]), axis=1))
    return np.where(np.isfinite(top), out, -np.inf)


def _log_weights(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def stacking_objective(m: LooDensityMatrix, w: SimplexWeights) -> float:
    """Average log score of the w-weighted linear pool.

    Rows whose every finite-density model has zero weight contribute
    -inf, making the objective -inf.
    """
    if len(w) != m.n_models:
        raise ValueError(
            f"weight length {len(w)} does not match model count {m.n_models}"
        )
    return float(np.mean(_row_log_mix(m.logdens, _log_weights(w.w))))


def _check_rows_feasible(logdens: np.ndarray) -> None:
    dead = np.where(np.all(logdens == -np.inf, axis=1))[0]
    if dead.size:
        raise ValueError(
            f"observation {int(dead[0])} has -inf log density under every model"
        )


def _solve_stacking_core(
    logdens: np.ndarray,
    row_weights: np.ndarray | None,
    cfg: StackingConfig,
    pin_component: int,
) -> tuple[np.ndarray, SolverDiagnostics]:
    """Maximize the (row-weighted) pool log score over the simplex.

    Softmax parameterization with one coordinate pinned at zero removes
    the scale redundancy.  The ascent direction in z-space is log(g),
    with g_k = sum_i rw_i p_ik / mix_i the analytic gradient: a unit
    step along it is the classic monotone multiplicative update
    w_k <- w_k g_k, and <grad_z f, log g> >= 0 always, so every
    backtracking/expanding line search along it makes progress.  The
    raw softmax gradient w_k (g_k - 1) is useless near a face of the
    simplex (it vanishes with w_k, giving harmonic instead of geometric
    decay of dead weights), which rules it out as the direction.

    Convergence is certified, not guessed: sum_k w_k g_k = 1
    identically and concavity gives f(w*) - f(w) <= log(max_k g_k), so
    iteration continues until that bound drops below
    10 * reltol * (1 + |f|).  Restart 0 always starts from uniform
    weights; later restarts draw Dirichlet(1) starting points.  Among
    ties the uniform-start solution is kept.
    """
    n, k = logdens.shape
    _check_rows_feasible(logdens)
    if row_weights is None:
        rw = np.full(n, 1.0 / n)
    else:
        rw = np.asarray(row_weights, dtype=float)
        rw = rw / rw.sum()
    if k == 1:
        return np.ones(1), SolverDiagnostics(
            objective=float(rw @ logdens[:, 0]), iterations=0, grad_norm=0.0,
            converged=True,
        )

    def objective(log_w: np.ndarray) -> float:
        return float(rw @ _row_log_mix(logdens, log_w))

    def gradient(log_w: np.ndarray) -> np.ndarray:
        # d obj / d w_k = sum_i rw_i p_ik / mix_i, in log space
        log_mix = _row_log_mix(logdens, log_w)
        with np.errstate(invalid="ignore"):
            contrib = np.exp(logdens - log_mix[:, None])
        contrib = np.where(np.isnan(contrib), 0.0, contrib)
        return rw @ contrib

    rng = np.random.default_rng(cfg.seed)
    free = np.arange(k) != pin_component

    best_w: np.ndarray | None = None
    best_obj = -np.inf
    best_diag: SolverDiagnostics | None = None
    total_restarts = 0

    for restart in range(cfg.restarts):
        total_restarts += 1
        if restart == 0:
            z = np.zeros(k)
        else:
            start = rng.dirichlet(np.ones(k))
            z = np.log(np.maximum(start, 1e-12))
            z -= z[pin_component]
        log_w = z - logsumexp(z)
        obj = objective(log_w)
        gap_tol = 10.0 * cfg.reltol * (1.0 + abs(obj))
        step = 1.0
        iterations = 0
        converged = False
        grad_norm = np.inf
        for iterations in range(1, cfg.max_iter + 1):
            w = np.exp(log_w)
            g_w = gradient(log_w)
            # suboptimality certificate: f* - f <= log(max_k g_k)
            gap = math.log(max(float(np.max(g_w)), 1.0))
            if gap <= gap_tol:
                converged = True
                grad_norm = float(np.linalg.norm(w * (g_w - 1.0)))
                break
            # chain rule through softmax; pinned coordinate is held fixed
            g_z = w * (g_w - float(w @ g_w))
            g_z[~free] = 0.0
            grad_norm = float(np.linalg.norm(g_z))
            direction = np.log(np.maximum(g_w, 1e-26))
            direction -= direction[pin_component]
            direction[~free] = 0.0
            slope = float(g_z @ direction)
            if grad_norm == 0.0 or slope <= 0.0:
                converged = True
                break
            step = min(max(step * 2.0, 1.0), 1e6)
            improved = False
            while step > 1e-20:
                z_new = z + step * direction
                z_new = z_new - z_new[pin_component]
                log_w_new = z_new - logsumexp(z_new)
                obj_new = objective(log_w_new)
                if obj_new > obj + 1e-4 * step * slope:
                    improved = True
                    break
                step *= 0.5
            if improved:
                # probe the half step too: first-accept alone can lock into
                # a period-2 overshoot cycle around an interior optimum
                z_half = z + 0.5 * step * direction
                z_half = z_half - z_half[pin_component]
                log_w_half = z_half - logsumexp(z_half)
                obj_half = objective(log_w_half)
                if obj_half > obj_new:
                    step *= 0.5
                    z_new, log_w_new, obj_new = z_half, log_w_half, obj_half
            if not improved:
                # no float-representable step improves the objective: we are
                # at the numerical optimum, provided the certificate is tiny
                # (it is loose near interior optima, so allow it slack)
                converged = gap <= max(gap_tol, 1e-6 * (1.0 + abs(obj)))
                break
            z, log_w, obj = z_new, log_w_new, obj_new
        diag = SolverDiagnostics(
            objective=obj, iterations=iterations, grad_norm=grad_norm,
            converged=converged,
        )
        if obj > best_obj + 1e-13:
            best_obj, best_w, best_diag = obj, np.exp(log_w), diag

    assert best_w is not None and best_diag is not None
    best_w, best_obj = _polish_support(logdens, rw, best_w, best_obj)
    best_diag.objective = best_obj
    best_diag.restarts = total_restarts
    if not best_diag.converged:
        warnings.warn(
            "stacking solver stopped (max_iter or stalled line search) before "
            "its optimality certificate met reltol; returning best iterate",
            UserWarning,
            stacklevel=3,
        )
    return best_w, best_diag


def _polish_support(logdens, rw, w, obj):
    """Snap numerically vanished weights to exact zero when that does not hurt.

    Ascent iterates approach the simplex boundary only asymptotically;
    clipping recovers exact vertex/facet solutions.
    """
    tiny = w < 1e-6
    if not tiny.any() or tiny.all():
        return w, obj
    w_clip = np.where(tiny, 0.0, w)
    w_clip /= w_clip.sum()
    obj_clip = float(rw @ _row_log_mix(logdens, _log_weights(w_clip)))
    if obj_clip >= obj:
        return w_clip, obj_clip
    return w, obj


def stacking_weights(
    m: LooDensityMatrix,
    cfg: StackingConfig | None = None,
    pin_component: int = 0,
) -> tuple[SimplexWeights, SolverDiagnostics]:
    """Stacking weights: the simplex maximizer of :func:`stacking_objective`.

    The objective is concave, so all restarts agree at the optimum up to
    ties; on flat directions (duplicate models) the uniform start wins,
    which splits weight evenly between indistinguishable models.

    Returns the weights together with solver diagnostics; if ``max_iter``
    is exhausted the best iterate is returned and ``converged`` is False.
    """
    cfg = cfg or StackingConfig()
    w, diag = _solve_stacking_core(m.logdens, None, cfg, pin_component)
    return SimplexWeights(w), diag


def pointwise_selection_weights(m: LooDensityMatrix) -> SimplexWeights:
    """Per-observation argmax frequencies; ties split equally."""
    counts = np.zeros(m.n_models)
    for row in m.logdens:
        best = np.max(row)
        winners = np.flatnonzero(row == best)
        counts[winners] += 1.0 / winners.size
    return SimplexWeights(counts / m.n_obs)


def separation_check(m: LooDensityMatrix, margin: float) -> tuple[np.ndarray, float]:
    """Flag rows whose best model beats every other by at least ``margin``.

    Returns the per-row boolean flags and the satisfied fraction, an
    empirical estimate of the separation probability.  The margin is
    inclusive.
    """
    if m.n_models < 2:
        raise ValueError("separation requires at least 2 models")
    if margin <= 0:
        raise ValueError("margin must be positive")
    part = np.partition(m.logdens, -2, axis=1)
    best, second = part[:, -1], part[:, -2]
    flags = best >= second + margin
    return flags, float(np.mean(flags))


def _softmax(x: np.ndarray) -> np.ndarray:
    finite = np.isfinite(x)
    if not finite.any():
        raise ValueError("softmax undefined: every score is -inf")
    e = np.exp(x - np.max(x[finite]))
    return e / e.sum()


def bma_weights(v: LogMarginalVector) -> SimplexWeights:
    """Posterior model probabilities: softmax of log marginal + log prior.

    A model with zero prior mass is excluded outright, whatever its
    marginal likelihood.
    """
    with np.errstate(divide="ignore"):
        scores = v.logml + np.log(v.prior.w)
    return SimplexWeights(_softmax(scores))


def pseudo_bma(reports) -> SimplexWeights:
    """Weights proportional to exp(total estimated elpd) per model."""
    reports = list(reports)
    sizes = {r.pointwise.size for r in reports}
    if len(sizes) != 1:
        raise ValueError(f"reports disagree on observation count: {sorted(sizes)}")
    totals = np.array([r.total for r in reports])
    return SimplexWeights(_softmax(totals))


def bootstrap_replicate_weights(m: LooDensityMatrix, pi: np.ndarray) -> np.ndarray:
    """Softmax weights for one observation-reweighting pi on the simplex."""
    totals = m.n_obs * (pi @ m.logdens)
    return _softmax(totals)


def pseudo_bma_plus(
    m: LooDensityMatrix, n_replicates: int = 1000, seed: int = 0
) -> SimplexWeights:
    """Pseudo-BMA with Bayesian-bootstrap smoothing of the elpd totals.

    Each replicate draws Dirichlet(1, ..., 1) observation weights,
    recomputes the weighted elpd totals, and takes their softmax; the
    replicate weight vectors are averaged.  Deterministic given ``seed``.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be positive")
    rng = np.random.default_rng(seed)
    acc = np.zeros(m.n_models)
    for _ in range(n_replicates):
        pi = rng.dirichlet(np.ones(m.n_obs))
        acc += bootstrap_replicate_weights(m, pi)
    return SimplexWeights(acc / n_replicates)


def pseudo_bayes_factor(m: LooDensityMatrix, k1: int, k2: int) -> float:
    """Log pseudo Bayes factor of model k1 over k2.

    The difference of summed pointwise log predictive densities, i.e. the
    log ratio of the products of LOO predictive densities.
    """
    for k in (k1, k2):
        if not 0 <= k < m.n_models:
            raise ValueError(f"model index {k} out of range")
    return float(np.sum(m.logdens[:, k1]) - np.sum(m.logdens[:, k2]))
