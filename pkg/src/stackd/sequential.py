"""Prequential model combination for time-ordered data.

Replaces leave-one-out densities with leave-out-future ones: the density
scored at time t conditions only on y_1..y_{t-1}.  Exact prequential
evaluation would refit each model at every t; here the full-data posterior
draws are reweighted instead, with importance ratios 1 / p(y_{t:T} | draw)
smoothed by PSIS.  Times whose tail diagnostic is bad are flagged for
refitting, which is up to the caller; this module never refits anything.

Weights may be static (ordinary stacking over the prequential densities)
or time-varying with a squared-difference smoothness penalty between
consecutive weight rows.  The penalty exponent is a deliberate choice:
the squared norm is differentiable everywhere and has the same limits as
the unsquared one (vertex rows at tau = 0, constant rows as tau grows).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .psis import KHAT_OK, LogLikDrawMatrix, ParetoTailFit, psis_smooth
from .weights import (
    LooDensityMatrix,
    SimplexWeights,
    SolverDiagnostics,
    StackingConfig,
    _check_rows_feasible,
    _solve_stacking_core,
    stacking_weights,
)

__all__ = [
    "PrequentialMatrix",
    "WeightPath",
    "PrequentialDensities",
    "static_prequential_weights",
    "psis_prequential",
    "time_varying_weights",
]


@dataclass(frozen=True)
class PrequentialMatrix:
    """(T, K) matrix of log predictive densities conditioned on the past.

    Entry (t, k) is log p(y_t | y_{<t}, model k), or for horizon m > 1 the
    windowed log p(y_{t:t+m-1} | y_{<t}, model k) supplied by the caller;
    no windowing happens internally.
    """

    logdens: np.ndarray
    horizon: int = 1

    def __post_init__(self):
        logdens = np.asarray(self.logdens, dtype=float)
        if logdens.ndim != 2 or logdens.shape[0] < 1:
            raise ValueError("logdens must be a (T, K) matrix with T >= 1")
        if np.any(np.isnan(logdens)) or np.any(logdens == np.inf):
            raise ValueError("logdens entries must be finite or -inf")
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        object.__setattr__(self, "logdens", logdens)

    @property
    def n_times(self) -> int:
        return self.logdens.shape[0]

    @property
    def n_models(self) -> int:
        return self.logdens.shape[1]


@dataclass(frozen=True)
class WeightPath:
    """Time-indexed simplex weights with the smoothness penalty used."""

    path: np.ndarray
    tau: float

    def __post_init__(self):
        path = np.asarray(self.path, dtype=float)
        if path.ndim != 2:
            raise ValueError("path must be a (T, K) matrix")
        if np.any(path < -1e-12) or np.any(np.abs(path.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every path row must lie on the simplex")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        object.__setattr__(self, "path", np.clip(path, 0.0, 1.0))

    def row(self, t: int) -> SimplexWeights:
        return SimplexWeights(self.path[t] / self.path[t].sum())


@dataclass(frozen=True)
class PrequentialDensities:
    """PSIS-approximated one-step-ahead densities with refit advisories."""

    log_predictive: np.ndarray
    refit_flags: np.ndarray
    khats: tuple[ParetoTailFit, ...]


def static_prequential_weights(
    m: PrequentialMatrix, cfg: StackingConfig | None = None
) -> tuple[SimplexWeights, SolverDiagnostics]:
    """Single weight vector for the whole series: stacking over time rows."""
    return stacking_weights(LooDensityMatrix(m.logdens), cfg)


def psis_prequential(m: LogLikDrawMatrix) -> PrequentialDensities:
    """Estimate log p(y_t | y_{<t}) for every t from full-posterior draws.

    The importance ratio at time t removes the likelihood of rows t..T,
    so early times (large left-out blocks) are where the proposal is
    poorest; a bad tail grade there sets the refit flag.  At t = T the
    ratio reduces to the single-point LOO ratio.  Draw rows must come
    from the posterior conditioned on the entire series, time-ordered.
    """
    t_len = m.n_obs
    # sum of loglik over rows >= t, per draw
    tail_sums = np.cumsum(m.values[:, ::-1], axis=1)[:, ::-1]
    log_pred = np.empty(t_len)
    flags = np.zeros(t_len, dtype=bool)
    fits: list[ParetoTailFit] = []
    for t in range(t_len):
        log_w, fit = psis_smooth(-tail_sums[:, t], float(m.r_eff[t]))
        log_pred[t] = logsumexp(log_w + m.values[:, t]) - logsumexp(log_w)
        flags[t] = fit.khat > KHAT_OK
        fits.append(fit)
    return PrequentialDensities(
        log_predictive=log_pred, refit_flags=flags, khats=tuple(fits)
    )


def _vertex_rows(logdens: np.ndarray) -> np.ndarray:
    """Per-time vertex weights: all mass on the row argmax, ties split."""
    t_len, k = logdens.shape
    path = np.zeros((t_len, k))
    for t in range(t_len):
        winners = np.flatnonzero(logdens[t] == np.max(logdens[t]))
        path[t, winners] = 1.0 / winners.size
    return path


def _penalized_objective(logdens: np.ndarray, path: np.ndarray, tau: float) -> float:
    log_w = np.log(np.maximum(path, np.finfo(float).tiny))
    with np.errstate(invalid="ignore"):
        shifted = logdens + log_w
    shifted = np.where(np.isnan(shifted), -np.inf, shifted)
    fit = float(np.sum(logsumexp(shifted, axis=1)))
    rough = float(np.sum((path[1:] - path[:-1]) ** 2))
    return fit - tau * rough


def _row_logsumexp(shifted: np.ndarray) -> np.ndarray:
    """logsumexp over axis 1, tolerating all--inf rows."""
    top = np.max(shifted, axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(invalid="ignore"):
        out = safe + np.log(np.sum(np.exp(shifted - safe[:, None]), axis=1))
    return np.where(np.isfinite(top), out, -np.inf)


def _group_values(logdens, w, prev, nxt, has_prev, has_next, tau):
    """Block objective values for a parity group, vectorized over rows."""
    log_w = np.log(np.maximum(w, np.finfo(float).tiny))
    vals = _row_logsumexp(logdens + log_w)
    vals -= tau * has_prev * np.sum((w - prev) ** 2, axis=1)
    vals -= tau * has_next * np.sum((w - nxt) ** 2, axis=1)
    return vals


def _group_grad(logdens, w, prev, nxt, has_prev, has_next, tau):
    log_w = np.log(np.maximum(w, np.finfo(float).tiny))
    log_mix = _row_logsumexp(logdens + log_w)
    with np.errstate(invalid="ignore"):
        g = np.exp(logdens - log_mix[:, None])
    g = np.where(np.isnan(g), 0.0, g)
    g -= 2.0 * tau * has_prev[:, None] * (w - prev)
    g -= 2.0 * tau * has_next[:, None] * (w - nxt)
    return g


def _ascend_group(logdens, path, z, idx, tau, steps, inner_iter=6):
    """Line-searched ascent on every block of one parity group at once.

    Blocks of equal parity share no penalty term, so updating them
    simultaneously with per-row step sizes is exact coordinate ascent on
    the group; each accepted per-row step strictly improves that row's
    block objective, hence the full penalized objective.
    """
    t_len = path.shape[0]
    sub = logdens[idx]
    has_prev = (idx > 0).astype(float)
    has_next = (idx < t_len - 1).astype(float)
    prev = path[np.maximum(idx - 1, 0)]
    nxt = path[np.minimum(idx + 1, t_len - 1)]

    z_g = z[idx].copy()
    w_g = path[idx].copy()
    vals = _group_values(sub, w_g, prev, nxt, has_prev, has_next, tau)
    for _ in range(inner_iter):
        g_w = _group_grad(sub, w_g, prev, nxt, has_prev, has_next, tau)
        g_z = w_g * (g_w - np.sum(w_g * g_w, axis=1, keepdims=True))
        g_z[:, 0] = 0.0
        gn2 = np.sum(g_z * g_z, axis=1)
        pending = gn2 > 0
        if not pending.any():
            break
        steps[idx] = np.minimum(steps[idx] * 2.0, 1e12)
        moved = False
        while pending.any():
            st = steps[idx][:, None]
            z_new = z_g + st * g_z
            z_new -= z_new[:, :1]
            w_new = np.exp(z_new - _row_logsumexp(z_new)[:, None])
            vals_new = _group_values(sub, w_new, prev, nxt, has_prev, has_next, tau)
            ok = pending & (vals_new > vals + 1e-4 * steps[idx] * gn2)
            if ok.any():
                z_g[ok] = z_new[ok]
                w_g[ok] = w_new[ok]
                vals[ok] = vals_new[ok]
                pending &= ~ok
                moved = True
            steps[idx] = np.where(pending, steps[idx] * 0.5, steps[idx])
            alive = steps[idx] > 1e-20
            pending &= alive
        if not moved:
            break
    z[idx] = z_g
    path[idx] = w_g


def time_varying_weights(
    m: PrequentialMatrix,
    tau: float,
    cfg: StackingConfig | None = None,
    trace: list | None = None,
) -> tuple[WeightPath, SolverDiagnostics]:
    """Smoothly time-varying weights by blockwise coordinate ascent.

    Maximizes  sum_t log sum_k w_{t,k} p_{t,k}  -  tau * sum_t ||w_t - w_{t-1}||^2
    over T simplex rows.  Rows are updated blockwise on their softmax
    parameters in a red/black schedule (even rows, then odd rows; the
    penalty couples only adjacent rows, so a parity group updates in
    parallel), which never decreases the penalized objective.  Sweeps
    stop when its relative change drops below ``cfg.reltol``.  The path
    starts at the static stacking solution, whose rows are already
    optimal in the large-tau limit.

    tau = 0 decouples the rows and is solved exactly: each row is the
    vertex of its best model (ties split equally).

    ``trace``, when given a list, collects the penalized objective after
    every sweep.
    """
    cfg = cfg or StackingConfig()
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    logdens = m.logdens
    t_len, _ = logdens.shape
    _check_rows_feasible(logdens)

    if tau == 0.0:
        path = _vertex_rows(logdens)
        return (
            WeightPath(path=path, tau=0.0),
            SolverDiagnostics(
                objective=_penalized_objective(logdens, path, 0.0),
                iterations=0,
                grad_norm=0.0,
                converged=True,
            ),
        )

    static_w, _ = _solve_stacking_core(logdens, None, cfg, 0)
    path = np.tile(static_w, (t_len, 1))
    z = np.log(np.maximum(path, 1e-300))
    z -= z[:, :1]
    obj = _penalized_objective(logdens, path, tau)
    steps = np.ones(t_len)
    groups = [np.arange(0, t_len, 2), np.arange(1, t_len, 2)]

    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_iter + 1):
        for idx in groups:
            if idx.size:
                _ascend_group(logdens, path, z, idx, tau, steps)
        obj_new = _penalized_objective(logdens, path, tau)
        if trace is not None:
            trace.append(obj_new)
        rel_change = abs(obj_new - obj) / max(abs(obj), np.finfo(float).tiny)
        obj = obj_new
        if rel_change < cfg.reltol:
            converged = True
            break
    if not converged:
        warnings.warn(
            "time-varying solver hit max_iter before meeting reltol",
            UserWarning,
            stacklevel=2,
        )
    grad = _path_grad_norm(logdens, path, tau)
    return (
        WeightPath(path=path, tau=float(tau)),
        SolverDiagnostics(
            objective=obj, iterations=sweeps, grad_norm=grad, converged=converged
        ),
    )


def _path_grad_norm(logdens, path, tau):
    t_len = path.shape[0]
    idx = np.arange(t_len)
    has_prev = (idx > 0).astype(float)
    has_next = (idx < t_len - 1).astype(float)
    prev = path[np.maximum(idx - 1, 0)]
    nxt = path[np.minimum(idx + 1, t_len - 1)]
    g_w = _group_grad(logdens, path, prev, nxt, has_prev, has_next, tau)
    g_z = path * (g_w - np.sum(path * g_w, axis=1, keepdims=True))
    g_z[:, 0] = 0.0
    return float(np.sqrt(np.sum(g_z * g_z)))
