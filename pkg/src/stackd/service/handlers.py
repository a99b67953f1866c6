"""Request handlers: the orchestration layer behind both HTTP and CLI.

Each handler takes a validated request model and returns a response
model; neither side touches the filesystem, so the CLI can call handlers
in process and a remote client gets identical behavior over HTTP.

Per-model PSIS runs on a thread pool whose size is capped by the
STACKD_THREADS environment variable (results are order-preserving, so
the thread count never changes the output).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import __version__
from ..psis import ElpdReport, LogLikDrawMatrix, psis_loo
from ..report import SCHEMA_VERSION
from ..sequential import PrequentialMatrix, psis_prequential, time_varying_weights
from ..simlab import run_experiment
from ..weights import (
    LogMarginalVector,
    LooDensityMatrix,
    SimplexWeights,
    StackingConfig,
    bma_weights,
    pointwise_selection_weights,
    pseudo_bma,
    pseudo_bma_plus,
    stacking_weights,
)
from .schemas import (
    ModelElpd,
    PsisReport,
    PsisRequest,
    SequentialReport,
    SequentialRequest,
    SimlabReport,
    SimlabRequest,
    SolverInfo,
    WeightsReport,
    WeightsRequest,
)

__all__ = [
    "RequestError",
    "compute_weights",
    "compute_sequential",
    "compute_psis",
    "compute_simlab",
]


class RequestError(ValueError):
    """Semantically invalid request (maps to HTTP 422 / CLI exit 2)."""


def _thread_count() -> int:
    cap = os.environ.get("STACKD_THREADS", "")
    try:
        cap_n = int(cap) if cap else 0
    except ValueError:
        cap_n = 0
    default = min(4, os.cpu_count() or 1)
    return max(1, min(cap_n, default) if cap_n > 0 else default)


def _map_models(fn, items):
    threads = _thread_count()
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _to_draw_matrix(model) -> LogLikDrawMatrix:
    try:
        return LogLikDrawMatrix(
            values=np.asarray(model.loglik, dtype=float),
            model_id=model.model_id,
            r_eff=np.asarray(model.r_eff, dtype=float) if model.r_eff else None,
        )
    except ValueError as exc:
        raise RequestError(f"model {model.model_id!r}: {exc}") from exc


def _elpd_summary(report: ElpdReport) -> ModelElpd:
    return ModelElpd(
        model_id=report.model_id,
        elpd=float(report.total),
        se=float(report.se),
        khats=[float(f.khat) for f in report.khats],
        khat_grades=list(report.grades),
    )


def _loo_from_draws(req) -> tuple[LooDensityMatrix, list[ModelElpd], list[ElpdReport]]:
    draw_matrices = [_to_draw_matrix(m) for m in req.models]
    results = _map_models(psis_loo, draw_matrices)
    columns = [loo for loo, _ in results]
    reports = [rep for _, rep in results]
    matrix = LooDensityMatrix(
        logdens=np.column_stack(columns),
        model_ids=tuple(m.model_id for m in req.models),
    )
    return matrix, [_elpd_summary(r) for r in reports], reports


def _loo_from_densities(req) -> tuple[LooDensityMatrix, list[ModelElpd], list[ElpdReport]]:
    widths = {len(d.logdens) for d in req.densities}
    if len(widths) != 1:
        raise RequestError(f"density models disagree on length: {sorted(widths)}")
    matrix = LooDensityMatrix(
        logdens=np.column_stack([np.asarray(d.logdens, dtype=float) for d in req.densities]),
        model_ids=tuple(d.model_id for d in req.densities),
    )
    reports = []
    summaries = []
    for d in req.densities:
        col = np.asarray(d.logdens, dtype=float)
        n = col.size
        finite = bool(np.all(np.isfinite(col)))
        se = float(np.sqrt(n) * np.std(col, ddof=1)) if n >= 2 and finite else 0.0
        rep = ElpdReport(
            pointwise=col, total=float(col.sum()), se=se, khats=(), model_id=d.model_id
        )
        reports.append(rep)
        summaries.append(_elpd_summary(rep))
    return matrix, summaries, reports


def _loo_matrix(req):
    if req.models and req.densities:
        raise RequestError("provide either draw matrices or densities, not both")
    if req.models:
        return _loo_from_draws(req)
    if req.densities:
        return _loo_from_densities(req)
    raise RequestError("no model data supplied")


def _bma_from_request(req) -> tuple[SimplexWeights, list[str]]:
    lm = req.log_marginals
    if lm is None:
        raise RequestError("method 'bma' requires log_marginals")
    ids = [m.model_id for m in req.models] or [d.model_id for d in req.densities]
    if not ids:
        ids = list(lm.logml)
    missing = [i for i in ids if i not in lm.logml]
    if missing:
        raise RequestError(f"log_marginals missing entries for models {missing}")
    logml = np.array([lm.logml[i] for i in ids], dtype=float)
    if lm.prior is None:
        prior = SimplexWeights.uniform(len(ids))
    else:
        missing = [i for i in ids if i not in lm.prior]
        if missing:
            raise RequestError(f"prior missing entries for models {missing}")
        raw = np.array([lm.prior[i] for i in ids], dtype=float)
        if np.any(raw < 0) or raw.sum() <= 0:
            raise RequestError("model prior must be nonnegative with positive mass")
        prior = SimplexWeights(raw / raw.sum())
    return bma_weights(LogMarginalVector(logml=logml, prior=prior)), ids


def compute_weights(req: WeightsRequest) -> WeightsReport:
    """Run the selected combination method over the supplied models."""
    cfg = StackingConfig(reltol=req.reltol, seed=req.seed)
    diagnostics = None

    if req.method == "sequential":
        raise RequestError("use the sequential endpoint for time-varying weights")

    if req.method == "bma":
        weights_out, ids = _bma_from_request(req)
        per_model: list[ModelElpd] = []
        if req.models or req.densities:
            _, per_model, _ = _loo_matrix(req)
    else:
        matrix, per_model, reports = _loo_matrix(req)
        ids = list(matrix.model_ids)
        try:
            if req.method == "stacking":
                weights_out, diag = stacking_weights(matrix, cfg)
                diagnostics = SolverInfo(
                    objective=diag.objective,
                    iterations=diag.iterations,
                    grad_norm=diag.grad_norm,
                    converged=diag.converged,
                    restarts=diag.restarts,
                )
            elif req.method == "pseudobma":
                weights_out = pseudo_bma(reports)
            elif req.method == "pseudobma_plus":
                weights_out = pseudo_bma_plus(
                    matrix, n_replicates=req.bootstrap_replicates, seed=req.seed
                )
            else:  # pointwise
                weights_out = pointwise_selection_weights(matrix)
        except ValueError as exc:
            raise RequestError(str(exc)) from exc

    return WeightsReport(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        method=req.method,
        model_ids=list(ids),
        weights=[float(v) for v in weights_out.w],
        per_model=per_model,
        diagnostics=diagnostics,
        config={
            "method": req.method,
            "reltol": req.reltol,
            "seed": req.seed,
            "bootstrap_replicates": req.bootstrap_replicates,
        },
    )


def compute_sequential(req: SequentialRequest) -> SequentialReport:
    """Prequential densities (from draws) and the time-varying weight path."""
    cfg = StackingConfig(reltol=req.reltol, seed=req.seed)
    refit_flags: list[list[bool]] = []
    per_model: list[ModelElpd] = []

    if req.models and req.densities:
        raise RequestError("provide either draw matrices or densities, not both")
    if req.models:
        draw_matrices = [_to_draw_matrix(m) for m in req.models]
        results = _map_models(psis_prequential, draw_matrices)
        columns = []
        for dm, res in zip(draw_matrices, results):
            columns.append(res.log_predictive)
            refit_flags.append([bool(f) for f in res.refit_flags])
            n = res.log_predictive.size
            se = (
                float(np.sqrt(n) * np.std(res.log_predictive, ddof=1))
                if n >= 2
                else 0.0
            )
            per_model.append(
                ModelElpd(
                    model_id=dm.model_id,
                    elpd=float(res.log_predictive.sum()),
                    se=se,
                    khats=[float(f.khat) for f in res.khats],
                    khat_grades=[f.grade for f in res.khats],
                )
            )
        logdens = np.column_stack(columns)
        ids = [m.model_id for m in req.models]
    elif req.densities:
        matrix, per_model, _ = _loo_from_densities(req)
        logdens = matrix.logdens
        ids = list(matrix.model_ids)
    else:
        raise RequestError("no model data supplied")

    pm = PrequentialMatrix(logdens=logdens, horizon=req.horizon)
    try:
        static, _ = stacking_weights(LooDensityMatrix(logdens, tuple(ids)), cfg)
        path, diag = time_varying_weights(pm, req.tau, cfg)
    except ValueError as exc:
        raise RequestError(str(exc)) from exc

    return SequentialReport(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        model_ids=ids,
        tau=req.tau,
        horizon=req.horizon,
        static_weights=[float(v) for v in static.w],
        weight_path=[[float(v) for v in row] for row in path.path],
        refit_flags=refit_flags,
        per_model=per_model,
        diagnostics=SolverInfo(
            objective=diag.objective,
            iterations=diag.iterations,
            grad_norm=diag.grad_norm,
            converged=diag.converged,
            restarts=diag.restarts,
        ),
        config={
            "tau": req.tau,
            "horizon": req.horizon,
            "reltol": req.reltol,
            "seed": req.seed,
        },
    )


def compute_psis(req: PsisRequest) -> PsisReport:
    """PSIS-LOO for a single model."""
    _, report = psis_loo(_to_draw_matrix(req.model))
    return PsisReport(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        model_id=req.model.model_id,
        pointwise=[float(v) for v in report.pointwise],
        elpd=float(report.total),
        se=float(report.se),
        khats=[float(f.khat) for f in report.khats],
        khat_grades=list(report.grades),
    )


def compute_simlab(req: SimlabRequest) -> SimlabReport:
    """Run one named synthetic experiment with seeded determinism."""
    records = run_experiment(req.experiment, seed=req.seed)
    return SimlabReport(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        experiment=req.experiment,
        seed=req.seed,
        records=records,
    )
