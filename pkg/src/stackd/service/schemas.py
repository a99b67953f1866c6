"""Request and response models for the weights service.

Matrices travel inline as JSON arrays: a model's log likelihoods are a
list of S draw rows with n entries each, matching the on-disk CSV layout
(rows are draws, columns are observations).  Precomputed log predictive
densities travel as one row per model instead.  Responses mirror the
report schema emitted by the CLI; the ``schema_version`` field tracks
the wire format.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

WeightMethod = Literal[
    "stacking", "pseudobma", "pseudobma_plus", "bma", "pointwise", "sequential"
]

ExperimentName = Literal[
    "prior_sensitivity", "chisq_moments", "theorem2", "bma_recovery"
]


class ModelDraws(BaseModel):
    """One model's (S, n) pointwise log-likelihood matrix."""

    model_id: str
    loglik: list[list[float]]
    r_eff: Optional[list[float]] = None


class ModelDensities(BaseModel):
    """One model's precomputed log predictive densities, one per observation."""

    model_id: str
    logdens: list[float]


class LogMarginals(BaseModel):
    """Per-model log marginal likelihoods with an optional model prior."""

    logml: dict[str, float]
    prior: Optional[dict[str, float]] = None


class WeightsRequest(BaseModel):
    method: WeightMethod
    models: list[ModelDraws] = Field(default_factory=list)
    densities: list[ModelDensities] = Field(default_factory=list)
    log_marginals: Optional[LogMarginals] = None
    reltol: float = 1e-10
    seed: int = 0
    bootstrap_replicates: int = 1000


class SequentialRequest(BaseModel):
    models: list[ModelDraws] = Field(default_factory=list)
    densities: list[ModelDensities] = Field(default_factory=list)
    tau: float = 0.0
    horizon: int = 1
    reltol: float = 1e-10
    seed: int = 0


class SimlabRequest(BaseModel):
    experiment: ExperimentName
    seed: int = 0


class PsisRequest(BaseModel):
    model: ModelDraws


class SolverInfo(BaseModel):
    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    restarts: int = 1


class ModelElpd(BaseModel):
    """Per-model PSIS-LOO summary with per-observation tail grades."""

    model_id: str
    elpd: float
    se: float
    khats: list[float] = Field(default_factory=list)
    khat_grades: list[str] = Field(default_factory=list)


class WeightsReport(BaseModel):
    schema_version: str
    tool_version: str
    method: WeightMethod
    model_ids: list[str]
    weights: list[float]
    per_model: list[ModelElpd] = Field(default_factory=list)
    diagnostics: Optional[SolverInfo] = None
    config: dict = Field(default_factory=dict)


class SequentialReport(BaseModel):
    schema_version: str
    tool_version: str
    method: WeightMethod = "sequential"
    model_ids: list[str]
    tau: float
    horizon: int
    static_weights: list[float]
    weight_path: list[list[float]]
    refit_flags: list[list[bool]] = Field(default_factory=list)
    per_model: list[ModelElpd] = Field(default_factory=list)
    diagnostics: Optional[SolverInfo] = None
    config: dict = Field(default_factory=dict)


class SimlabReport(BaseModel):
    schema_version: str
    tool_version: str
    experiment: ExperimentName
    seed: int
    records: list[dict]


class PsisReport(BaseModel):
    schema_version: str
    tool_version: str
    model_id: str
    pointwise: list[float]
    elpd: float
    se: float
    khats: list[float]
    khat_grades: list[str]
