"""Command-line client for the stackd service.

The CLI owns only file I/O: it reads manifests and model files, builds
the same request models the HTTP API accepts, and dispatches them either
to the in-process handlers (default) or to a running server via
``--server URL``.  Reports are written through the canonical serializer,
so identical inputs, seed, and tool version produce byte-identical
output.

Exit codes: 0 success, 2 validation/usage error, 3 solver
non-convergence (the report is still written).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .dataio import IngestError, ModelSet, ingest
from .report import canonical_json, records_to_csv, weights_csv
from .service import handlers
from .service.schemas import (
    LogMarginals,
    ModelDensities,
    ModelDraws,
    SequentialReport,
    SequentialRequest,
    SimlabReport,
    SimlabRequest,
    WeightsReport,
    WeightsRequest,
)

EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


class ValidationFailure(click.ClickException):
    exit_code = EXIT_VALIDATION


_ENDPOINTS = {
    WeightsRequest: ("/v1/weights", handlers.compute_weights, WeightsReport),
    SequentialRequest: ("/v1/sequential", handlers.compute_sequential, SequentialReport),
    SimlabRequest: ("/v1/simlab", handlers.compute_simlab, SimlabReport),
}


def _dispatch(request, server: str | None):
    path, handler, response_cls = _ENDPOINTS[type(request)]
    if server is None:
        try:
            return handler(request)
        except handlers.RequestError as exc:
            raise ValidationFailure(str(exc)) from exc
    import httpx

    try:
        resp = httpx.post(
            server.rstrip("/") + path, json=request.model_dump(), timeout=600.0
        )
    except httpx.HTTPError as exc:
        raise ValidationFailure(f"server request failed: {exc}") from exc
    if resp.status_code != 200:
        raise ValidationFailure(f"server returned {resp.status_code}: {resp.text}")
    return response_cls.model_validate(resp.json())


def _write_output(text: str, output: str | None) -> None:
    if output is None:
        click.echo(text, nl=False)
    else:
        Path(output).write_bytes(text.encode("utf-8"))


def _load_model_set(manifest: str, header: bool) -> ModelSet:
    try:
        return ingest(manifest, default_header=header)
    except IngestError as exc:
        raise ValidationFailure(str(exc)) from exc


def _request_models(model_set: ModelSet):
    """Convert an ingested model set into request payload fields."""
    if model_set.content == "draws":
        models = [
            ModelDraws(
                model_id=mid,
                loglik=mat.tolist(),
                r_eff=reff.tolist() if reff is not None else None,
            )
            for mid, mat, reff in zip(
                model_set.model_ids, model_set.matrices, model_set.r_effs
            )
        ]
        return models, []
    densities = [
        ModelDensities(model_id=mid, logdens=mat[0].tolist())
        for mid, mat in zip(model_set.model_ids, model_set.matrices)
    ]
    return [], densities


def _load_log_marginals(path: str) -> LogMarginals:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationFailure(f"missing log-marginals file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or "logml" not in doc:
        raise ValidationFailure(f"{path}: expected an object with a 'logml' map")
    try:
        return LogMarginals.model_validate(doc)
    except ValueError as exc:
        raise ValidationFailure(f"{path}: {exc}") from None


def _maybe_exit_nonconverged(report) -> None:
    diag = getattr(report, "diagnostics", None)
    if diag is not None and not diag.converged:
        click.echo("warning: solver did not converge; best iterate reported", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)


@click.group()
@click.version_option(version=__version__, prog_name="stackd")
def main():
    """Bayesian model-combination weights from pointwise log likelihoods."""


@main.command()
@click.argument("manifest", type=click.Path())
@click.option(
    "--method",
    type=click.Choice(["stacking", "pseudobma", "pseudobma_plus", "bma", "pointwise"]),
    required=True,
    help="Combination method.",
)
@click.option("--log-marginals", "log_marginals", type=click.Path(), default=None,
              help="JSON file with per-model log marginal likelihoods (bma only).")
@click.option("--reltol", type=float, default=1e-10, show_default=True,
              help="Solver relative-objective convergence tolerance.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bootstrap-B", "bootstrap_b", type=int, default=1000, show_default=True,
              help="Bayesian bootstrap replicates for pseudobma_plus.")
@click.option("--output", type=click.Path(), default=None,
              help="Write the report here instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
@click.option("--header", is_flag=True, default=False,
              help="Model CSV files start with a header row.")
@click.option("--server", default=None, help="Base URL of a running stackd service.")
def weights(manifest, method, log_marginals, reltol, seed, bootstrap_b, output, fmt,
            header, server):
    """Combine the models named by MANIFEST into simplex weights."""
    model_set = _load_model_set(manifest, header)
    models, densities = _request_models(model_set)
    lm = None
    if method == "bma":
        if log_marginals is None:
            raise click.UsageError("--method bma requires --log-marginals FILE")
        lm = _load_log_marginals(log_marginals)
    req = WeightsRequest(
        method=method,
        models=models,
        densities=densities,
        log_marginals=lm,
        reltol=reltol,
        seed=seed,
        bootstrap_replicates=bootstrap_b,
    )
    report = _dispatch(req, server)
    if fmt == "json":
        text = canonical_json(report.model_dump())
    else:
        elpds = [m.elpd for m in report.per_model] if report.per_model else None
        ses = [m.se for m in report.per_model] if report.per_model else None
        text = weights_csv(report.model_ids, report.weights, elpds, ses)
    _write_output(text, output)
    _maybe_exit_nonconverged(report)


@main.command()
@click.argument("manifest", type=click.Path())
@click.option("--tau", type=float, required=True,
              help="Smoothness penalty on consecutive weight rows.")
@click.option("--horizon", type=int, default=1, show_default=True,
              help="Forecast horizon of the supplied densities (echoed).")
@click.option("--reltol", type=float, default=1e-10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
@click.option("--header", is_flag=True, default=False)
@click.option("--server", default=None)
def sequential(manifest, tau, horizon, reltol, seed, output, fmt, header, server):
    """Time-varying prequential weights for a time-ordered MANIFEST."""
    model_set = _load_model_set(manifest, header)
    if not model_set.time_ordered:
        raise ValidationFailure(
            "sequential weights require a manifest with time_ordered=true"
        )
    models, densities = _request_models(model_set)
    req = SequentialRequest(
        models=models,
        densities=densities,
        tau=tau,
        horizon=horizon,
        reltol=reltol,
        seed=seed,
    )
    report = _dispatch(req, server)
    if fmt == "json":
        text = canonical_json(report.model_dump())
    else:
        rows = []
        for t, row in enumerate(report.weight_path):
            for k, mid in enumerate(report.model_ids):
                rec = {"t": t, "model_id": mid, "weight": row[k]}
                if report.refit_flags:
                    rec["refit_flag"] = report.refit_flags[k][t]
                rows.append(rec)
        text = records_to_csv(rows)
    _write_output(text, output)
    _maybe_exit_nonconverged(report)


@main.command()
@click.argument("config", type=click.Path())
@click.option("--output", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
@click.option("--server", default=None)
def simlab(config, output, fmt, server):
    """Run the synthetic experiment described by the CONFIG JSON file."""
    try:
        doc = json.loads(Path(config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationFailure(f"missing config file: {config}") from None
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"{config}: invalid JSON ({exc.msg})") from None
    try:
        req = SimlabRequest.model_validate(doc)
    except ValueError as exc:
        raise ValidationFailure(f"{config}: {exc}") from None
    report = _dispatch(req, server)
    if fmt == "json":
        text = canonical_json(report.model_dump())
    else:
        text = records_to_csv(report.records)
    _write_output(text, output)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the stackd HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
