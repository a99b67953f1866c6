"""FastAPI application exposing the weight solvers as a stateless service.

Every endpoint is a pure request/response computation, safe to scale
horizontally.  Responses are rendered through the canonical serializer
(17 significant digits, deterministic key order) so that a byte-level
comparison of two responses is meaningful.
"""

from __future__ import annotations

from fastapi import FastAPI, Response

from .. import __version__
from ..report import canonical_json
from . import handlers
from .schemas import (
    PsisRequest,
    SequentialRequest,
    SimlabRequest,
    WeightsRequest,
)


def _canonical(model) -> Response:
    return Response(
        content=canonical_json(model.model_dump()), media_type="application/json"
    )


def create_app() -> FastAPI:
    app = FastAPI(title="stackd", version=__version__)

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/weights")
    def weights(req: WeightsRequest):
        return _canonical(handlers.compute_weights(req))

    @app.post("/v1/sequential")
    def sequential(req: SequentialRequest):
        return _canonical(handlers.compute_sequential(req))

    @app.post("/v1/psis")
    def psis(req: PsisRequest):
        return _canonical(handlers.compute_psis(req))

    @app.post("/v1/simlab")
    def simlab(req: SimlabRequest):
        return _canonical(handlers.compute_simlab(req))

    @app.exception_handler(handlers.RequestError)
    async def request_error_handler(request, exc: handlers.RequestError):
        return Response(
            content=canonical_json({"detail": str(exc)}),
            media_type="application/json",
            status_code=422,
        )

    return app


app = create_app()
