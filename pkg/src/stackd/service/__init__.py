"""HTTP service layer: pydantic schemas, handlers, and the FastAPI app."""

from .app import app, create_app
from .handlers import (
    RequestError,
    compute_psis,
    compute_sequential,
    compute_simlab,
    compute_weights,
)

__all__ = [
    "app",
    "create_app",
    "RequestError",
    "compute_weights",
    "compute_sequential",
    "compute_psis",
    "compute_simlab",
]
