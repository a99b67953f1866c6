"""Manifest-driven ingestion of log-likelihood and log-density files.

A manifest is a JSON document naming one file per model:

    {
      "n_obs": 50,
      "time_ordered": false,
      "content": "draws",
      "models": [
        {"model_id": "m1", "path": "m1.csv", "format": "csv"},
        {"model_id": "m2", "path": "m2.ndjson", "format": "ndjson"}
      ],
      "groups": ["a", "a", "b", ...]
    }

File formats:

- ``csv``: rows are draws, columns are observations, no header unless
  the per-model ``header`` flag (or the CLI ``--header`` switch) says
  otherwise;
- ``ndjson``: one record per draw, ``{"draw": s, "loglik": [...]}``;
  records are ordered by their ``draw`` index when present.

``content`` is ``"draws"`` (an S x n matrix per model, the PSIS input)
or ``"densities"`` (a single row of n already-integrated log predictive
densities per model, PSIS skipped).  ``-inf`` cells are accepted only
for densities; NaN is always rejected, naming the offending row and
column.  An optional per-model ``r_eff_path`` names a text file with one
relative-efficiency value per observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .psis import LogLikDrawMatrix

__all__ = ["IngestError", "ManifestModel", "ModelSet", "ingest", "load_matrix"]

SUPPORTED_FORMATS = ("csv", "ndjson")
CONTENT_KINDS = ("draws", "densities")


class IngestError(ValueError):
    """Input file or manifest failed validation; message carries location."""


@dataclass(frozen=True)
class ManifestModel:
    model_id: str
    path: Path
    format: str
    header: bool = False
    r_eff_path: Path | None = None


@dataclass(frozen=True)
class ModelSet:
    """Validated ingestion result for one manifest."""

    model_ids: tuple[str, ...]
    matrices: tuple[np.ndarray, ...]
    r_effs: tuple[np.ndarray | None, ...]
    n_obs: int
    content: str
    time_ordered: bool
    groups: tuple[str, ...] | None

    def draw_matrices(self) -> list[LogLikDrawMatrix]:
        if self.content != "draws":
            raise IngestError("manifest carries densities, not draw matrices")
        return [
            LogLikDrawMatrix(values=m, model_id=mid, r_eff=r)
            for m, mid, r in zip(self.matrices, self.model_ids, self.r_effs)
        ]

    def density_matrix(self) -> np.ndarray:
        """(n, K) matrix of precomputed log predictive densities."""
        if self.content != "densities":
            raise IngestError("manifest carries draw matrices, not densities")
        return np.column_stack([m[0] for m in self.matrices])


def _parse_cell(token: str, path, line_no: int, col: int, allow_neg_inf: bool) -> float:
    token = token.strip()
    try:
        value = float(token)
    except ValueError:
        raise IngestError(
            f"{path}:{line_no}: column {col + 1}: non-numeric cell {token!r}"
        ) from None
    if math.isnan(value):
        raise IngestError(f"{path}: NaN at (row {line_no}, column {col + 1})")
    if math.isinf(value):
        if value > 0 or not allow_neg_inf:
            raise IngestError(
                f"{path}: non-finite value at (row {line_no}, column {col + 1})"
            )
    return value


def _load_csv(path: Path, header: bool, allow_neg_inf: bool) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line_no == 1 and header:
                continue
            if not line.strip():
                continue
            tokens = line.rstrip("\n").split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise IngestError(
                    f"{path}:{line_no}: ragged row has {len(tokens)} cells, "
                    f"expected {width}"
                )
            rows.append(
                [
                    _parse_cell(tok, path, line_no, col, allow_neg_inf)
                    for col, tok in enumerate(tokens)
                ]
            )
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _load_ndjson(path: Path, allow_neg_inf: bool) -> np.ndarray:
    records: list[tuple[int | None, list[float]]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "loglik" not in rec:
                raise IngestError(f"{path}:{line_no}: record missing 'loglik' array")
            raw = rec["loglik"]
            if not isinstance(raw, list):
                raise IngestError(f"{path}:{line_no}: 'loglik' must be an array")
            if width is None:
                width = len(raw)
            elif len(raw) != width:
                raise IngestError(
                    f"{path}:{line_no}: ragged record has {len(raw)} values, "
                    f"expected {width}"
                )
            values = [
                _parse_cell(str(v), path, line_no, col, allow_neg_inf)
                for col, v in enumerate(raw)
            ]
            draw = rec.get("draw")
            records.append((draw if isinstance(draw, int) else None, values))
    if not records:
        raise IngestError(f"{path}: no records")
    draws = [d for d, _ in records]
    if all(d is not None for d in draws) and len(set(draws)) == len(draws):
        records.sort(key=lambda item: item[0])
    return np.asarray([vals for _, vals in records], dtype=float)


def load_matrix(
    path: Path, fmt: str, header: bool = False, allow_neg_inf: bool = False
) -> np.ndarray:
    """Load one model's matrix, validating every cell."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing file: {path}")
    if fmt == "csv":
        return _load_csv(path, header, allow_neg_inf)
    if fmt == "ndjson":
        return _load_ndjson(path, allow_neg_inf)
    raise IngestError(f"unsupported format {fmt!r}; expected one of {SUPPORTED_FORMATS}")


def _load_r_eff(path: Path, n_obs: int) -> np.ndarray:
    if not path.exists():
        raise IngestError(f"missing r_eff file: {path}")
    values = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            values.append(_parse_cell(line, path, line_no, 0, allow_neg_inf=False))
    if len(values) != n_obs:
        raise IngestError(
            f"{path}: r_eff has {len(values)} entries, expected n_obs={n_obs}"
        )
    arr = np.asarray(values)
    if np.any(arr <= 0):
        raise IngestError(f"{path}: r_eff entries must be positive")
    return arr


def _parse_manifest(manifest_path: Path, default_header: bool):
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestError(f"missing manifest: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise IngestError(f"{manifest_path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("models"), list):
        raise IngestError(f"{manifest_path}: manifest must have a 'models' array")
    if not doc["models"]:
        raise IngestError(f"{manifest_path}: manifest lists no models")
    content = doc.get("content", "draws")
    if content not in CONTENT_KINDS:
        raise IngestError(
            f"{manifest_path}: content must be one of {CONTENT_KINDS}, got {content!r}"
        )
    base = manifest_path.parent
    models = []
    for i, entry in enumerate(doc["models"]):
        if not isinstance(entry, dict) or "path" not in entry:
            raise IngestError(f"{manifest_path}: models[{i}] missing 'path'")
        fmt = entry.get("format", "csv")
        if fmt not in SUPPORTED_FORMATS:
            raise IngestError(
                f"{manifest_path}: models[{i}] has unsupported format {fmt!r}"
            )
        models.append(
            ManifestModel(
                model_id=str(entry.get("model_id", f"model_{i}")),
                path=base / entry["path"],
                format=fmt,
                header=bool(entry.get("header", default_header)),
                r_eff_path=(base / entry["r_eff_path"]) if entry.get("r_eff_path") else None,
            )
        )
    paths = [str(m.path) for m in models]
    if len(set(paths)) != len(paths):
        raise IngestError(f"{manifest_path}: model paths must be distinct")
    ids = [m.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise IngestError(f"{manifest_path}: model_ids must be distinct")
    groups = doc.get("groups")
    if groups is not None and not isinstance(groups, list):
        raise IngestError(f"{manifest_path}: groups must be an array of labels")
    return models, content, bool(doc.get("time_ordered", False)), doc.get("n_obs"), groups


def ingest(manifest_path, default_header: bool = False) -> ModelSet:
    """Load and validate every model file named by a manifest.

    All matrices must agree on the observation count, with the manifest's
    ``n_obs`` (when present) as the authority.  Returns draw matrices or
    density rows depending on the manifest's ``content``.
    """
    manifest_path = Path(manifest_path)
    models, content, time_ordered, n_obs, groups = _parse_manifest(
        manifest_path, default_header
    )
    allow_neg_inf = content == "densities"
    matrices: list[np.ndarray] = []
    r_effs: list[np.ndarray | None] = []
    for spec in models:
        matrix = load_matrix(spec.path, spec.format, spec.header, allow_neg_inf)
        if content == "densities" and matrix.shape[0] != 1:
            raise IngestError(
                f"{spec.path}: densities content expects a single row of "
                f"values, got {matrix.shape[0]} rows"
            )
        matrices.append(matrix)
    widths = {m.shape[1] for m in matrices}
    if len(widths) != 1:
        raise IngestError(
            f"models disagree on observation count: {sorted(widths)}"
        )
    width = widths.pop()
    if n_obs is not None and n_obs != width:
        raise IngestError(
            f"manifest n_obs={n_obs} but files have {width} observations"
        )
    if groups is not None and len(groups) != width:
        raise IngestError(
            f"groups has {len(groups)} labels, expected n_obs={width}"
        )
    for spec in models:
        r_effs.append(_load_r_eff(spec.r_eff_path, width) if spec.r_eff_path else None)
    if content == "draws":
        for spec, matrix in zip(models, matrices):
            if matrix.shape[0] < 2:
                raise IngestError(
                    f"{spec.path}: draws content needs at least 2 rows"
                )
    return ModelSet(
        model_ids=tuple(m.model_id for m in models),
        matrices=tuple(matrices),
        r_effs=tuple(r_effs),
        n_obs=width,
        content=content,
        time_ordered=time_ordered,
        groups=tuple(str(g) for g in groups) if groups is not None else None,
    )
