"""Deterministic report serialization.

Reports must be byte-identical across runs given the same inputs, seed,
and tool version, so serialization is hand-rolled rather than delegated:
mapping keys keep insertion order (pydantic field order for response
models), floats are written with 17 significant digits (full float64
round-trip precision), and non-finite values become the strings "inf",
"-inf" and "nan" since JSON has no literal for them.
"""

from __future__ import annotations

import math

__all__ = ["SCHEMA_VERSION", "canonical_json", "records_to_csv", "weights_csv"]

SCHEMA_VERSION = "1"


def _format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _emit(obj, parts: list[str]) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(_escape(obj))
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, float):
        parts.append(_format_float(obj))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                parts.append(",")
            parts.append(_escape(str(key)))
            parts.append(":")
            _emit(value, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, value in enumerate(obj):
            if i:
                parts.append(",")
            _emit(value, parts)
        parts.append("]")
    elif hasattr(obj, "item"):
        # numpy scalar
        _emit(obj.item(), parts)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(data) -> str:
    """Serialize nested dict/list/scalar data deterministically."""
    parts: list[str] = []
    _emit(data, parts)
    parts.append("\n")
    return "".join(parts)


def _csv_scalar(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    if isinstance(value, (list, tuple)):
        return ";".join(_csv_scalar(v) for v in value)
    text = str(value)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def records_to_csv(records: list[dict]) -> str:
    """Flat records to CSV with the union of keys as columns.

    Column order is first-appearance order, which is deterministic for
    deterministically built records.
    """
    columns: list[str] = []
    for rec in records:
        for key in rec:
            if key not in columns:
                columns.append(key)
    lines = [",".join(columns)]
    for rec in records:
        lines.append(",".join(_csv_scalar(rec.get(col)) for col in columns))
    return "\n".join(lines) + "\n"


def weights_csv(model_ids, weights, elpds=None, ses=None) -> str:
    """Per-model weight table: model_id, weight, and elpd/se when known."""
    lines = ["model_id,weight,elpd,se"]
    for k, mid in enumerate(model_ids):
        elpd = _csv_scalar(elpds[k]) if elpds is not None else ""
        se = _csv_scalar(ses[k]) if ses is not None else ""
        lines.append(f"{_csv_scalar(mid)},{_csv_scalar(float(weights[k]))},{elpd},{se}")
    return "\n".join(lines) + "\n"
