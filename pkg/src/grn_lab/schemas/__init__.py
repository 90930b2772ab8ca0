"""Schemas for every artifact the CLI emits.

JSON artifacts validate against the JSON Schema files shipped next to this
module; CSV artifacts have fixed, versioned column sets recorded in
``csv_columns.json``.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import DataFormatError

__all__ = ["json_schema", "validate_json", "csv_columns"]

_JSON_KINDS = (
    "experiment_config",
    "manifest",
    "trace_summary",
    "eval_summary",
    "ablate_summary",
)


@lru_cache(maxsize=None)
def json_schema(kind: str) -> dict:
    if kind not in _JSON_KINDS:
        raise KeyError(f"no JSON schema named {kind!r}; known: {_JSON_KINDS}")
    text = resources.files(__package__).joinpath(f"{kind}.schema.json").read_text()
    return json.loads(text)


def validate_json(kind: str, obj) -> None:
    """Raise DataFormatError when ``obj`` violates the named schema."""
    try:
        jsonschema.validate(obj, json_schema(kind))
    except jsonschema.ValidationError as exc:
        raise DataFormatError(f"{kind} document violates its schema: {exc.message}") from exc


@lru_cache(maxsize=None)
def _columns() -> dict[str, list[str]]:
    text = resources.files(__package__).joinpath("csv_columns.json").read_text()
    return json.loads(text)


def csv_columns(kind: str) -> list[str]:
    cols = _columns()
    if kind not in cols:
        raise KeyError(f"no CSV column set named {kind!r}; known: {sorted(cols)}")
    return list(cols[kind])
