"""JSON schemas for scenarios, repair outcomes and batch reports."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

NAMES = ("scenario", "outcome", "report")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}")
    text = resources.files("rulerepair").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc, name: str) -> None:
    """Raise jsonschema.ValidationError when doc does not match the named schema."""
    jsonschema.validate(doc, load_schema(name))


def errors(doc, name: str) -> list[str]:
    v = jsonschema.Draft202012Validator(load_schema(name))
    return [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in v.iter_errors(doc)]
