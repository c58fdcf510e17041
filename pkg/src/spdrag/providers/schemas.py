"""JSON schemas for structured model output, plus parsing/validation."""

from __future__ import annotations

import json
import re

import jsonschema

from ..errors import SchemaError

WRITE_TODOS = {
    "type": "object",
    "properties": {
        "subagent_todos": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "synthesis_directive": {"type": "string", "minLength": 1},
    },
    "required": ["subagent_todos", "synthesis_directive"],
}

_SEARCH = {
    "type": "object",
    "properties": {
        "action": {"const": "search"},
        "query": {"type": "string", "minLength": 1},
        "reasoning": {"type": "string"},
    },
    "required": ["action", "query", "reasoning"],
    "not": {"anyOf": [{"required": ["findings"]}, {"required": ["relevance"]}]},
}

_FINALIZE = {
    "type": "object",
    "properties": {
        "action": {"const": "finalize"},
        "findings": {"type": "string", "minLength": 1},
        "reasoning": {"type": "string"},
        "relevance": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "required": ["action", "findings", "reasoning", "relevance"],
    "not": {"required": ["query"]},
}

AGENT_ACTION = {"oneOf": [_SEARCH, _FINALIZE]}
AGENT_FINALIZE = _FINALIZE

# the agentic baseline has no use for a per-document relevance
BASELINE_ACTION = {"oneOf": [_SEARCH, {**_FINALIZE, "required": ["action", "findings", "reasoning"]}]}
BASELINE_FINALIZE = BASELINE_ACTION["oneOf"][1]

JUDGE_SCORE = {
    "type": "object",
    "properties": {
        "score": {"type": "integer", "minimum": 0, "maximum": 100},
        "rationale": {"type": "string"},
    },
    "required": ["score"],
}

SCHEMAS: dict[str, dict] = {
    "write_todos": WRITE_TODOS,
    "agent_action": AGENT_ACTION,
    "agent_finalize": AGENT_FINALIZE,
    "baseline_action": BASELINE_ACTION,
    "baseline_finalize": BASELINE_FINALIZE,
    "judge_score": JUDGE_SCORE,
}

_FENCE = re.compile(r"^\s*```(?:json)?\s*(.*?)\s*```\s*$", re.S)


def get_schema(schema_id: str) -> dict:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise KeyError(f"unknown response schema {schema_id!r}") from None


def parse_structured(text: str, schema_id: str) -> dict:
    """Parse ``text`` as JSON (tolerating a Markdown code fence) and validate it."""
    m = _FENCE.match(text)
    body = m.group(1) if m else text.strip()
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        start, end = body.find("{"), body.rfind("}")
        if start < 0 or end <= start:
            raise SchemaError(f"reply is not JSON: {exc.msg}", raw=text) from None
        try:
            obj = json.loads(body[start:end + 1])
        except json.JSONDecodeError:
            raise SchemaError(f"reply is not JSON: {exc.msg}", raw=text) from None
    try:
        jsonschema.validate(obj, get_schema(schema_id))
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"reply does not match {schema_id}: {exc.message}", raw=text) from None
    return obj
