"""Query decomposition into shared extraction todos and a synthesis directive.

The coordinator sees the query and nothing else: no document names, no
content. One structured chat call per plan (plus at most one re-ask when the
reply does not validate).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import PlanValidationError
from .prompts import load_template
from .providers import ChatRequest, Providers

__all__ = ["TodoPlan", "plan", "validate_plan", "MAX_TODOS"]

log = logging.getLogger(__name__)

MAX_TODOS = 12

_CROSS_REF = re.compile(
    r"\b(as above|see above|the above|same as (?:task|todo|item) ?\d*|previous (?:task|todo|item)s?"
    r"|aforementioned|(?:task|todo) #?\d+ above)\b", re.I)
_SENTENCE_END = re.compile(r"[.!?](?:\s|$)")


@dataclass(frozen=True)
class TodoPlan:
    sub_agent_todos: tuple[str, ...]
    synthesis_directive: str

    def to_dict(self) -> dict:
        return {"sub_agent_todos": list(self.sub_agent_todos), "synthesis_directive": self.synthesis_directive}

    @classmethod
    def from_dict(cls, d: dict) -> "TodoPlan":
        todos = d.get("sub_agent_todos", d.get("subagent_todos"))
        return cls(tuple(todos), d["synthesis_directive"])


def validate_plan(obj: dict, max_todos: int = MAX_TODOS) -> TodoPlan:
    """Turn the coordinator's structured reply into a :class:`TodoPlan`.

    Empty or cross-referencing todos and an empty directive are rejected.
    More than ``max_todos`` todos are truncated and a directive outside 2-4
    sentences is accepted; both only log a warning.
    """
    todos = obj.get("subagent_todos", obj.get("sub_agent_todos"))
    if not todos:
        raise PlanValidationError("coordinator returned an empty todo list")
    todos = [str(t).strip() for t in todos]
    for i, t in enumerate(todos):
        if not t:
            raise PlanValidationError(f"todo {i + 1} is empty")
        if _CROSS_REF.search(t):
            raise PlanValidationError(f"todo {i + 1} is not self-contained: {t!r}")
    if len(todos) > max_todos:
        log.warning("coordinator produced %d todos; keeping the first %d", len(todos), max_todos)
        todos = todos[:max_todos]
    directive = str(obj.get("synthesis_directive", "")).strip()
    if not directive:
        raise PlanValidationError("coordinator returned an empty synthesis directive")
    n_sent = len(_SENTENCE_END.findall(directive)) or 1
    if not 2 <= n_sent <= 4:
        log.warning("synthesis directive has %d sentences (expected 2-4)", n_sent)
    return TodoPlan(tuple(todos), directive)


async def plan(query: str, providers: Providers, template: str | None = None,
               max_todos: int = MAX_TODOS) -> TodoPlan:
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    resp = await providers.chat(ChatRequest(
        system_prompt=template or load_template("coordinator"),
        user_content=query.strip(),
        model_role="coordinator",
        response_schema="write_todos",
    ))
    return validate_plan(resp.parsed, max_todos=max_todos)
