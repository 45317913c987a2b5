"""Versioned prompt templates and the helpers that fill and parse them."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .types import Document

QUESTION_RE = re.compile(r"^Question: (.*)$", re.MULTILINE)
CONTEXT_MARK = "Context:\n"
PTRUE_MARK = "Proposed answer: "


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Read ``templates/<name>.txt`` shipped with the package."""
    return resources.files("ragate").joinpath("templates", f"{name}.txt").read_text("utf-8")


def format_context(docs: list[Document]) -> str:
    if not docs:
        return ""
    lines = [f"[{i}] {d.title}: {d.body}" for i, d in enumerate(docs, 1)]
    return CONTEXT_MARK + "\n".join(lines) + "\n\n"


def qa_prompt(
    question: str,
    context_docs: list[Document] | None = None,
    template: str = "qa_v1",
    fewshot: str | None = "fewshot_v1",
) -> str:
    return load_template(template).format(
        fewshot=load_template(fewshot) if fewshot else "",
        context=format_context(context_docs) if context_docs is not None else "",
        question=question,
    )


def ptrue_prompt(question: str, answer: str, template: str = "ptrue_v1") -> str:
    return load_template(template).format(question=question, answer=answer)


def answer_only_prefix(template: str = "answer_only_v1") -> str:
    """Prefix used to force-score an answer without its question."""
    return load_template(template).rstrip("\n")


def parse_prompt(prompt: str) -> dict[str, str | None]:
    """Recover the question, optional context and probe kind from a prompt.

    The last ``Question:`` line wins, so few-shot demonstrations are skipped.
    """
    questions = QUESTION_RE.findall(prompt)
    question = questions[-1].strip() if questions else None
    context = None
    if CONTEXT_MARK in prompt:
        start = prompt.index(CONTEXT_MARK) + len(CONTEXT_MARK)
        end = prompt.rfind("\nQuestion: ")
        context = prompt[start:end] if end > start else prompt[start:]
    kind = "qa"
    proposed = None
    if PTRUE_MARK in prompt:
        kind = "ptrue"
        line = prompt[prompt.index(PTRUE_MARK) + len(PTRUE_MARK):]
        proposed = line.split("\n", 1)[0]
    elif question is None:
        kind = "answer_only"
    return {"question": question, "context": context, "kind": kind, "proposed": proposed}
