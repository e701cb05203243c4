"""Registered chat prompt templates.

Every request sent through the gateway is rendered from one of these
templates; nothing else may reach the chat API. Placeholder names are
declared per template and checked at render time, and the stored text is
the exact wire string (any response-format suffix is appended by gateway
configuration, not edited into the registry).
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class RenderError(ValueError):
    """A placeholder was missing or left unresolved."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    human_text: str
    placeholders: frozenset[str]

    def render(self, bindings: dict[str, str], system_suffix: str = "") -> tuple[str, str]:
        missing = self.placeholders - set(bindings)
        if missing:
            raise RenderError(
                f"template {self.template_id!r} missing binding(s): {', '.join(sorted(missing))}"
            )
        # Substitution is single-pass over the template text, so braces
        # inside bound values are never re-expanded.
        system = _substitute(self.system_text, bindings) + system_suffix
        human = _substitute(self.human_text, bindings)
        return system, human


_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def _substitute(text: str, bindings: dict[str, str]) -> str:
    def repl(m: re.Match) -> str:
        name = m.group(1)
        return str(bindings.get(name, m.group(0)))

    return _PLACEHOLDER_RE.sub(repl, text)


def _declared(text: str) -> frozenset[str]:
    return frozenset(_PLACEHOLDER_RE.findall(text))


def _template(template_id: str, system_text: str, human_text: str) -> PromptTemplate:
    return PromptTemplate(
        template_id=template_id,
        system_text=system_text,
        human_text=human_text,
        placeholders=_declared(system_text) | _declared(human_text),
    )


A1_BUILD_SNIPPET = _template(
    "A1_build_snippet",
    system_text=(
        "You are a code-generating assistant. Given a yes/no or free-form question "
        "and its correct answer, write an executable Python program that contains "
        "your reasoning in code and returns the final answer.\n\n"
        "Here are some examples of how similar problems map to code: {examples}"
    ),
    human_text="Question: {question}\nAnswer: {answer}",
)

A2I_CODIFY = _template(
    "A2i_codify",
    system_text="",
    human_text=(
        "``` python\n"
        "# Problem: {question}\n"
        "# Write Python code to solve the question below.\n"
        "'''\n"
        "Answer: <result>"
    ),
)

A2II_REFINE = _template(
    "A2ii_refine",
    system_text=(
        "You are a code-refinement assistant. Given: 1) A draft Python program whose "
        "last line prints the answer; 2) A set of retrieved code snippets showing "
        "relative reasoning steps in Python.\n\n"
        "Produce: a) A refined, fully executable Python program; b) A short natural "
        "language query (or empty) requesting any further knowledge or code fragments."
    ),
    human_text=(
        "Problem:{question}\n"
        "Initial Code:{code}\n"
        "Similar Code Snippets:{context_code}\n"
        "Natural Language Context:{context_text}"
    ),
)

A2III_DIRECT = _template(
    "A2iii_direct",
    system_text="Directly answer the math question.\nFormat: Answer: <number>",
    human_text="Problem:{texts}",
)

A2IV_COT = _template(
    "A2iv_cot",
    system_text=(
        "You are a math expert. Show step-by-step reasoning.\n"
        "Format: Thought: <steps>\n"
        "Answer: <number>"
    ),
    human_text="Problem:{texts}",
)

A2V_RAG_NL = _template(
    "A2v_rag_nl",
    system_text=(
        "You have access to example (problem, answer) pairs. Use them to answer directly.\n"
        "Output format: Answer: <number>"
    ),
    human_text="Problem:{texts}\nExamples:{context}",
)

A2VI_RAG_CODE = _template(
    "A2vi_rag_code",
    system_text=(
        "You have access to example Python snippets. Use them to answer directly.\n"
        "Output format: Answer: <number>"
    ),
    human_text="Problem:{texts}\nCode Examples:{context}",
)

JUDGE_PROOF = _template(
    "judge_proof",
    system_text=(
        "You are a strict grading assistant. Compare the candidate proof against the "
        "reference proof and decide whether the candidate establishes the same result "
        "by valid reasoning.\n"
        "Reply with exactly one line: VERDICT: CORRECT or VERDICT: INCORRECT"
    ),
    human_text="Reference proof:{reference}\nCandidate proof:{candidate}",
)

# Text-only co-iteration refiner: same loop shape as the code refiner but the
# artifact being revised is step-by-step reasoning, never code, and the answer
# is read from the final text.
IRCOT_REFINE = _template(
    "ircot_refine",
    system_text=(
        "You are a reasoning-refinement assistant. Let's think step by step. Given: "
        "1) A draft chain of reasoning whose last line states the answer as "
        "'Answer: <answer>'; 2) Retrieved reference passages.\n\n"
        "Produce: a) A refined chain of reasoning ending in an 'Answer:' line; "
        "b) A short natural language query (or empty) requesting any further knowledge."
    ),
    human_text=(
        "Problem:{question}\n"
        "Initial Reasoning:{reasoning}\n"
        "Natural Language Context:{context_text}"
    ),
)

# Simulate-on-failure: when a generated program calls an undefined helper,
# the model stands in for that one statement's result. Replies must be a
# bare literal so the executor can bind it without evaluating anything.
SIMULATE_STMT = _template(
    "simulate_stmt",
    system_text=(
        "You simulate the result of one Python statement that failed because a "
        "helper function is not defined. Reply with exactly one Python literal "
        "(number, string, boolean, list, tuple, dict, or None) that plausibly "
        "stands in for the statement's value. Reply with the literal only, no "
        "prose and no code fence."
    ),
    human_text=(
        "Statement:{statement}\n"
        "Undefined name:{missing_name}\n"
        "Known variables:{environment}"
    ),
)

REGISTRY: dict[str, PromptTemplate] = {
    t.template_id: t
    for t in (
        A1_BUILD_SNIPPET,
        A2I_CODIFY,
        A2II_REFINE,
        A2III_DIRECT,
        A2IV_COT,
        A2V_RAG_NL,
        A2VI_RAG_CODE,
        JUDGE_PROOF,
        IRCOT_REFINE,
        SIMULATE_STMT,
    )
}


def get_template(template_id: str) -> PromptTemplate:
    try:
        return REGISTRY[template_id]
    except KeyError:
        raise RenderError(f"unknown template id {template_id!r}") from None
