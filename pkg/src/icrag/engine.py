"""The co-refinement state machine and the method pipelines.

A run starts from an initial program and retrieval over the raw task
text, then alternates refine -> retrieve: each refiner reply carries the
next program and an optional retrieval query, and the loop stops when no
query comes back, when the iteration cap is hit, or when a reply cannot
be parsed (in which case the last well-formed program is kept). The
final program is executed once in the sandbox to obtain the prediction.

Method matrix:

    direct     one LLM call, answer read from text
    cot        one step-by-step call, answer read from text
    coc        one codification call, initial program executed
    rag_nl     one call with retrieved text context, answer from text
    rag_code   one call with retrieved code context, answer from text
    ircot      text-only co-iteration with retrieval, answer from text
    icrag_nl   full co-refinement, retrieval restricted to text items
    icrag      full co-refinement over text and code items
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field

from .gateway import (
    Gateway,
    RefinementParseError,
    TransportError,
    extract_code,
    parse_refinement,
)
from .retrieval import DEFAULT_TOP_K, KnowledgeItem, PoolConfig, VectorIndex, index_build
from .sandbox import ExecRequest, ExecResult
from .tasks import AnswerValue, RunRecord, Task, normalize_answer

METHODS = ("direct", "cot", "coc", "rag_nl", "rag_code", "ircot", "icrag_nl", "icrag")
_RETRIEVAL_METHODS = ("rag_nl", "rag_code", "ircot", "icrag_nl", "icrag")
_EXEC_METHODS = ("coc", "icrag_nl", "icrag")
_ITERATIVE_METHODS = ("ircot", "icrag_nl", "icrag")

DEFAULT_MAX_ITERATIONS = 10

STOP_REASONS = ("empty_query", "max_iterations", "parse_failure")

_ANSWER_LINE_RE = re.compile(r"^\s*answer\s*[:=]\s*(.*)$", re.IGNORECASE | re.MULTILINE)


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class MethodConfig:
    method: str
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    retrieval_k: int = DEFAULT_TOP_K
    pool: PoolConfig = field(default_factory=PoolConfig)
    exec_mode: str = "whole"
    lmulator: bool = False
    exec_timeout_ms: int = 10_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def uses_retrieval(self) -> bool:
        return self.method in _RETRIEVAL_METHODS

    @property
    def uses_sandbox(self) -> bool:
        return self.method in _EXEC_METHODS

    @property
    def retrieval_kinds(self) -> tuple[str, ...]:
        if self.method in ("rag_nl", "icrag_nl", "ircot"):
            return ("text",)
        if self.method == "rag_code":
            return ("code",)
        if self.method == "icrag":
            return ("text", "code")
        return ()


@dataclass
class IterationState:
    """One loop state: iteration counter, program, query, retrieved items."""

    n: int
    code: str
    query: str | None
    retrieved: list[tuple[KnowledgeItem, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "code": self.code,
            "query": self.query,
            "retrieved": [
                {"id": item.id, "kind": item.kind, "distance": distance}
                for item, distance in self.retrieved
            ],
        }


@dataclass
class IterationTrace:
    task_id: str
    method: str
    states: list[IterationState] = field(default_factory=list)
    stop_reason: str = "empty_query"
    exec_result: ExecResult | None = None
    failure: str | None = None

    @property
    def N(self) -> int:
        return self.states[-1].n if self.states else 0

    @property
    def final_code(self) -> str:
        return self.states[-1].code if self.states else ""

    def to_jsonl(self, config_digest: str = "") -> str:
        lines = [
            json.dumps(
                {"task_id": self.task_id, "method": self.method, "config_digest": config_digest},
                sort_keys=True,
            )
        ]
        lines += [json.dumps(state.to_json(), sort_keys=True) for state in self.states]
        footer = {
            "stop_reason": self.stop_reason,
            "N": self.N,
            "final_code_sha256": hashlib.sha256(self.final_code.encode("utf-8")).hexdigest(),
            "failure": self.failure,
        }
        if self.exec_result is not None:
            footer["exec_status"] = self.exec_result.status
            footer["answer_line"] = self.exec_result.answer_line
            footer["max_call_depth"] = self.exec_result.max_call_depth
            if self.exec_result.exception is not None:
                footer["exception"] = self.exec_result.exception.type
        lines.append(json.dumps(footer, sort_keys=True))
        return "\n".join(lines) + "\n"


class RetrievalView:
    """Kind-filtered search over a composed knowledge pool."""

    def __init__(self, items: list[KnowledgeItem], embedder, kinds: tuple[str, ...]):
        self.items = {item.id: item for item in items}
        self.embedder = embedder
        eligible = [i for i in sorted(items, key=lambda x: x.id) if i.kind in kinds]
        self._index: VectorIndex | None = index_build(eligible, embedder) if eligible else None

    def search(self, query_text: str, k: int) -> list[tuple[KnowledgeItem, float]]:
        if self._index is None or not query_text.strip():
            return []
        hits = self._index.search(self.embedder.embed(query_text), k)
        return [(self.items[item_id], distance) for item_id, distance in hits]


def _split_context(retrieved: list[tuple[KnowledgeItem, float]]) -> tuple[str, str]:
    code = "\n\n".join(item.body for item, _ in retrieved if item.kind == "code")
    text = "\n\n".join(item.body for item, _ in retrieved if item.kind == "text")
    return code, text


def parse_answer_line(text: str) -> str:
    """The last 'Answer:' line of a reply, or the stripped reply itself."""
    matches = _ANSWER_LINE_RE.findall(text or "")
    if matches:
        return matches[-1].strip()
    return (text or "").strip()


def bootstrap(
    task: Task,
    config: MethodConfig,
    view: RetrievalView | None,
    gateway: Gateway,
) -> IterationState:
    """Initial state: first program from the codification prompt, plus
    retrieval over the raw task text (no query exists yet)."""
    response = gateway.complete_template("A2i_codify", {"question": task.text})
    code = extract_code(response).code
    retrieved: list[tuple[KnowledgeItem, float]] = []
    if config.uses_retrieval and view is not None:
        retrieved = view.search(task.text, config.retrieval_k)
    return IterationState(n=0, code=code, query=None, retrieved=retrieved)


def step(
    state: IterationState,
    task: Task,
    config: MethodConfig,
    view: RetrievalView | None,
    gateway: Gateway,
) -> tuple[IterationState, str | None]:
    """One refine->retrieve move; returns (next state, stop reason or None)."""
    context_code, context_text = _split_context(state.retrieved)
    bindings = {
        "question": task.text,
        "code": state.code,
        "context_code": context_code,
        "context_text": context_text,
    }
    response = gateway.complete_template("A2ii_refine", bindings)
    try:
        parsed = parse_refinement(response)
    except RefinementParseError:
        failed = IterationState(n=state.n + 1, code=state.code, query=None, retrieved=[])
        return failed, "parse_failure"
    retrieved: list[tuple[KnowledgeItem, float]] = []
    if parsed.query is not None and view is not None:
        retrieved = view.search(parsed.query, config.retrieval_k)
    next_state = IterationState(
        n=state.n + 1, code=parsed.code, query=parsed.query, retrieved=retrieved
    )
    if parsed.query is None:
        return next_state, "empty_query"
    return next_state, None


def _co_refine(task, config, view, gateway, trace: IterationTrace) -> None:
    state = bootstrap(task, config, view, gateway)
    trace.states.append(state)
    while True:
        if state.n >= config.max_iterations:
            trace.stop_reason = "max_iterations"
            return
        state, stop = step(state, task, config, view, gateway)
        trace.states.append(state)
        if stop is not None:
            trace.stop_reason = stop
            return


def _ircot_bootstrap(task, config, view, gateway) -> IterationState:
    response = gateway.complete_template("A2iv_cot", {"texts": task.text})
    retrieved = view.search(task.text, config.retrieval_k) if view is not None else []
    return IterationState(n=0, code=response, query=None, retrieved=retrieved)


def _ircot_step(state, task, config, view, gateway) -> tuple[IterationState, str | None]:
    _, context_text = _split_context(state.retrieved)
    response = gateway.complete_template(
        "ircot_refine",
        {"question": task.text, "reasoning": state.code, "context_text": context_text},
    )
    query: str | None = None
    reasoning_lines: list[str] = []
    for line in response.split("\n"):
        if line.strip().lower().startswith("query:"):
            text = line.strip()[len("query:") :].strip()
            query = text if text else None
        else:
            reasoning_lines.append(line)
    reasoning = "\n".join(reasoning_lines).strip()
    if not reasoning:
        failed = IterationState(n=state.n + 1, code=state.code, query=None, retrieved=[])
        return failed, "parse_failure"
    retrieved = view.search(query, config.retrieval_k) if (query and view is not None) else []
    next_state = IterationState(n=state.n + 1, code=reasoning, query=query, retrieved=retrieved)
    return next_state, ("empty_query" if query is None else None)


def _ircot_refine(task, config, view, gateway, trace: IterationTrace) -> None:
    state = _ircot_bootstrap(task, config, view, gateway)
    trace.states.append(state)
    while True:
        if state.n >= config.max_iterations:
            trace.stop_reason = "max_iterations"
            return
        state, stop = _ircot_step(state, task, config, view, gateway)
        trace.states.append(state)
        if stop is not None:
            trace.stop_reason = stop
            return


def _single_state(trace: IterationTrace, code: str, retrieved=None) -> None:
    trace.states.append(IterationState(n=0, code=code, query=None, retrieved=retrieved or []))
    trace.stop_reason = "empty_query"


def run_task(
    task: Task,
    config: MethodConfig,
    pool_items: list[KnowledgeItem],
    gateway: Gateway,
    sandbox=None,
    embedder=None,
    binary_labels=None,
) -> tuple[RunRecord, IterationTrace]:
    """Run one method pipeline on one task.

    Transport hard failures mark the run failed (scored as a miss) and
    the trace is still persisted with the failure recorded. A strict
    replay miss propagates: an incomplete cassette is an environment
    problem, not task data.
    """
    if config.uses_sandbox and sandbox is None:
        raise EngineError(f"method {config.method!r} requires a sandbox")
    if config.uses_retrieval and embedder is None:
        raise EngineError(f"method {config.method!r} requires an embedder")

    view = None
    if config.uses_retrieval:
        view = RetrievalView(pool_items, embedder, config.retrieval_kinds)

    trace = IterationTrace(task_id=task.id, method=config.method)
    started = time.monotonic()
    prediction = AnswerValue(task.answer_kind, "", "", failed=True)
    try:
        raw_answer = _dispatch(task, config, view, gateway, sandbox, trace)
        if raw_answer is not None:
            prediction = normalize_answer(raw_answer, task.answer_kind, binary_labels)
    except TransportError as exc:
        trace.failure = f"{type(exc).__name__}: {exc}"
    wall_ms = int((time.monotonic() - started) * 1000)
    record = RunRecord(
        task_id=task.id,
        method=config.method,
        prediction=prediction,
        trace_ref=f"traces/{task.id}.trace.jsonl",
        wall_ms=wall_ms,
    )
    return record, trace


def _dispatch(task, config, view, gateway, sandbox, trace) -> str | None:
    method = config.method

    if method == "direct":
        response = gateway.complete_template("A2iii_direct", {"texts": task.text})
        _single_state(trace, "")
        return parse_answer_line(response)

    if method == "cot":
        response = gateway.complete_template("A2iv_cot", {"texts": task.text})
        _single_state(trace, "")
        return parse_answer_line(response)

    if method == "rag_nl":
        retrieved = view.search(task.text, config.retrieval_k)
        context = "\n\n".join(item.body for item, _ in retrieved)
        response = gateway.complete_template(
            "A2v_rag_nl", {"texts": task.text, "context": context}
        )
        _single_state(trace, "", retrieved)
        return parse_answer_line(response)

    if method == "rag_code":
        retrieved = view.search(task.text, config.retrieval_k)
        context = "\n\n".join(item.body for item, _ in retrieved)
        response = gateway.complete_template(
            "A2vi_rag_code", {"texts": task.text, "context": context}
        )
        _single_state(trace, "", retrieved)
        return parse_answer_line(response)

    if method == "coc":
        response = gateway.complete_template("A2i_codify", {"question": task.text})
        code = extract_code(response).code
        _single_state(trace, code)
        return _execute_final(trace, config, sandbox, gateway)

    if method == "ircot":
        _ircot_refine(task, config, view, gateway, trace)
        return parse_answer_line(trace.final_code)

    # icrag / icrag_nl
    _co_refine(task, config, view, gateway, trace)
    return _execute_final(trace, config, sandbox, gateway)


def make_sim_resolver(gateway: Gateway):
    """LLM-backed side of the simulate-on-failure handshake: turn one
    failing statement into a stand-in literal."""

    def resolve(sim_request) -> str:
        environment = "\n".join(f"{k} = {v}" for k, v in sim_request.env_excerpt)
        response = gateway.complete_template(
            "simulate_stmt",
            {
                "statement": sim_request.stmt_source,
                "missing_name": sim_request.missing_name,
                "environment": environment,
            },
        )
        return response.strip().strip("`").strip()

    return resolve


def _execute_final(
    trace: IterationTrace, config: MethodConfig, sandbox, gateway: Gateway
) -> str | None:
    mode = "stepwise" if config.lmulator else config.exec_mode
    request = ExecRequest(
        code=trace.final_code,
        mode=mode,
        lmulator=config.lmulator,
        timeout_ms=config.exec_timeout_ms,
    )
    resolver = make_sim_resolver(gateway) if config.lmulator else None
    result = sandbox.exec(request, sim_resolver=resolver)
    trace.exec_result = result
    return result.answer_line


def iteration_stats(traces: list[IterationTrace]) -> dict:
    """Average/max iteration count and the fraction finishing within 3."""
    if not traces:
        raise EngineError("no traces to summarize")
    ns = [trace.N for trace in traces]
    return {
        "avg_N": sum(ns) / len(ns),
        "max_N": max(ns),
        "fraction_N_le_3": sum(1 for n in ns if n <= 3) / len(ns),
    }
