"""Chat-completion access with deterministic record/replay.

A :class:`Cassette` stores responses keyed by a stable request digest so
every LLM-dependent pipeline can run byte-identically offline. Live calls
go through a pluggable transport (HTTP or scripted); credentials come
from an environment variable and are never written into any artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

from . import prompts

CASSETTE_MODES = ("live_record", "replay_strict", "replay_fallthrough")

DEFAULT_TEMPERATURE = 0.2  # code-generation sampling temperature
DEFAULT_MAX_TOKENS = 2048

# Appended to the refiner system text so replies carry a machine-readable
# trailing query line; kept in config, not in the template registry.
DEFAULT_REFINE_FORMAT_SUFFIX = (
    "\n\nReturn the refined program inside one fenced ``` python code block. "
    "After the code block, output one final line of the form 'Query: <text>' "
    "and leave the text empty if no further knowledge is needed."
)


class TransportError(RuntimeError):
    """A retriable transport-level failure; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class CassetteMiss(KeyError):
    """Strict replay hit an unrecorded request digest."""

    def __init__(self, digest: str):
        super().__init__(digest)
        self.digest = digest

    def __str__(self) -> str:
        return f"no recorded response for request digest {self.digest}"


class ExtractionError(ValueError):
    pass


class RefinementParseError(ValueError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    system: str
    human: str
    temperature: float = DEFAULT_TEMPERATURE
    model_id: str = "scripted"
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")


def request_digest(request: ChatRequest) -> str:
    """Stable hash of the request identity.

    Excludes max_tokens so replay tolerates transport-level config drift.
    """
    payload = json.dumps(
        [
            request.template_id,
            request.system,
            request.human,
            repr(request.temperature),
            request.model_id,
        ],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Cassette:
    """Recorded request-digest -> response store backed by a JSONL file.

    Replays are lock-free; recording serializes appends through a lock so
    one writer can feed many concurrent readers.
    """

    def __init__(self, mode: str = "replay_strict", path=None):
        if mode not in CASSETTE_MODES:
            raise ValueError(f"unknown cassette mode {mode!r}")
        self.mode = mode
        self.path = path
        self.entries: dict[str, str] = {}
        self._requests: dict[str, dict] = {}
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            self._load(path)

    def _load(self, path) -> None:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                self.entries[rec["digest"]] = rec["response"]
                req = dict(rec.get("request", {}))
                req["template_id"] = rec.get("template_id", "")
                self._requests[rec["digest"]] = req

    def lookup(self, digest: str) -> str | None:
        return self.entries.get(digest)

    def record(self, request: ChatRequest, response: str) -> None:
        digest = request_digest(request)
        with self._lock:
            if digest in self.entries:
                return
            self.entries[digest] = response
            req_payload = {
                "system": request.system,
                "human": request.human,
                "temperature": request.temperature,
                "model_id": request.model_id,
            }
            self._requests[digest] = dict(req_payload, template_id=request.template_id)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {
                                "digest": digest,
                                "template_id": request.template_id,
                                "request": req_payload,
                                "response": response,
                            },
                            ensure_ascii=False,
                            sort_keys=True,
                        )
                    )
                    fh.write("\n")

    def audit(self) -> list[str]:
        """Re-derive each stored digest; return the mismatching ones."""
        bad = []
        for digest, req in self._requests.items():
            if not req or "system" not in req:
                continue
            rebuilt = ChatRequest(
                template_id=req.get("template_id", ""),
                system=req["system"],
                human=req["human"],
                temperature=req["temperature"],
                model_id=req["model_id"],
            )
            if request_digest(rebuilt) != digest:
                bad.append(digest)
        return bad


Transport = Callable[[ChatRequest], str]


class ScriptedTransport:
    """Test transport answering from a handler function."""

    def __init__(self, handler: Callable[[ChatRequest], str]):
        self._handler = handler
        self.calls = 0

    def __call__(self, request: ChatRequest) -> str:
        self.calls += 1
        return self._handler(request)


class HttpTransport:
    """OpenAI-style chat-completions transport.

    The API key is read from ``api_key_env`` at call time; it never
    appears in requests, cassettes, or traces.
    """

    def __init__(self, base_url: str, api_key_env: str = "ICRAG_API_KEY", timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def __call__(self, request: ChatRequest) -> str:
        import requests

        key = os.environ.get(self.api_key_env)
        if not key:
            raise TransportError(f"environment variable {self.api_key_env} is not set")
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.human})
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json={
                    "model": request.model_id,
                    "messages": messages,
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                },
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except (OSError, ValueError, KeyError, IndexError) as exc:
            raise TransportError(str(exc)) from exc


def complete(
    request: ChatRequest,
    cassette: Cassette | None,
    transport: Transport | None = None,
    retries: int = 3,
    backoff_s: float = 0.5,
) -> str:
    """Resolve a request to a response per the cassette mode.

    replay_strict never touches the transport; live_record and
    replay_fallthrough call it on a miss and record the result. Transport
    failures are retried with exponential backoff, bounded by ``retries``.
    """
    digest = request_digest(request)
    if cassette is not None:
        hit = cassette.lookup(digest)
        if hit is not None:
            return hit
        if cassette.mode == "replay_strict":
            raise CassetteMiss(digest)
    if transport is None:
        raise TransportError("no transport configured and request not recorded")
    last: TransportError | None = None
    for attempt in range(1, retries + 1):
        try:
            response = transport(request)
            break
        except TransportError as exc:
            last = TransportError(str(exc), attempts=attempt)
            if attempt == retries:
                raise last from exc
            time.sleep(backoff_s * (2 ** (attempt - 1)))
    else:  # pragma: no cover - loop always breaks or raises
        raise last
    if cassette is not None:
        cassette.record(request, response)
    return response


class CodeExtraction(NamedTuple):
    code: str
    no_fence: bool


_FENCE_START = "```"


def extract_code(response: str) -> CodeExtraction:
    """Return the first fenced code block, or the whole body flagged no_fence."""
    if not response or not response.strip():
        raise ExtractionError("empty response")
    lines = response.split("\n")
    start = None
    for i, line in enumerate(lines):
        if line.lstrip().startswith(_FENCE_START):
            start = i
            break
    if start is None:
        return CodeExtraction(response.strip(), no_fence=True)
    body: list[str] = []
    for line in lines[start + 1 :]:
        if line.lstrip().startswith(_FENCE_START):
            break
        body.append(line)
    code = "\n".join(body).strip("\n")
    if not code.strip():
        raise ExtractionError("fenced code block is empty")
    return CodeExtraction(code, no_fence=False)


@dataclass(frozen=True)
class ParsedRefinement:
    """One refiner reply: the next program, and the next query if any.

    An absent query is the loop's stop signal.
    """

    code: str
    query: str | None = None


def parse_refinement(response: str) -> ParsedRefinement:
    """Split a refiner reply into (code block, trailing query).

    The query is the last line beginning with "Query:" (case-insensitive)
    outside the code fence; empty or missing query text means stop.
    """
    if not response or not response.strip():
        raise RefinementParseError("empty refinement response")
    extraction = extract_code(response)
    if extraction.no_fence:
        raise RefinementParseError("refinement response contains no fenced code block")
    query: str | None = None
    in_fence = False
    for line in response.split("\n"):
        stripped = line.strip()
        if stripped.startswith(_FENCE_START):
            in_fence = not in_fence
            continue
        if in_fence:
            continue
        lowered = stripped.lower()
        if lowered.startswith("query:"):
            text = stripped[len("query:") :].strip()
            query = text if text else None
    return ParsedRefinement(code=extraction.code, query=query)


@dataclass
class GatewayConfig:
    model_id: str = "scripted"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    refine_format_suffix: str = DEFAULT_REFINE_FORMAT_SUFFIX
    endpoint: str = ""
    api_key_env: str = "ICRAG_API_KEY"
    cassette_path: str = ""
    cassette_mode: str = "replay_strict"


class Gateway:
    """Template rendering plus completion against one cassette/transport pair."""

    # templates whose system text carries the configured format suffix
    _SUFFIXED = ("A2ii_refine", "ircot_refine")

    def __init__(
        self,
        config: GatewayConfig | None = None,
        cassette: Cassette | None = None,
        transport: Transport | None = None,
    ):
        self.config = config or GatewayConfig()
        self.cassette = cassette
        self.transport = transport

    def render(self, template_id: str, bindings: dict[str, str]) -> ChatRequest:
        template = prompts.get_template(template_id)
        suffix = self.config.refine_format_suffix if template_id in self._SUFFIXED else ""
        system, human = template.render(bindings, system_suffix=suffix)
        return ChatRequest(
            template_id=template_id,
            system=system,
            human=human,
            temperature=self.config.temperature,
            model_id=self.config.model_id,
            max_tokens=self.config.max_tokens,
        )

    def complete_template(self, template_id: str, bindings: dict[str, str]) -> str:
        request = self.render(template_id, bindings)
        return complete(request, self.cassette, self.transport)
