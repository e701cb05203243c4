"""Client side of the execution-shim protocol.

The shim is a separate process that executes untrusted generated
programs and reports results over newline-delimited JSON on its standard
streams. Every message carries ``{"v": 1, "seq": int}`` and responses
echo the request's seq; the terminal message for a request is the
execution result or the AST report. This module only speaks the
protocol; it never executes generated code in-process.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

PROTOCOL_VERSION = 1

DEFAULT_TIMEOUT_MS = 10_000

EXEC_STATUSES = ("ok", "exception", "timeout", "parse_error")


class SandboxError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecRequest:
    code: str
    mode: str = "whole"  # "whole" | "stepwise"
    lmulator: bool = False
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    answer_rule: str = "last_stdout_line"  # | "result_variable"

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.lmulator and self.mode != "stepwise":
            raise ValueError("lmulator requires stepwise mode")

    def to_json(self) -> dict:
        return {
            "op": "exec",
            "code": self.code,
            "mode": self.mode,
            "lmulator": self.lmulator,
            "timeout_ms": self.timeout_ms,
            "answer_rule": self.answer_rule,
        }


@dataclass(frozen=True)
class ExceptionInfo:
    type: str
    message: str
    stmt_index: int = 0


@dataclass(frozen=True)
class ExecResult:
    status: str
    stdout: str = ""
    answer_line: str | None = None
    exception: ExceptionInfo | None = None
    max_call_depth: int = 0
    wall_ms: int = 0
    statements_total: int = 0
    statements_completed: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def from_json(cls, rec: dict) -> "ExecResult":
        exc = rec.get("exception")
        return cls(
            status=rec["status"],
            stdout=rec.get("stdout", ""),
            answer_line=rec.get("answer_line"),
            exception=ExceptionInfo(
                type=exc["type"],
                message=exc.get("message", ""),
                stmt_index=exc.get("stmt_index", 0),
            )
            if exc
            else None,
            max_call_depth=rec.get("max_call_depth", 0),
            wall_ms=rec.get("wall_ms", 0),
            statements_total=rec.get("statements_total", 0),
            statements_completed=rec.get("statements_completed", 0),
        )


@dataclass(frozen=True)
class SimRequest:
    """Shim-side request to simulate one failing statement's result."""

    stmt_index: int
    stmt_source: str
    missing_name: str
    env_excerpt: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_json(cls, rec: dict) -> "SimRequest":
        return cls(
            stmt_index=rec["stmt_index"],
            stmt_source=rec.get("stmt_source", ""),
            missing_name=rec.get("missing_name", ""),
            env_excerpt=tuple(sorted((rec.get("env_excerpt") or {}).items())),
        )


@dataclass(frozen=True)
class AstReport:
    """Static profile of one program: node census and decision counts."""

    node_census: dict[str, int] = field(default_factory=dict)
    decision_counts: dict[str, int] = field(default_factory=dict)
    unit_count: int = 0
    parse_error: bool = False

    def presence(self, name: str) -> bool:
        return self.node_census.get(name, 0) > 0

    @classmethod
    def from_json(cls, rec: dict) -> "AstReport":
        return cls(
            node_census=dict(rec.get("node_census", {})),
            decision_counts=dict(rec.get("decision_counts", {})),
            unit_count=rec.get("unit_count", 0),
            parse_error=rec.get("parse_error", False),
        )

    def to_json(self) -> dict:
        return {
            "node_census": dict(sorted(self.node_census.items())),
            "decision_counts": dict(sorted(self.decision_counts.items())),
            "unit_count": self.unit_count,
            "parse_error": self.parse_error,
        }


# Resolves a SimRequest to a Python literal expression (as source text).
SimResolver = Callable[[SimRequest], str]


def default_shim_command() -> list[str]:
    override = os.environ.get("ICRAG_SHIM_CMD")
    if override:
        return shlex.split(override)
    return [sys.executable, "-m", "icrag_shim"]


class ShimSandbox:
    """One shim process serving one worker, strictly request-at-a-time.

    A hung shim is killed at the wall deadline and the request is
    reported as a timeout; the next request transparently respawns.
    """

    def __init__(self, command: list[str] | None = None, grace_ms: int = 5_000):
        self.command = command or default_shim_command()
        self.grace_ms = grace_ms
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._seq = 0
        self._lock = threading.Lock()

    def __enter__(self) -> "ShimSandbox":
        self._ensure_proc()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
            self._lines = queue.Queue()
            thread = threading.Thread(
                target=_pump_lines, args=(self._proc.stdout, self._lines), daemon=True
            )
            thread.start()
        return self._proc

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            if self._proc.poll() is None:
                self._write({"op": "shutdown"})
                self._proc.wait(timeout=2)
        except (OSError, subprocess.TimeoutExpired, BrokenPipeError):
            self._proc.kill()
        finally:
            self._proc = None

    def _write(self, payload: dict, seq: int | None = None) -> int:
        proc = self._ensure_proc()
        if seq is None:
            self._seq += 1
            seq = self._seq
        message = dict(payload, v=PROTOCOL_VERSION, seq=seq)
        proc.stdin.write(json.dumps(message, ensure_ascii=False) + "\n")
        proc.stdin.flush()
        return seq

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
            except OSError:
                pass
            self._proc = None

    def _next_message(self, deadline: float) -> dict | None:
        """Next protocol message before the deadline, else None."""
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            try:
                line = self._lines.get(timeout=min(remaining, 0.2))
            except queue.Empty:
                if self._proc is None or self._proc.poll() is not None:
                    return None
                continue
            if line is None:  # reader saw EOF
                return None
            try:
                return json.loads(line)
            except json.JSONDecodeError:
                continue  # stray diagnostics on stdout

    def exec(self, request: ExecRequest, sim_resolver: SimResolver | None = None) -> ExecResult:
        """Run one program; resolve any simulation handshakes via the callback."""
        with self._lock:
            try:
                seq = self._write(request.to_json())
            except (OSError, BrokenPipeError) as exc:
                raise SandboxError(f"cannot talk to shim {self.command}: {exc}") from exc
            wall_budget_ms = request.timeout_ms + self.grace_ms
            deadline = time.monotonic() + wall_budget_ms / 1000.0
            while True:
                message = self._next_message(deadline)
                if message is None:
                    self._kill()
                    return ExecResult(
                        status="timeout",
                        exception=ExceptionInfo(
                            type="Timeout", message="shim did not answer in time"
                        ),
                        wall_ms=wall_budget_ms,
                    )
                if message.get("seq") != seq:
                    continue
                if message.get("event") == "need_sim":
                    literal = "None"
                    if sim_resolver is not None:
                        literal = sim_resolver(SimRequest.from_json(message))
                    self._write({"op": "sim_result", "value_literal": literal}, seq=seq)
                    continue
                if "result" in message:
                    return ExecResult.from_json(message["result"])
                # per-statement ok events: keep reading

    def analyze_ast(self, code: str) -> AstReport:
        with self._lock:
            try:
                seq = self._write({"op": "analyze_ast", "code": code})
            except (OSError, BrokenPipeError) as exc:
                raise SandboxError(f"cannot talk to shim {self.command}: {exc}") from exc
            deadline = time.monotonic() + self.grace_ms / 1000.0
            while True:
                message = self._next_message(deadline)
                if message is None:
                    self._kill()
                    raise SandboxError("shim did not answer analyze_ast in time")
                if message.get("seq") != seq:
                    continue
                if "ast_report" in message:
                    return AstReport.from_json(message["ast_report"])


def _pump_lines(stream, sink: queue.Queue) -> None:
    try:
        for line in stream:
            sink.put(line)
    except (OSError, ValueError):
        pass
    finally:
        sink.put(None)


def shim_available(command: list[str] | None = None) -> bool:
    """True when the shim executable answers a trivial analyze request."""
    try:
        with ShimSandbox(command) as box:
            report = box.analyze_ast("x = 1")
            return report.node_census.get("Assign", 0) == 1
    except (SandboxError, OSError):
        return False
