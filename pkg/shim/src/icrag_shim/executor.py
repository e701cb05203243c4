"""Execute untrusted program text, whole or statement by statement.

Guarantees: every request produces exactly one terminal result no matter
what the source text does; a wall-clock timer bounds each request; call
depth is measured by tracing relative to the program's entry frame
(entry = 1); imports are restricted to the standard library minus
network/process modules. This is subprocess-level containment, not
container-grade isolation.
"""

from __future__ import annotations

import ast
import builtins
import io
import signal
import sys
import time
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass
from typing import Callable

DEFAULT_TIMEOUT_MS = 10_000
OUTPUT_CAP_BYTES = 1_000_000
ENV_EXCERPT_NAMES = 20
ENV_EXCERPT_CHARS = 200

# network and process-control modules are never importable by programs
DENY_MODULES = frozenset(
    {
        "socket", "ssl", "http", "urllib", "xmlrpc", "ftplib", "poplib",
        "imaplib", "smtplib", "telnetlib", "socketserver", "webbrowser",
        "subprocess", "multiprocessing", "os", "signal", "threading",
        "asyncio", "concurrent", "ctypes", "pty", "tty", "fcntl",
        "termios", "resource", "importlib", "runpy", "site", "sysconfig",
    }
)


class WallTimeout(BaseException):
    """Raised by the interval timer; BaseException so user except clauses
    for Exception cannot swallow it."""


class SandboxImportError(ImportError):
    pass


@dataclass
class SimOutcome:
    value: object = None
    ok: bool = False
    error: str = ""


# asks the orchestrator to simulate a statement; returns the raw literal text
SimChannel = Callable[[dict], str]


class _CappedWriter(io.StringIO):
    def __init__(self, cap: int = OUTPUT_CAP_BYTES):
        super().__init__()
        self._cap = cap
        self.truncated = False

    def write(self, s: str) -> int:
        room = self._cap - self.tell()
        if room <= 0:
            self.truncated = True
            return len(s)
        if len(s) > room:
            super().write(s[:room])
            self.truncated = True
            return len(s)
        return super().write(s)


def classify_exception(exc: BaseException) -> str:
    """Map an exception to the reporting taxonomy."""
    if isinstance(exc, WallTimeout):
        return "Timeout"
    if isinstance(exc, IndentationError):  # TabError included
        return "IndentationError"
    if isinstance(exc, SyntaxError):
        if "invalid syntax" in (exc.msg or ""):
            return "invalid-syntax"
        return "SyntaxError"
    if isinstance(exc, NameError):
        return "NameError"
    return f"Other({type(exc).__name__})"


def _check_imports(nodes) -> None:
    for node in nodes:
        for sub in ast.walk(node):
            roots = []
            if isinstance(sub, ast.Import):
                roots = [alias.name.split(".")[0] for alias in sub.names]
            elif isinstance(sub, ast.ImportFrom):
                if sub.level:  # relative import has no package here
                    raise SandboxImportError("relative imports are not allowed in the sandbox")
                roots = [(sub.module or "").split(".")[0]]
            for root in roots:
                if root in DENY_MODULES or root not in sys.stdlib_module_names:
                    raise SandboxImportError(
                        f"import of {root!r} is not allowed in the sandbox"
                    )


def _missing_call_name(stmt: ast.stmt, exc: NameError) -> str | None:
    """The undefined name, if the statement calls it (the fallback trigger)."""
    name = getattr(exc, "name", None)
    if not name:
        text = str(exc)
        if "name '" in text:
            name = text.split("name '", 1)[1].split("'", 1)[0]
    if not name:
        return None
    for node in ast.walk(stmt):
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id == name
        ):
            return name
    return None


def _env_excerpt(namespace: dict) -> dict[str, str]:
    excerpt = {}
    for key in sorted(namespace):
        if key.startswith("__"):
            continue
        try:
            rendered = repr(namespace[key])
        except Exception:
            rendered = "<unreprable>"
        excerpt[key] = rendered[:ENV_EXCERPT_CHARS]
        if len(excerpt) >= ENV_EXCERPT_NAMES:
            break
    return excerpt


def _bind_sim_value(stmt: ast.stmt, value, namespace: dict) -> None:
    if (
        isinstance(stmt, ast.Assign)
        and len(stmt.targets) == 1
        and isinstance(stmt.targets[0], ast.Name)
    ):
        namespace[stmt.targets[0].id] = value
    elif isinstance(stmt, ast.AnnAssign) and isinstance(stmt.target, ast.Name):
        namespace[stmt.target.id] = value
    # expression statements and complex targets: value is discarded


def _stmt_index_for_line(statements, lineno: int) -> int:
    for i, stmt in enumerate(statements):
        end = getattr(stmt, "end_lineno", stmt.lineno)
        if stmt.lineno <= lineno <= end:
            return i
    return 0


class _DepthTracer:
    """Max call-stack depth of program frames, entry (module) frame = 1.

    Only frames compiled from the program source count; shim
    instrumentation and interpreter-library frames never inflate the
    measurement.
    """

    FILENAME = "<program>"

    def __init__(self):
        self.max_depth = 0

    def __call__(self, frame, event, arg):
        if event == "call" and frame.f_code.co_filename == self.FILENAME:
            depth = 0
            f = frame
            while f is not None:
                if f.f_code.co_filename == self.FILENAME:
                    depth += 1
                f = f.f_back
            if depth > self.max_depth:
                self.max_depth = depth
        return None


class _Timer:
    """Pausable per-request wall timer built on the real-time itimer."""

    def __init__(self, timeout_ms: int):
        self._remaining = timeout_ms / 1000.0
        self._old_handler = None

    def __enter__(self):
        def on_alarm(signum, frame):
            raise WallTimeout()

        self._old_handler = signal.signal(signal.SIGALRM, on_alarm)
        signal.setitimer(signal.ITIMER_REAL, self._remaining)
        return self

    def __exit__(self, *exc):
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        if self._old_handler is not None:
            signal.signal(signal.SIGALRM, self._old_handler)

    def pause(self):
        self._remaining, _ = signal.setitimer(signal.ITIMER_REAL, 0.0)

    def resume(self):
        if self._remaining <= 0:
            raise WallTimeout()
        signal.setitimer(signal.ITIMER_REAL, self._remaining)


def run_exec(
    code,
    mode: str = "whole",
    lmulator: bool = False,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    answer_rule: str = "last_stdout_line",
    emit_event: Callable[[dict], None] | None = None,
    sim_channel: SimChannel | None = None,
) -> dict:
    """One terminal result for one exec request; never raises."""
    started = time.monotonic()
    try:
        return _run_exec_inner(
            code, mode, lmulator, timeout_ms, answer_rule, emit_event, sim_channel, started
        )
    except BaseException as exc:  # the no-crash guarantee
        return _result(
            status="exception",
            exception={"type": f"Other({type(exc).__name__})", "message": str(exc)[:500],
                       "stmt_index": 0},
            started=started,
        )


def _result(
    status,
    stdout="",
    answer_line=None,
    exception=None,
    max_call_depth=0,
    statements_total=0,
    statements_completed=0,
    stdout_truncated=False,
    started=None,
):
    wall_ms = int((time.monotonic() - started) * 1000) if started is not None else 0
    return {
        "status": status,
        "stdout": stdout,
        "answer_line": answer_line,
        "exception": exception,
        "max_call_depth": max_call_depth,
        "statements_total": statements_total,
        "statements_completed": statements_completed,
        "stdout_truncated": stdout_truncated,
        "wall_ms": wall_ms,
    }


def _answer(namespace, stdout_text: str, answer_rule: str):
    if answer_rule == "result_variable":
        if "result" in namespace:
            return str(namespace["result"])
        return None
    lines = [line for line in stdout_text.splitlines() if line.strip()]
    return lines[-1] if lines else None


def _run_exec_inner(code, mode, lmulator, timeout_ms, answer_rule, emit_event, sim_channel, started):
    if not isinstance(code, str):
        code = str(code)
    if mode not in ("whole", "stepwise"):
        mode = "whole"
    if lmulator and mode != "stepwise":
        lmulator = False
    emit_event = emit_event or (lambda payload: None)

    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError, RecursionError, MemoryError) as exc:
        kind = classify_exception(exc) if isinstance(exc, SyntaxError) else "invalid-syntax"
        message = getattr(exc, "msg", None) or str(exc)
        return _result(
            status="parse_error",
            exception={"type": kind, "message": str(message)[:500], "stmt_index": 0},
            started=started,
        )

    statements = tree.body
    total = len(statements)
    namespace = {"__name__": "__main__", "__builtins__": builtins}
    out = _CappedWriter()
    err = _CappedWriter()
    tracer = _DepthTracer()
    completed = 0
    first_recorded = None  # carried SimulationError in lmulator mode
    quiet_stdin = io.StringIO("")

    def run_unit(unit_ast):
        compiled = compile(ast.Module(body=unit_ast, type_ignores=[]), "<program>", "exec")
        old_stdin = sys.stdin
        sys.stdin = quiet_stdin
        sys.settrace(tracer)
        try:
            with redirect_stdout(out), redirect_stderr(err):
                exec(compiled, namespace)
        finally:
            sys.settrace(None)
            sys.stdin = old_stdin

    with _Timer(timeout_ms) as timer:
        try:
            if mode == "whole":
                _check_imports(statements)
                try:
                    run_unit(statements)
                    completed = total
                except WallTimeout:
                    return _result(
                        status="timeout",
                        stdout=out.getvalue(),
                        exception={"type": "Timeout", "message": "wall clock exceeded",
                                   "stmt_index": 0},
                        max_call_depth=max(tracer.max_depth, 1),
                        statements_total=total,
                        stdout_truncated=out.truncated,
                        started=started,
                    )
                except BaseException as exc:
                    lineno = exc.lineno if isinstance(exc, SyntaxError) else _top_lineno(exc)
                    index = _stmt_index_for_line(statements, lineno or 0)
                    return _result(
                        status="exception",
                        stdout=out.getvalue(),
                        exception={
                            "type": classify_exception(exc),
                            "message": str(exc)[:500],
                            "stmt_index": index,
                        },
                        max_call_depth=max(tracer.max_depth, 1),
                        statements_total=total,
                        statements_completed=index,
                        stdout_truncated=out.truncated,
                        started=started,
                    )
            else:
                for index, stmt in enumerate(statements):
                    try:
                        _check_imports([stmt])
                        run_unit([stmt])
                    except WallTimeout:
                        return _result(
                            status="timeout",
                            stdout=out.getvalue(),
                            exception={"type": "Timeout", "message": "wall clock exceeded",
                                       "stmt_index": index},
                            max_call_depth=max(tracer.max_depth, 1),
                            statements_total=total,
                            statements_completed=completed,
                            stdout_truncated=out.truncated,
                            started=started,
                        )
                    except BaseException as exc:
                        handled = False
                        if lmulator and isinstance(exc, NameError):
                            missing = _missing_call_name(stmt, exc)
                            if missing is not None and sim_channel is not None:
                                outcome = _simulate(
                                    stmt, index, missing, namespace, sim_channel, timer, code
                                )
                                if outcome.ok:
                                    _bind_sim_value(stmt, outcome.value, namespace)
                                    handled = True
                                else:
                                    if first_recorded is None:
                                        first_recorded = {
                                            "type": "SimulationError",
                                            "message": outcome.error[:500],
                                            "stmt_index": index,
                                        }
                                    handled = True  # continue in stepwise spirit
                        if not handled:
                            return _result(
                                status="exception",
                                stdout=out.getvalue(),
                                exception={
                                    "type": classify_exception(exc),
                                    "message": str(exc)[:500],
                                    "stmt_index": index,
                                },
                                max_call_depth=max(tracer.max_depth, 1),
                                statements_total=total,
                                statements_completed=completed,
                                stdout_truncated=out.truncated,
                                started=started,
                            )
                    completed += 1
                    emit_event({"event": "stmt_ok", "stmt_index": index})
        finally:
            sys.settrace(None)

    stdout_text = out.getvalue()
    if first_recorded is not None:
        return _result(
            status="exception",
            stdout=stdout_text,
            answer_line=_answer(namespace, stdout_text, answer_rule),
            exception=first_recorded,
            max_call_depth=max(tracer.max_depth, 1),
            statements_total=total,
            statements_completed=completed,
            stdout_truncated=out.truncated,
            started=started,
        )
    return _result(
        status="ok",
        stdout=stdout_text,
        answer_line=_answer(namespace, stdout_text, answer_rule),
        max_call_depth=max(tracer.max_depth, 1) if total else 1,
        statements_total=total,
        statements_completed=completed,
        stdout_truncated=out.truncated,
        started=started,
    )


def _simulate(stmt, index, missing, namespace, sim_channel, timer, code) -> SimOutcome:
    try:
        source = ast.get_source_segment(code, stmt) or ast.unparse(stmt)
    except Exception:
        source = "<unavailable>"
    payload = {
        "event": "need_sim",
        "stmt_index": index,
        "stmt_source": source[:2000],
        "missing_name": missing,
        "env_excerpt": _env_excerpt(namespace),
    }
    timer.pause()
    try:
        literal = sim_channel(payload)
    finally:
        timer.resume()
    try:
        value = ast.literal_eval(literal)
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError) as exc:
        return SimOutcome(ok=False, error=f"not a literal: {literal!r} ({exc})")
    return SimOutcome(value=value, ok=True)


def _top_lineno(exc: BaseException) -> int:
    """Line of the outermost program frame: the failing top-level
    statement, not wherever inside a function the error surfaced."""
    tb = exc.__traceback__
    while tb is not None:
        if tb.tb_frame.f_code.co_filename == "<program>":
            return tb.tb_lineno
        tb = tb.tb_next
    return 0
