"""Shared test doubles."""

from __future__ import annotations

import io
from contextlib import redirect_stdout

from icrag.gateway import Cassette, Gateway, GatewayConfig, ScriptedTransport
from icrag.sandbox import ExceptionInfo, ExecResult


class InProcessSandbox:
    """Runs trusted fixture code in-process with the ExecResult shape.

    Only for unit tests over code written inside this repository; the
    real executor is the external shim exercised by the acceptance and
    protocol suites.
    """

    def __init__(self):
        self.requests = []

    def exec(self, request, sim_resolver=None):
        self.requests.append(request)
        buf = io.StringIO()
        try:
            with redirect_stdout(buf):
                exec(request.code, {"__name__": "__main__"})
        except BaseException as exc:
            return ExecResult(
                status="exception",
                stdout=buf.getvalue(),
                exception=ExceptionInfo(type=type(exc).__name__, message=str(exc)),
                max_call_depth=1,
            )
        lines = [line for line in buf.getvalue().splitlines() if line.strip()]
        return ExecResult(
            status="ok",
            stdout=buf.getvalue(),
            answer_line=lines[-1] if lines else None,
            max_call_depth=1,
        )

    def close(self):
        pass


def scripted_gateway(handler):
    return Gateway(
        GatewayConfig(),
        cassette=Cassette(mode="replay_fallthrough"),
        transport=ScriptedTransport(handler),
    )
