"""Protocol loop: newline-delimited JSON requests on stdin, replies on stdout.

Request ops: exec, analyze_ast, sim_result (only as the reply to a
need_sim event), shutdown. Every reply echoes the request seq; the
terminal message carries either ``result`` or ``ast_report``. Anything
unparsable gets an error reply with seq -1 and the loop keeps serving.
"""

from __future__ import annotations

import json
import sys

from . import PROTOCOL_VERSION
from .astinfo import analyze
from .executor import DEFAULT_TIMEOUT_MS, run_exec


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def write(payload: dict) -> None:
        stdout.write(json.dumps(payload, ensure_ascii=False) + "\n")
        stdout.flush()

    while True:
        line = stdin.readline()
        if not line:
            return
        if not line.strip():
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("message is not an object")
        except ValueError as exc:
            write({"v": PROTOCOL_VERSION, "seq": -1, "error": f"bad message: {exc}"})
            continue
        seq = message.get("seq", -1)
        op = message.get("op")
        if op == "shutdown":
            write({"v": PROTOCOL_VERSION, "seq": seq, "result": {"status": "ok", "bye": True}})
            return
        if op == "analyze_ast":
            report = analyze(str(message.get("code", "")))
            write({"v": PROTOCOL_VERSION, "seq": seq, "ast_report": report})
            continue
        if op == "exec":
            _handle_exec(message, seq, write, stdin)
            continue
        if op == "sim_result":
            # a sim reply outside a handshake has nothing to resume
            write({"v": PROTOCOL_VERSION, "seq": seq, "error": "no simulation pending"})
            continue
        write({"v": PROTOCOL_VERSION, "seq": seq, "error": f"unknown op {op!r}"})


def _handle_exec(message, seq, write, stdin) -> None:
    def emit_event(payload: dict) -> None:
        write(dict(payload, v=PROTOCOL_VERSION, seq=seq))

    def sim_channel(payload: dict) -> str:
        emit_event(payload)
        while True:
            line = stdin.readline()
            if not line:
                return "None"  # orchestrator went away; degrade quietly
            try:
                reply = json.loads(line)
            except ValueError:
                return "\x00not-json"
            if isinstance(reply, dict) and reply.get("op") == "sim_result":
                return str(reply.get("value_literal", "None"))
            # any other traffic during a handshake is a protocol misuse;
            # surface it as a malformed literal rather than deadlocking
            return "\x00unexpected-message"

    timeout_ms = message.get("timeout_ms", DEFAULT_TIMEOUT_MS)
    if not isinstance(timeout_ms, (int, float)) or timeout_ms <= 0:
        timeout_ms = DEFAULT_TIMEOUT_MS
    result = run_exec(
        code=message.get("code", ""),
        mode=message.get("mode", "whole"),
        lmulator=bool(message.get("lmulator", False)),
        timeout_ms=int(timeout_ms),
        answer_rule=message.get("answer_rule", "last_stdout_line"),
        emit_event=emit_event,
        sim_channel=sim_channel,
    )
    write({"v": PROTOCOL_VERSION, "seq": seq, "result": result})


def main() -> int:
    serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
