"""Robustness: every fuzzed request is answered with one terminal result."""

import json
import random
import string
import subprocess
import sys

from icrag_shim.executor import run_exec

from .test_exec import REGRESSION_CORPUS


def random_bytes_text(rng, n):
    alphabet = string.printable + "é☃\x00"
    return "".join(rng.choice(alphabet) for _ in range(n))


def mutate(rng, code):
    kind = rng.randrange(4)
    if kind == 0:  # truncate mid-program
        cut = rng.randrange(1, max(2, len(code)))
        return code[:cut]
    if kind == 1:  # splice random bytes
        pos = rng.randrange(len(code))
        return code[:pos] + random_bytes_text(rng, 5) + code[pos:]
    if kind == 2:  # duplicate a random line
        lines = code.splitlines()
        lines.insert(rng.randrange(len(lines)), rng.choice(lines))
        return "\n".join(lines)
    return random_bytes_text(rng, rng.randrange(0, 120))


class TestFuzzInProcess:
    def test_thousand_requests_all_answered(self):
        rng = random.Random(1234)
        for i in range(1000):
            base = rng.choice(REGRESSION_CORPUS)
            code = mutate(rng, base)
            mode = rng.choice(["whole", "stepwise"])
            result = run_exec(code, mode=mode, timeout_ms=2000)
            assert result["status"] in ("ok", "exception", "timeout", "parse_error"), (i, code)
            assert isinstance(result["wall_ms"], int)
            if result["status"] != "ok":
                assert result["exception"] is not None

    def test_non_string_code_survives(self):
        for weird in (None, 7, ["a"], {"x": 1}):
            result = run_exec(weird)
            assert result["status"] in ("ok", "exception", "timeout", "parse_error")


class TestFuzzRealProcess:
    def test_process_survives_fuzzed_batch(self):
        rng = random.Random(99)
        requests = []
        for seq in range(1, 101):
            code = mutate(rng, rng.choice(REGRESSION_CORPUS))
            requests.append(
                json.dumps(
                    {"v": 1, "seq": seq, "op": "exec", "code": code, "timeout_ms": 2000}
                )
            )
        requests.append(json.dumps({"v": 1, "seq": 101, "op": "shutdown"}))
        proc = subprocess.Popen(
            [sys.executable, "-m", "icrag_shim"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )
        try:
            out, _ = proc.communicate("\n".join(requests) + "\n", timeout=240)
        finally:
            proc.kill()
        replies = [json.loads(line) for line in out.splitlines() if line.strip()]
        answered = {r["seq"] for r in replies if "result" in r}
        assert set(range(1, 101)) <= answered
