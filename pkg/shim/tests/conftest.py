import io
import json

import pytest

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance_results[name] = report.outcome.upper()
    elif report.when == "setup" and report.outcome in ("skipped", "failed"):
        _acceptance_results[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "executor acceptance criteria")
    for name, outcome in sorted(_acceptance_results.items()):
        terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome}")


class ShimPipe:
    """Drive the serve loop in-process over scripted stdio."""

    @staticmethod
    def exchange(requests: list[dict | str]) -> list[dict]:
        from icrag_shim.server import serve

        lines = []
        for req in requests:
            if isinstance(req, str):
                lines.append(req)
            else:
                lines.append(json.dumps(req))
        stdin = io.StringIO("\n".join(lines) + "\n")
        stdout = io.StringIO()
        serve(stdin=stdin, stdout=stdout)
        return [json.loads(line) for line in stdout.getvalue().splitlines() if line.strip()]


@pytest.fixture
def pipe():
    return ShimPipe()
