"""Suite-wide pytest hooks: per-criterion acceptance summary lines."""

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
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_acceptance_results.items()):
        terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome}")
