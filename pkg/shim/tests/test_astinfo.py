import pytest

from icrag_shim.astinfo import analyze

from .test_exec import REGRESSION_CORPUS


class TestAnalyze:
    def test_straight_line(self):
        report = analyze("x = 1")
        assert report["node_census"]["Assign"] == 1
        assert report["node_census"]["Num"] == 1
        assert sum(report["decision_counts"].values()) == 0
        assert report["unit_count"] == 1

    def test_bool_branch_decisions(self):
        report = analyze("if a and b:\n    pass\nelse:\n    pass\n")
        counts = report["decision_counts"]
        assert counts["if"] == 1
        assert counts["bool_operands_minus_one"] == 1

    def test_parse_error_flag(self):
        report = analyze("def f(:\n")
        assert report["parse_error"]
        assert report["node_census"] == {}

    def test_presence_iff_census(self):
        report = analyze(REGRESSION_CORPUS[3])
        for name, count in report["node_census"].items():
            assert count > 0, name


class TestMatchesOrchestratorAnalyzer:
    """The orchestrator ships its own census; both ends of the protocol
    must agree node for node."""

    reference = pytest.importorskip("icrag.analytics")

    @pytest.mark.parametrize("code", REGRESSION_CORPUS, ids=range(len(REGRESSION_CORPUS)))
    def test_census_identical(self, code):
        ours = analyze(code)
        theirs = self.reference.analyze_program(code)
        assert ours["node_census"] == theirs.node_census
        assert ours["decision_counts"] == theirs.decision_counts
        assert ours["unit_count"] == theirs.unit_count
