"""Corpus-level program analysis.

Static side: an AST census over a fixed, versioned 130-name node-type
taxonomy, decision-point counts, cyclomatic complexity (M = d + 1, with
the loop policy explicit because conventions differ on whether loops are
decisions), per-corpus presence signatures and their coverage. Dynamic
inputs (call depth, execution status) arrive as ExecResults from the
execution shim and are aggregated here, never produced here.
"""

from __future__ import annotations

import ast
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .sandbox import AstReport, ExecResult

TAXONOMY_VERSION = "v1"
TAXONOMY_DIM = 130

LOOP_POLICIES = ("count_loops", "ignore_loops")

# Decision classes summed into d; loops are controlled by the policy.
_BRANCH_KEYS = (
    "if",
    "elif",
    "ternary",
    "bool_operands_minus_one",
    "comprehension_if",
    "except_handler",
    "assert",
    "match_case",
)
_LOOP_KEYS = ("for", "while")

DECISION_KEYS = _BRANCH_KEYS + _LOOP_KEYS


class AnalyticsError(ValueError):
    pass


def load_taxonomy(version: str = TAXONOMY_VERSION) -> list[str]:
    """The ordered node-type names; length is pinned to 130."""
    text = resources.files("icrag.data").joinpath(f"ast_taxonomy_{version}.txt").read_text()
    names = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if len(names) != TAXONOMY_DIM:
        raise AnalyticsError(
            f"taxonomy {version} has {len(names)} names, expected {TAXONOMY_DIM}"
        )
    return names


def _census_constant(node: ast.Constant, census: Counter) -> None:
    # Legacy constant-class names are kept as derived counts so signatures
    # stay comparable across interpreter generations.
    value = node.value
    if value is None or value is True or value is False:
        census["NameConstant"] += 1
    elif isinstance(value, str):
        census["Str"] += 1
    elif isinstance(value, bytes):
        census["Bytes"] += 1
    elif isinstance(value, (int, float, complex)):
        census["Num"] += 1
    elif value is ...:
        census["Ellipsis"] += 1


def _census_subscript(node: ast.Subscript, census: Counter) -> None:
    sl = node.slice
    if isinstance(sl, ast.Slice):
        return  # Slice is counted by the walk itself
    if isinstance(sl, ast.Tuple) and any(isinstance(e, ast.Slice) for e in sl.elts):
        census["ExtSlice"] += 1
    else:
        census["Index"] += 1


def analyze_program(code: str) -> AstReport:
    """Static census and decision counts for one program source."""
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError, RecursionError, MemoryError):
        return AstReport(parse_error=True)

    census: Counter = Counter()
    decisions = {key: 0 for key in DECISION_KEYS}

    elif_nodes: set[int] = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.If) and len(node.orelse) == 1:
            child = node.orelse[0]
            if isinstance(child, ast.If) and child.col_offset == node.col_offset:
                elif_nodes.add(id(child))

    for node in ast.walk(tree):
        census[type(node).__name__] += 1
        if isinstance(node, ast.Constant):
            _census_constant(node, census)
        elif isinstance(node, ast.Subscript):
            _census_subscript(node, census)
        elif isinstance(node, ast.If):
            decisions["elif" if id(node) in elif_nodes else "if"] += 1
        elif isinstance(node, ast.While):
            decisions["while"] += 1
        elif isinstance(node, (ast.For, ast.AsyncFor)):
            decisions["for"] += 1
        elif isinstance(node, ast.BoolOp):
            decisions["bool_operands_minus_one"] += len(node.values) - 1
        elif isinstance(node, ast.IfExp):
            decisions["ternary"] += 1
        elif isinstance(node, ast.comprehension):
            decisions["comprehension_if"] += len(node.ifs)
        elif isinstance(node, ast.ExceptHandler):
            decisions["except_handler"] += 1
        elif isinstance(node, ast.Assert):
            decisions["assert"] += 1
        elif isinstance(node, ast.match_case):
            decisions["match_case"] += 1

    unit_count = 1 + census.get("FunctionDef", 0) + census.get("AsyncFunctionDef", 0)
    return AstReport(
        node_census=dict(census),
        decision_counts=decisions,
        unit_count=unit_count,
        parse_error=False,
    )


@dataclass
class CodeMetrics:
    """Per-program complexity record; one source file is one unit (P=1)."""

    task_id: str
    cyclomatic_M: int | None = None
    decision_points_d: int | None = None
    max_call_depth: int | None = None
    executable: bool | None = None
    exception_class: str | None = None


def decision_points(report: AstReport, loop_policy: str = "count_loops") -> int:
    if loop_policy not in LOOP_POLICIES:
        raise AnalyticsError(f"unknown loop policy {loop_policy!r}")
    if report.parse_error:
        raise AnalyticsError("cannot count decisions on a parse_error report")
    counts = report.decision_counts
    d = sum(counts.get(key, 0) for key in _BRANCH_KEYS)
    if loop_policy == "count_loops":
        d += sum(counts.get(key, 0) for key in _LOOP_KEYS)
    return d


def cyclomatic(report: AstReport, loop_policy: str = "count_loops") -> tuple[int, int]:
    """(d, M) for the whole source as one unit; M = d + 1."""
    d = decision_points(report, loop_policy)
    return d, d + 1


def metrics_for(
    task_id: str,
    report: AstReport,
    exec_result: ExecResult | None = None,
    loop_policy: str = "count_loops",
) -> CodeMetrics:
    metrics = CodeMetrics(task_id=task_id)
    if not report.parse_error:
        d, m = cyclomatic(report, loop_policy)
        metrics.decision_points_d = d
        metrics.cyclomatic_M = m
    if exec_result is not None:
        metrics.executable = exec_result.ok
        if exec_result.exception is not None:
            metrics.exception_class = exec_result.exception.type
        if exec_result.max_call_depth >= 1:
            metrics.max_call_depth = exec_result.max_call_depth
    return metrics


@dataclass(frozen=True)
class CfgSummary:
    """Control-flow graph size summary for the graph form M = E - V + 2P."""

    edges_E: int
    nodes_V: int
    components_P: int = 1

    def cyclomatic_graph(self) -> int:
        return self.edges_E - self.nodes_V + 2 * self.components_P


@dataclass
class SignatureVector:
    """Per-corpus presence percentages over the fixed taxonomy order."""

    dataset_id: str
    presence_pct: list[float]
    taxonomy_version: str = TAXONOMY_VERSION

    def __post_init__(self):
        if len(self.presence_pct) != TAXONOMY_DIM:
            raise AnalyticsError(
                f"signature for {self.dataset_id!r} has {len(self.presence_pct)} "
                f"components, expected {TAXONOMY_DIM}"
            )

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "taxonomy_version": self.taxonomy_version,
            "presence_pct": self.presence_pct,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "SignatureVector":
        return cls(
            dataset_id=rec["dataset_id"],
            presence_pct=list(rec["presence_pct"]),
            taxonomy_version=rec.get("taxonomy_version", TAXONOMY_VERSION),
        )


def signature(
    reports: list[AstReport],
    dataset_id: str,
    taxonomy: list[str] | None = None,
) -> SignatureVector:
    """Presence percentage per node type over the parseable programs."""
    taxonomy = taxonomy or load_taxonomy()
    usable = [r for r in reports if not r.parse_error]
    if not usable:
        raise AnalyticsError(f"no parseable programs in corpus {dataset_id!r}")
    counts = [sum(1 for r in usable if r.presence(name)) for name in taxonomy]
    pct = [100.0 * c / len(usable) for c in counts]
    return SignatureVector(dataset_id=dataset_id, presence_pct=pct)


def coverage(sig: SignatureVector) -> int:
    """Percentage of taxonomy node types with nonzero presence, as an integer."""
    nonzero = sum(1 for v in sig.presence_pct if v > 0.0)
    return round(100.0 * nonzero / TAXONOMY_DIM)


def _population_std(values: list[float], mean: float) -> float:
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


@dataclass
class CorpusReport:
    dataset_id: str
    n_programs: int = 0
    n_parse_ok: int = 0
    n_executed: int = 0
    n_depth_samples: int = 0
    depth_avg: float | None = None
    depth_std: float | None = None
    depth_max: int | None = None
    depth_max_task_id: str | None = None
    cc_avg: float | None = None
    cc_std: float | None = None
    cc_max: int | None = None
    cc_max_task_id: str | None = None
    executability_rate: float | None = None
    exception_rates: dict[str, float] = field(default_factory=dict)
    coverage_pct: int | None = None
    loop_policy: str = "count_loops"
    std_kind: str = "population"

    def to_json(self) -> dict:
        return dict(self.__dict__)


def aggregate_corpus(
    metrics: list[CodeMetrics],
    dataset_id: str,
    coverage_pct: int | None = None,
    loop_policy: str = "count_loops",
) -> CorpusReport:
    """Exact means, population standard deviations, and attributed maxima."""
    if not metrics:
        raise AnalyticsError("empty corpus")
    report = CorpusReport(
        dataset_id=dataset_id,
        n_programs=len(metrics),
        coverage_pct=coverage_pct,
        loop_policy=loop_policy,
    )

    with_cc = [m for m in metrics if m.cyclomatic_M is not None]
    report.n_parse_ok = len(with_cc)
    if with_cc:
        values = [float(m.cyclomatic_M) for m in with_cc]
        report.cc_avg = sum(values) / len(values)
        report.cc_std = _population_std(values, report.cc_avg)
        best = max(with_cc, key=lambda m: (m.cyclomatic_M, m.task_id))
        report.cc_max = best.cyclomatic_M
        report.cc_max_task_id = best.task_id

    with_depth = [m for m in metrics if m.max_call_depth is not None]
    report.n_depth_samples = len(with_depth)
    if with_depth:
        values = [float(m.max_call_depth) for m in with_depth]
        report.depth_avg = sum(values) / len(values)
        report.depth_std = _population_std(values, report.depth_avg)
        best = max(with_depth, key=lambda m: (m.max_call_depth, m.task_id))
        report.depth_max = best.max_call_depth
        report.depth_max_task_id = best.task_id

    executed = [m for m in metrics if m.executable is not None]
    report.n_executed = len(executed)
    if executed:
        ok = sum(1 for m in executed if m.executable)
        report.executability_rate = ok / len(executed)
        classes = Counter(m.exception_class for m in executed if m.exception_class)
        report.exception_rates = {
            cls: count / len(executed) for cls, count in sorted(classes.items())
        }
    return report


def corpus_report_csv(report: CorpusReport) -> str:
    """One CSV row matching the complexity-summary table schema."""
    header = "dataset,avg_depth,std_depth,max_depth,cc_avg,cc_std,cc_max"
    row = ",".join(
        [
            report.dataset_id,
            _fmt(report.depth_avg),
            _fmt(report.depth_std),
            _fmt(report.depth_max),
            _fmt(report.cc_avg),
            _fmt(report.cc_std),
            _fmt(report.cc_max),
        ]
    )
    return header + "\n" + row + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


# exception classes with dedicated columns in the summary table
_EXCEPTION_COLUMNS = ("NameError", "SyntaxError", "invalid-syntax", "IndentationError")


def exception_report_csv(report: CorpusReport) -> str:
    """One CSV row per the exception-rate table schema.

    ``exceptions`` is the total non-ok rate; the named columns are the
    dedicated classes and everything else folds into ``other``.
    """
    header = "dataset,exceptions," + ",".join(_EXCEPTION_COLUMNS) + ",other"
    total = 0.0 if report.executability_rate is None else 1.0 - report.executability_rate
    named = {cls: report.exception_rates.get(cls, 0.0) for cls in _EXCEPTION_COLUMNS}
    other = sum(
        rate for cls, rate in report.exception_rates.items() if cls not in _EXCEPTION_COLUMNS
    )
    row = ",".join(
        [report.dataset_id, f"{total * 100:.2f}%"]
        + [f"{named[cls] * 100:.2f}%" for cls in _EXCEPTION_COLUMNS]
        + [f"{other * 100:.2f}%"]
    )
    return header + "\n" + row + "\n"


def coverage_report_csv(reports: list[tuple[str, int]]) -> str:
    """Rows of (dataset, coverage %) for the node-coverage table."""
    lines = ["dataset,coverage_pct"]
    lines += [f"{dataset_id},{pct}" for dataset_id, pct in reports]
    return "\n".join(lines) + "\n"


def save_signature(sig: SignatureVector, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sig.to_json(), fh, sort_keys=True)
        fh.write("\n")


def load_signature(path) -> SignatureVector:
    with open(path, encoding="utf-8") as fh:
        return SignatureVector.from_json(json.load(fh))
