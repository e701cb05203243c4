"""Scoring, correctness-under-re-input, and proof judging.

Accuracy is the exact rational fraction of tasks whose normalized
prediction equals the normalized gold answer; failed or absent
predictions are misses, never crashes. The correctness protocol samples
final programs, rewrites their top-level literal inputs to new valid
values, reruns them in the sandbox, and checks each output against an
independent oracle supplied by the caller.
"""

from __future__ import annotations

import ast
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .sandbox import ExecRequest
from .tasks import Dataset, RunRecord


class EvaluationError(ValueError):
    pass


@dataclass
class ItemScore:
    task_id: str
    prediction: str
    gold: str
    correct: bool
    failure_class: str | None = None


@dataclass
class EvalReport:
    method: str
    dataset: str
    n_items: int
    n_correct: int
    per_item: list[ItemScore] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_items if self.n_items else 0.0

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "n_items": self.n_items,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "per_item": [vars(i) for i in self.per_item],
        }

    def to_csv(self) -> str:
        header = "method,dataset,n_items,n_correct,accuracy"
        row = f"{self.method},{self.dataset},{self.n_items},{self.n_correct},{self.accuracy:.6f}"
        return header + "\n" + row + "\n"


def score_run(records: list[RunRecord], dataset: Dataset) -> EvalReport:
    """Exact accuracy over all records; unknown task ids are an error."""
    ids = set(dataset.ids())
    per_item: list[ItemScore] = []
    method = records[0].method if records else "unknown"
    for record in sorted(records, key=lambda r: r.task_id):
        if record.task_id not in ids:
            raise EvaluationError(f"record references unknown task {record.task_id!r}")
        task = dataset.by_id(record.task_id)
        prediction = record.prediction
        if prediction.failed:
            correct = False
            failure = "prediction_failed"
        else:
            correct = prediction.matches(task.gold)
            failure = None if correct else "mismatch"
        per_item.append(
            ItemScore(
                task_id=record.task_id,
                prediction=prediction.canonical,
                gold=task.gold.canonical,
                correct=correct,
                failure_class=failure,
            )
        )
    return EvalReport(
        method=method,
        dataset=dataset.name,
        n_items=len(per_item),
        n_correct=sum(1 for i in per_item if i.correct),
        per_item=per_item,
    )


# ---------------------------------------------------------------------------
# correctness under re-input


class InputMutator(Protocol):
    """Identifies a program's mutable inputs and proposes new valid ones."""

    def identify(self, code: str) -> dict[str, object] | None:
        ...

    def variants(self, bindings: dict[str, object], rng: random.Random, count: int) -> list[dict]:
        ...


# maps the mutated input bindings to the expected printed answer
AnswerOracle = Callable[[dict[str, object]], str]


@dataclass
class ProgramCheck:
    task_id: str
    variants_tested: int
    variants_correct: int
    unmutable: bool = False


@dataclass
class CorrectnessReport:
    dataset: str
    regime: str  # "generalizable" | "nongeneralizable"
    sampled: int
    per_program: list[ProgramCheck] = field(default_factory=list)
    correctness: float = 0.0
    unmutable_count: int = 0

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "regime": self.regime,
            "sampled": self.sampled,
            "correctness": self.correctness,
            "unmutable_count": self.unmutable_count,
            "per_program": [vars(p) for p in self.per_program],
        }

    def to_csv(self, accuracy: float | None = None) -> str:
        header = "dataset,regime,sampled,accuracy,correctness"
        acc = "" if accuracy is None else f"{accuracy:.6f}"
        row = f"{self.dataset},{self.regime},{self.sampled},{acc},{self.correctness:.6f}"
        return header + "\n" + row + "\n"


class LiteralAssignMutator:
    """Treats top-level literal assignments before first use as the inputs.

    Generated task programs are scripts, not functions, so the narrowest
    workable notion of "input arguments" is the leading constant bindings.
    """

    def __init__(self, int_range: tuple[int, int] = (0, 100)):
        self.int_range = int_range

    def identify(self, code: str) -> dict[str, object] | None:
        try:
            tree = ast.parse(code)
        except SyntaxError:
            return None
        bindings: dict[str, object] = {}
        for node in tree.body:
            if (
                isinstance(node, ast.Assign)
                and len(node.targets) == 1
                and isinstance(node.targets[0], ast.Name)
                and isinstance(node.value, ast.Constant)
                and isinstance(node.value.value, (int, float, str))
                and not isinstance(node.value.value, bool)
            ):
                name = node.targets[0].id
                if name not in bindings:
                    bindings[name] = node.value.value
            else:
                break  # inputs are the leading literal block only
        return bindings or None

    def variants(self, bindings, rng: random.Random, count: int) -> list[dict]:
        out = []
        for _ in range(count):
            variant = {}
            for name, value in bindings.items():
                if isinstance(value, bool):
                    variant[name] = rng.choice([True, False])
                elif isinstance(value, int):
                    variant[name] = rng.randint(*self.int_range)
                elif isinstance(value, float):
                    variant[name] = round(rng.uniform(*self.int_range), 2)
                else:
                    variant[name] = value
            out.append(variant)
        return out


def rewrite_inputs(code: str, bindings: dict[str, object]) -> str:
    """Replace the leading literal assignments with new constant values."""
    tree = ast.parse(code)
    for node in tree.body:
        if (
            isinstance(node, ast.Assign)
            and len(node.targets) == 1
            and isinstance(node.targets[0], ast.Name)
            and isinstance(node.value, ast.Constant)
            and node.targets[0].id in bindings
        ):
            node.value = ast.Constant(value=bindings[node.targets[0].id])
        elif not isinstance(node, ast.Assign):
            break
    return ast.unparse(ast.fix_missing_locations(tree))


def _answers_match(printed: str | None, expected: str) -> bool:
    if printed is None:
        return False
    return printed.strip() == expected.strip()


def correctness_eval(
    programs: dict[str, str],
    regime: str,
    sandbox,
    mutator: InputMutator | None = None,
    oracle: AnswerOracle | None = None,
    originals_correct: dict[str, bool] | None = None,
    variants_per_program: int = 5,
    seed: int = 0,
    sample: int = 50,
    dataset: str = "",
    timeout_ms: int = 10_000,
) -> CorrectnessReport:
    """Re-input correctness over a sample of final programs.

    Generalizable regime: mutate inputs, rerun, verify against the
    oracle. Nongeneralizable regime: no valid alternative inputs exist,
    so correctness is the execution accuracy on the original instances
    (``originals_correct``).
    """
    if regime not in ("generalizable", "nongeneralizable"):
        raise EvaluationError(f"unknown regime {regime!r}")
    rng = random.Random(seed)
    task_ids = sorted(programs)
    if len(task_ids) > sample:
        task_ids = sorted(rng.sample(task_ids, sample))

    report = CorrectnessReport(dataset=dataset, regime=regime, sampled=len(task_ids))

    if regime == "nongeneralizable":
        if originals_correct is None:
            raise EvaluationError("nongeneralizable regime needs originals_correct")
        correct = 0
        for task_id in task_ids:
            ok = bool(originals_correct.get(task_id))
            correct += ok
            report.per_program.append(
                ProgramCheck(task_id=task_id, variants_tested=0, variants_correct=int(ok))
            )
        report.correctness = correct / len(task_ids) if task_ids else 0.0
        return report

    if mutator is None or oracle is None:
        raise EvaluationError("generalizable regime needs a mutator and an oracle")

    total_tested = 0
    total_correct = 0
    for task_id in task_ids:
        code = programs[task_id]
        bindings = mutator.identify(code)
        if not bindings:
            report.per_program.append(
                ProgramCheck(task_id=task_id, variants_tested=0, variants_correct=0, unmutable=True)
            )
            report.unmutable_count += 1
            continue
        tested = 0
        correct = 0
        for variant in mutator.variants(bindings, rng, variants_per_program):
            mutated = rewrite_inputs(code, variant)
            result = sandbox.exec(ExecRequest(code=mutated, timeout_ms=timeout_ms))
            expected = oracle(variant)
            tested += 1
            if result.ok and _answers_match(result.answer_line, expected):
                correct += 1
        report.per_program.append(
            ProgramCheck(task_id=task_id, variants_tested=tested, variants_correct=correct)
        )
        total_tested += tested
        total_correct += correct
    report.correctness = total_correct / total_tested if total_tested else 0.0
    return report


# ---------------------------------------------------------------------------
# proof judging


@dataclass(frozen=True)
class JudgeVerdict:
    task_id: str
    verdict: str  # "correct" | "incorrect"
    judge_response_digest: str
    unparsable: bool = False


_VERDICT_RE = re.compile(r"^\s*verdict\s*:\s*(correct|incorrect)\s*$", re.IGNORECASE | re.MULTILINE)


def judge_proof(
    task_id: str,
    candidate: str,
    reference: str,
    gateway,
) -> JudgeVerdict:
    """Grade a candidate proof against the reference via the judge prompt.

    Empty candidates are incorrect without a call; an unparsable judge
    reply is scored incorrect and flagged.
    """
    import hashlib

    if not candidate or not candidate.strip():
        return JudgeVerdict(task_id=task_id, verdict="incorrect", judge_response_digest="")
    response = gateway.complete_template(
        "judge_proof", {"candidate": candidate, "reference": reference}
    )
    digest = hashlib.sha256(response.encode("utf-8")).hexdigest()
    match = _VERDICT_RE.search(response)
    if match is None:
        return JudgeVerdict(
            task_id=task_id, verdict="incorrect", judge_response_digest=digest, unparsable=True
        )
    return JudgeVerdict(
        task_id=task_id, verdict=match.group(1).lower(), judge_response_digest=digest
    )


def score_with_judge(
    records: list[RunRecord],
    dataset: Dataset,
    gateway,
) -> EvalReport:
    """EvalReport for proof-kind datasets using the judge instead of equality."""
    per_item: list[ItemScore] = []
    method = records[0].method if records else "unknown"
    for record in sorted(records, key=lambda r: r.task_id):
        task = dataset.by_id(record.task_id)
        verdict = judge_proof(task.id, record.prediction.raw, task.gold.raw, gateway)
        correct = verdict.verdict == "correct"
        per_item.append(
            ItemScore(
                task_id=task.id,
                prediction=record.prediction.canonical,
                gold=task.gold.canonical,
                correct=correct,
                failure_class=None if correct else "judge_incorrect",
            )
        )
    return EvalReport(
        method=method,
        dataset=dataset.name,
        n_items=len(per_item),
        n_correct=sum(1 for i in per_item if i.correct),
        per_item=per_item,
    )
