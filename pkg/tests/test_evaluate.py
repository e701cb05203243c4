import json

import pytest

from icrag.evaluate import (
    EvaluationError,
    LiteralAssignMutator,
    correctness_eval,
    judge_proof,
    rewrite_inputs,
    score_run,
)
from icrag.tasks import AnswerValue, RunRecord, load_dataset, normalize_answer

from .helpers import InProcessSandbox, scripted_gateway
from .oracles import dyck_closing_sequence


def write_dataset(tmp_path, records):
    path = tmp_path / "d.jsonl"
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return load_dataset(path)


def record_for(task_id, raw, kind="numeric", method="icrag"):
    return RunRecord(
        task_id=task_id,
        method=method,
        prediction=normalize_answer(raw, kind),
        trace_ref=f"traces/{task_id}.trace.jsonl",
    )


class TestScoreRun:
    def _dataset(self, tmp_path):
        return write_dataset(
            tmp_path,
            [
                {"id": f"q{i}", "text": f"t{i}", "gold": str(i), "answer_kind": "numeric"}
                for i in range(4)
            ],
        )

    def test_three_of_four(self, tmp_path):
        dataset = self._dataset(tmp_path)
        records = [record_for(f"q{i}", str(i)) for i in range(3)]
        records.append(record_for("q3", "999"))
        report = score_run(records, dataset)
        assert report.accuracy == 0.75
        assert report.n_correct == 3

    def test_absent_predictions_score_zero(self, tmp_path):
        dataset = self._dataset(tmp_path)
        records = [
            RunRecord(
                task_id=f"q{i}",
                method="direct",
                prediction=AnswerValue("numeric", "", "", failed=True),
                trace_ref="",
            )
            for i in range(4)
        ]
        report = score_run(records, dataset)
        assert report.accuracy == 0.0
        assert all(i.failure_class == "prediction_failed" for i in report.per_item)

    def test_binary_case_fold_matches(self, tmp_path):
        dataset = write_dataset(
            tmp_path,
            [{"id": "q0", "text": "t", "gold": "violation", "answer_kind": "binary"}],
        )
        report = score_run([record_for("q0", "Violation", kind="binary")], dataset)
        assert report.accuracy == 1.0

    def test_unknown_task_rejected(self, tmp_path):
        dataset = self._dataset(tmp_path)
        with pytest.raises(EvaluationError, match="zz"):
            score_run([record_for("zz", "1")], dataset)

    def test_accuracy_recomputable_from_per_item(self, tmp_path):
        dataset = self._dataset(tmp_path)
        records = [record_for(f"q{i}", str(i if i % 2 else 99)) for i in range(4)]
        report = score_run(records, dataset)
        recomputed = sum(1 for i in report.per_item if i.correct) / len(report.per_item)
        assert report.accuracy == recomputed


ADD_PROGRAM = """\
a = 7
b = 5
print(a + b)
"""

DYCK_PROGRAM = '''\
prefix = "([{"
pairs = {"(": ")", "[": "]", "{": "}", "<": ">"}
stack = []
for ch in prefix:
    if ch in pairs:
        stack.append(ch)
    elif stack and ch == pairs[stack[-1]]:
        stack.pop()
closing = "".join(pairs[c] for c in reversed(stack))
print(closing)
'''


class TestMutator:
    def test_identifies_leading_literals(self):
        mutator = LiteralAssignMutator()
        assert mutator.identify(ADD_PROGRAM) == {"a": 7, "b": 5}

    def test_stops_at_first_non_literal(self):
        code = "a = 1\nc = a + 1\nb = 2\nprint(a + b + c)\n"
        assert LiteralAssignMutator().identify(code) == {"a": 1}

    def test_no_inputs_is_none(self):
        assert LiteralAssignMutator().identify("print(3)\n") is None

    def test_rewrite_round_trips(self):
        mutated = rewrite_inputs(ADD_PROGRAM, {"a": 2, "b": 3})
        namespace = {}
        import io
        from contextlib import redirect_stdout

        buf = io.StringIO()
        with redirect_stdout(buf):
            exec(mutated, namespace)
        assert buf.getvalue().strip() == "5"


class TestCorrectnessGeneralizable:
    def test_arithmetic_oracle_identity(self):
        report = correctness_eval(
            programs={"t1": ADD_PROGRAM},
            regime="generalizable",
            sandbox=InProcessSandbox(),
            mutator=LiteralAssignMutator(int_range=(0, 50)),
            oracle=lambda b: str(b["a"] + b["b"]),
            variants_per_program=5,
            seed=3,
        )
        assert report.correctness == 1.0
        assert report.per_program[0].variants_tested == 5

    def test_wrong_program_caught_by_oracle(self):
        buggy = "a = 7\nb = 5\nprint(a - b)\n"
        report = correctness_eval(
            programs={"t1": buggy},
            regime="generalizable",
            sandbox=InProcessSandbox(),
            mutator=LiteralAssignMutator(int_range=(1, 50)),
            oracle=lambda b: str(b["a"] + b["b"]),
            seed=3,
        )
        assert report.correctness < 1.0

    def test_dyck_program_against_stack_oracle(self):
        from .oracles import random_dyck_prefix

        class DyckMutator(LiteralAssignMutator):
            def variants(self, bindings, rng, count):
                return [{"prefix": random_dyck_prefix(rng)} for _ in range(count)]

        report = correctness_eval(
            programs={"dyck": DYCK_PROGRAM},
            regime="generalizable",
            sandbox=InProcessSandbox(),
            mutator=DyckMutator(),
            oracle=lambda b: dyck_closing_sequence(b["prefix"]),
            variants_per_program=20,
            seed=11,
        )
        assert report.per_program[0].variants_tested == 20
        assert report.correctness == 1.0

    def test_unmutable_program_bucketed(self):
        report = correctness_eval(
            programs={"t1": "print(3)\n"},
            regime="generalizable",
            sandbox=InProcessSandbox(),
            mutator=LiteralAssignMutator(),
            oracle=lambda b: "3",
        )
        assert report.unmutable_count == 1
        assert report.per_program[0].unmutable

    def test_sampling_is_seeded(self):
        programs = {f"t{i}": ADD_PROGRAM for i in range(60)}
        kwargs = dict(
            regime="generalizable",
            sandbox=InProcessSandbox(),
            mutator=LiteralAssignMutator(),
            oracle=lambda b: str(b["a"] + b["b"]),
            variants_per_program=1,
            sample=10,
            seed=5,
        )
        a = correctness_eval(programs=programs, **kwargs)
        b = correctness_eval(programs=programs, **kwargs)
        assert [p.task_id for p in a.per_program] == [p.task_id for p in b.per_program]
        assert a.sampled == 10


class TestCorrectnessNongeneralizable:
    def test_equals_original_execution_accuracy(self):
        report = correctness_eval(
            programs={"t1": "x", "t2": "y", "t3": "z"},
            regime="nongeneralizable",
            sandbox=None,
            originals_correct={"t1": True, "t2": False, "t3": True},
        )
        assert report.correctness == pytest.approx(2 / 3)
        assert all(p.variants_tested == 0 for p in report.per_program)

    def test_requires_originals(self):
        with pytest.raises(EvaluationError):
            correctness_eval(programs={"t": "x"}, regime="nongeneralizable", sandbox=None)

    def test_csv_row_shape(self):
        report = correctness_eval(
            programs={"t1": "x"},
            regime="nongeneralizable",
            sandbox=None,
            originals_correct={"t1": True},
            dataset="legal",
        )
        lines = report.to_csv(accuracy=0.69).splitlines()
        assert lines[0] == "dataset,regime,sampled,accuracy,correctness"
        assert lines[1] == "legal,nongeneralizable,1,0.690000,1.000000"


class TestJudge:
    def test_identity_candidate_correct(self):
        gateway = scripted_gateway(
            lambda req: "VERDICT: CORRECT" if "same text" in req.human else "VERDICT: INCORRECT"
        )
        verdict = judge_proof("t1", "same text", "same text", gateway)
        assert verdict.verdict == "correct"

    def test_empty_candidate_incorrect_without_call(self):
        calls = []

        def handler(req):
            calls.append(req)
            return "VERDICT: CORRECT"

        verdict = judge_proof("t1", "   ", "reference", scripted_gateway(handler))
        assert verdict.verdict == "incorrect"
        assert calls == []

    def test_unparsable_reply_flagged_incorrect(self):
        gateway = scripted_gateway(lambda req: "hmm, hard to say")
        verdict = judge_proof("t1", "candidate", "reference", gateway)
        assert verdict.verdict == "incorrect"
        assert verdict.unparsable

    def test_replay_deterministic(self, tmp_path):
        from icrag.gateway import Cassette, Gateway, GatewayConfig, ScriptedTransport

        path = tmp_path / "judge.jsonl"
        live = Gateway(
            GatewayConfig(),
            cassette=Cassette(mode="live_record", path=path),
            transport=ScriptedTransport(lambda req: "VERDICT: CORRECT"),
        )
        first = judge_proof("t1", "cand", "ref", live)
        replay = Gateway(GatewayConfig(), cassette=Cassette(mode="replay_strict", path=path))
        second = judge_proof("t1", "cand", "ref", replay)
        assert first == second
