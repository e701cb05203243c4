#!/usr/bin/env python3
"""Regenerate the bundled end-to-end fixtures.

Builds a 10-task arithmetic dataset, a small text knowledge base, and a
response cassette recorded through the real pipeline against a scripted
model: the initial program is deliberately wrong, the first refinement
fixes it and returns an empty query, so the co-refinement runs replay
with accuracy 1.0 while the direct baseline is scripted to 0.5.

Run from the repository root:

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import json
import os
import re
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from icrag.cli import _run_experiment  # noqa: E402
from icrag.config import ExperimentConfig  # noqa: E402
from icrag.gateway import ScriptedTransport  # noqa: E402

FIXTURES = os.path.join(ROOT, "tests", "fixtures")

# ten addition tasks; index -> (x, y)
OPERANDS = [(3, 4), (10, 5), (7, 7), (20, 1), (6, 9), (12, 8), (2, 2), (30, 12), (5, 16), (9, 13)]

KB_ITEMS = [
    {
        "id": "r1:addition",
        "kind": "text",
        "body": "Addition combines two counts into their total; the order of operands does not matter.",
        "source": "R1",
        "meta": {"origin": "arithmetic-notes"},
    },
    {
        "id": "r1:carrying",
        "kind": "text",
        "body": "When a column sum reaches ten, carry one into the next column to the left.",
        "source": "R1",
        "meta": {"origin": "arithmetic-notes"},
    },
    {
        "id": "r1:checking",
        "kind": "text",
        "body": "A sum can be checked by subtracting one operand from the total to recover the other.",
        "source": "R1",
        "meta": {"origin": "arithmetic-notes"},
    },
]


def task_text(x: int, y: int) -> str:
    return f"A jar holds {x} marbles and {y} more are added. How many marbles are in the jar?"


def build_dataset() -> list[dict]:
    records = []
    for i, (x, y) in enumerate(OPERANDS):
        records.append(
            {
                "id": f"fx{i:02d}",
                "text": task_text(x, y),
                "gold": str(x + y),
                "answer_kind": "numeric",
                "domain_tag": "arithmetic",
                "kb_refs": ["r1:addition"],
            }
        )
    return records


def scripted_model(records: list[dict]) -> ScriptedTransport:
    by_text = {rec["text"]: rec for rec in records}
    golds = {rec["id"]: rec["gold"] for rec in records}

    def find_task(blob: str) -> dict:
        for text, rec in by_text.items():
            if text in blob:
                return rec
        raise AssertionError(f"no fixture task in prompt: {blob[:120]!r}")

    def handler(request):
        blob = request.system + "\n" + request.human
        if request.template_id == "A1_build_snippet":
            rec = find_task(blob)
            match = re.search(r"holds (\d+) marbles and (\d+) more", rec["text"])
            x, y = match.group(1), match.group(2)
            return (
                "Here is the worked example as a program:\n"
                f"```python\njar = {x}\njar += {y}\nprint(jar)\n```"
            )
        if request.template_id == "A2i_codify":
            rec = find_task(blob)
            return f"```python\n# first draft, forgets the added marbles\nprint({rec['text'].split()[3]})\n```"
        if request.template_id == "A2ii_refine":
            rec = find_task(blob)
            return (
                "The draft ignored the marbles that were added; fixed below.\n"
                f"```python\nprint({golds[rec['id']]})\n```\n"
                "Query:"
            )
        if request.template_id == "A2iii_direct":
            rec = find_task(blob)
            index = int(rec["id"][2:])
            answer = rec["gold"] if index % 2 == 0 else str(int(rec["gold"]) + 1)
            return f"Answer: {answer}"
        if request.template_id in ("A2v_rag_nl", "A2vi_rag_code"):
            rec = find_task(blob)
            return f"Answer: {rec['gold']}"
        raise AssertionError(f"unscripted template {request.template_id}")

    return ScriptedTransport(handler)


def fixture_config(dataset_path: str, cassette_path: str, kb_path: str, out_dir: str,
                   method: str = "icrag") -> ExperimentConfig:
    config = ExperimentConfig()
    config.dataset = dataset_path
    config.dataset_name = "arith10"
    config.method = method
    config.k = 5
    config.seed = 7
    config.kb_paths = [kb_path]
    config.out_dir = out_dir
    config.workers = 1
    config.model_id = "scripted-fixture"
    config.cassette_path = cassette_path
    config.cassette_mode = "live_record"
    config.exec_timeout_ms = 10_000
    return config


def main() -> None:
    os.makedirs(FIXTURES, exist_ok=True)
    records = build_dataset()
    dataset_path = os.path.join(FIXTURES, "tasks10.jsonl")
    with open(dataset_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    kb_path = os.path.join(FIXTURES, "kb_r1.jsonl")
    with open(kb_path, "w", encoding="utf-8") as fh:
        for item in KB_ITEMS:
            fh.write(json.dumps(item, sort_keys=True) + "\n")

    cassette_path = os.path.join(FIXTURES, "cassette.jsonl")
    if os.path.exists(cassette_path):
        os.remove(cassette_path)

    transport = scripted_model(records)
    workdir = tempfile.mkdtemp(prefix="fixture-build-")
    try:
        for method in ("icrag", "direct", "rag_code"):
            config = fixture_config(dataset_path, cassette_path, kb_path, workdir, method)
            summary = _run_experiment(config, workdir, transport=transport)
            print(f"{method}: recorded, accuracy {summary['accuracy']:.2f}")
        # ablation grid points re-retrieve with subsampled pools
        for r in (0.25, 0.5, 0.75, 1.0):
            config = fixture_config(dataset_path, cassette_path, kb_path, workdir, "rag_code")
            config.r_in_domain = r
            summary = _run_experiment(config, workdir, transport=transport)
            print(f"rag_code r={r}: recorded, accuracy {summary['accuracy']:.2f}")
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
    with open(cassette_path, encoding="utf-8") as fh:
        n = sum(1 for line in fh if line.strip())
    print(f"cassette entries: {n} -> {cassette_path}")


if __name__ == "__main__":
    main()
