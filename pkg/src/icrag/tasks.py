"""Task records, answer normalization, and leakage-safe k-fold splits.

A dataset is a JSON Lines file, one record per task:

    {"id": str, "text": str, "gold": str, "answer_kind": str,
     "domain_tag": str, "kb_refs": [str]}

``answer_kind`` is one of ``numeric``, ``binary``, ``multiclass``,
``freeform``, ``proof``. Binary label synonym maps are per-dataset
configuration, never hardcoded here.
"""

from __future__ import annotations

import json
import random
import re
import string
from dataclasses import dataclass, field

ANSWER_KINDS = ("numeric", "binary", "multiclass", "freeform", "proof")

# Default synonym map used for binary answers when the dataset ships none.
DEFAULT_BINARY_LABELS = {
    "yes": ("yes", "y", "true"),
    "no": ("no", "n", "false"),
}

_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_ANSWER_PREFIX_RE = re.compile(r"^\s*(?:final\s+)?answer\s*[:=]\s*", re.IGNORECASE)
_OPTION_LETTER_RE = re.compile(r"\(([A-Za-z])\)")
_LEADING_LETTER_RE = re.compile(r"^([A-Za-z])\s*[).:\-]\s+")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class AnswerValue:
    """An answer in normalized (canonical) form.

    ``failed`` marks a value that could not be normalized (e.g. a numeric
    answer with no parsable number). Failed values never compare equal to
    anything and are scored as misses, not as crashes.
    """

    kind: str
    canonical: str
    raw: str
    failed: bool = False

    def matches(self, other: "AnswerValue") -> bool:
        if self.failed or other.failed:
            return False
        return self.kind == other.kind and self.canonical == other.canonical


@dataclass(frozen=True)
class Task:
    id: str
    text: str
    gold: AnswerValue
    answer_kind: str
    domain_tag: str = ""
    kb_refs: tuple[str, ...] = ()


@dataclass
class Dataset:
    name: str
    tasks: list[Task]
    binary_labels: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    def by_id(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


@dataclass(frozen=True)
class FoldSplit:
    """One fold of a k-fold partition: eval ids vs. the retrieval pool."""

    k: int
    fold_index: int
    eval_ids: frozenset[str]
    pool_ids: frozenset[str]
    seed: int

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "eval_ids": sorted(self.eval_ids),
            "pool_ids": sorted(self.pool_ids),
        }


@dataclass
class RunRecord:
    """Outcome of one method run on one task."""

    task_id: str
    method: str
    prediction: AnswerValue
    trace_ref: str
    wall_ms: int = 0


def normalize_answer(
    raw: str,
    kind: str,
    binary_labels: dict[str, tuple[str, ...]] | None = None,
) -> AnswerValue:
    """Normalize a raw answer string into its canonical comparable form.

    Canonical forms are idempotent: re-normalizing a canonical value
    yields the same canonical value. Numeric answers that contain no
    parsable number come back with ``failed=True`` instead of raising.
    """
    if kind not in ANSWER_KINDS:
        raise ValueError(f"unknown answer kind: {kind!r}")
    if raw is None:
        raw = ""
    text = _ANSWER_PREFIX_RE.sub("", raw.strip())

    if kind == "numeric":
        cleaned = text.replace(",", "").replace("$", "").replace("%", "")
        m = _NUMBER_RE.search(cleaned)
        if m is None:
            return AnswerValue(kind, "", raw, failed=True)
        value = float(m.group(0))
        canonical = str(int(value)) if value == int(value) else repr(value)
        return AnswerValue(kind, canonical, raw)

    if kind == "binary":
        folded = text.strip().strip(".,!?;:'\"").casefold()
        folded = re.sub(r"\s+", " ", folded)
        labels = binary_labels if binary_labels else DEFAULT_BINARY_LABELS
        for canonical, synonyms in labels.items():
            if folded == canonical.casefold() or folded in {s.casefold() for s in synonyms}:
                return AnswerValue(kind, canonical.casefold(), raw)
        # Unmapped labels pass through folded so per-dataset vocabularies
        # like "violation"/"no violation" compare without configuration.
        return AnswerValue(kind, folded, raw)

    if kind == "multiclass":
        m = _OPTION_LETTER_RE.search(text)
        if m is None:
            m = _LEADING_LETTER_RE.match(text)
        if m is not None:
            return AnswerValue(kind, m.group(1).upper(), raw)
        stripped = text.strip().strip(".").strip()
        if len(stripped) == 1 and stripped in string.ascii_letters:
            return AnswerValue(kind, stripped.upper(), raw)
        folded = re.sub(r"\s+", " ", stripped.casefold())
        return AnswerValue(kind, folded, raw)

    if kind == "freeform":
        folded = re.sub(r"\s+", " ", text.strip()).casefold().rstrip(".")
        return AnswerValue(kind, folded, raw)

    # proof: compared by a judge, not string equality; keep text as-is
    return AnswerValue(kind, text.strip(), raw)


def _parse_record(line: str, lineno: int, binary_labels) -> Task:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {lineno}: malformed JSON record: {exc}") from exc
    if not isinstance(rec, dict):
        raise DatasetError(f"line {lineno}: record is not an object")
    for key in ("id", "text", "gold"):
        if key not in rec:
            raise DatasetError(f"line {lineno}: missing required field {key!r}")
    task_id = str(rec["id"])
    text = str(rec["text"])
    if not text.strip():
        raise DatasetError(f"line {lineno}: task {task_id!r} has empty text")
    kind = str(rec.get("answer_kind", "freeform"))
    if kind not in ANSWER_KINDS:
        raise DatasetError(f"line {lineno}: task {task_id!r} has unknown answer_kind {kind!r}")
    gold = normalize_answer(str(rec["gold"]), kind, binary_labels)
    if gold.failed:
        raise DatasetError(
            f"line {lineno}: task {task_id!r} gold {rec['gold']!r} does not parse as {kind}"
        )
    return Task(
        id=task_id,
        text=text,
        gold=gold,
        answer_kind=kind,
        domain_tag=str(rec.get("domain_tag", "")),
        kb_refs=tuple(rec.get("kb_refs", ()) or ()),
    )


def load_dataset(path, name: str | None = None, binary_labels=None) -> Dataset:
    """Load a JSONL dataset, rejecting duplicate ids and malformed records."""
    tasks: list[Task] = []
    seen: set[str] = set()
    labels = dict(binary_labels) if binary_labels else {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            task = _parse_record(line, lineno, labels or None)
            if task.id in seen:
                raise DatasetError(f"line {lineno}: duplicate task id {task.id!r}")
            seen.add(task.id)
            tasks.append(task)
    return Dataset(name=name or str(path), tasks=tasks, binary_labels=labels)


def make_folds(dataset: Dataset, k: int, seed: int) -> list[FoldSplit]:
    """Partition the dataset ids into k disjoint eval sets.

    Pure function of (ids, k, seed): ids are sorted before the seeded
    shuffle, so insertion order never leaks into the split.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    ids = sorted(dataset.ids())
    n = len(ids)
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    rng = random.Random(seed)
    rng.shuffle(ids)
    base, extra = divmod(n, k)
    folds: list[FoldSplit] = []
    start = 0
    all_ids = frozenset(ids)
    for i in range(k):
        size = base + (1 if i < extra else 0)
        chunk = frozenset(ids[start : start + size])
        start += size
        folds.append(
            FoldSplit(k=k, fold_index=i, eval_ids=chunk, pool_ids=all_ids - chunk, seed=seed)
        )
    return folds


def save_folds(folds: list[FoldSplit], path) -> None:
    payload = {
        "k": folds[0].k,
        "seed": folds[0].seed,
        "folds": [f.to_dict() for f in folds],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_folds(path) -> list[FoldSplit]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return [
        FoldSplit(
            k=payload["k"],
            fold_index=f["fold_index"],
            eval_ids=frozenset(f["eval_ids"]),
            pool_ids=frozenset(f["pool_ids"]),
            seed=payload["seed"],
        )
        for f in payload["folds"]
    ]
