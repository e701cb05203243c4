"""Knowledge ingestion, embedding, and exact flat squared-L2 search.

The index is exhaustive and exact: results are ordered by ascending
squared L2 distance with ties broken by ascending item id, and a
saved/reloaded index returns identical results. Pool composition for
ablations is seeded and size-exact (floor formulas).
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_DIM = 384
DEFAULT_TOP_K = 3

ITEM_KINDS = ("text", "code")
ITEM_SOURCES = ("R1", "R2", "external_code")

_INDEX_MAGIC = b"FLL2"
_INDEX_VERSION = 1


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class KnowledgeItem:
    id: str
    kind: str
    body: str
    source: str
    meta: tuple[tuple[str, object], ...] = ()

    def __post_init__(self):
        if self.kind not in ITEM_KINDS:
            raise RetrievalError(f"unknown item kind {self.kind!r}")
        if self.source not in ITEM_SOURCES:
            raise RetrievalError(f"unknown item source {self.source!r}")
        if not self.body:
            raise RetrievalError(f"item {self.id!r} has empty body")

    @property
    def meta_dict(self) -> dict:
        return dict(self.meta)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "body": self.body,
            "source": self.source,
            "meta": self.meta_dict,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "KnowledgeItem":
        return cls(
            id=str(rec["id"]),
            kind=rec["kind"],
            body=rec["body"],
            source=rec["source"],
            meta=tuple(sorted((rec.get("meta") or {}).items())),
        )


class HashingEmbedder:
    """Deterministic offline embedder: seeded feature hashing of token n-grams.

    Token 1-3 grams are hashed into ``dim`` signed buckets and the result
    is L2-normalized, so identical strings embed identically across runs
    and processes.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 8:
            raise RetrievalError(f"embedding dim {dim} too small")
        self.dim = dim
        self.seed = seed
        self._key = struct.pack("<q", seed)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise RetrievalError("cannot embed empty text")
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens:
            # symbol-only input: fall back to character trigrams
            raw = text.strip()
            tokens = [raw[i : i + 3] for i in range(max(1, len(raw) - 2))]
        grams = list(tokens)
        grams += [" ".join(p) for p in zip(tokens, tokens[1:])]
        grams += [" ".join(p) for p in zip(tokens, tokens[1:], tokens[2:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            h = hashlib.blake2b(gram.encode("utf-8"), key=self._key, digest_size=8).digest()
            value = int.from_bytes(h, "little")
            bucket = value % self.dim
            sign = 1.0 if (value >> 63) & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:  # cancellation across grams; re-hash with a salt
            vec[int.from_bytes(hashlib.blake2b(text.encode("utf-8")).digest()[:4], "little") % self.dim] = 1.0
            norm = 1.0
        return (vec / norm).astype(np.float32)


class MiniLmEmbedder:
    """sentence-transformers provider (all-MiniLM-L6-v2 by default).

    Optional heavyweight path; install the ``embeddings`` extra to use it.
    """

    def __init__(self, model_name: str = "sentence-transformers/all-MiniLM-L6-v2"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RetrievalError(
                "sentence-transformers is not installed; use the hashing embedder "
                "or install icrag[embeddings]"
            ) from exc
        self._model = SentenceTransformer(model_name)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, text: str) -> np.ndarray:  # pragma: no cover - optional dependency
        if not text or not text.strip():
            raise RetrievalError("cannot embed empty text")
        return np.asarray(self._model.encode([text])[0], dtype=np.float32)


class VectorIndex:
    """Exact exhaustive squared-L2 index over (id, vector) entries."""

    def __init__(self, ids: list[str], vectors: np.ndarray):
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise RetrievalError(f"duplicate item id(s): {', '.join(dupes)}")
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise RetrievalError("vectors must be a (len(ids), dim) matrix")
        self.ids = list(ids)
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self.dim = int(vectors.shape[1]) if len(ids) else 0

    def __len__(self) -> int:
        return len(self.ids)

    def search(self, query: np.ndarray, k: int = DEFAULT_TOP_K) -> list[tuple[str, float]]:
        """Top-k by ascending squared L2; exact, ties broken by item id."""
        if k < 1:
            raise RetrievalError(f"k must be >= 1, got {k}")
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.dim,):
            raise RetrievalError(
                f"query dim {query.shape} does not match index dim ({self.dim},)"
            )
        if not self.ids:
            return []
        diffs = self.vectors.astype(np.float64) - query.astype(np.float64)
        dists = np.sum(diffs * diffs, axis=1)
        order = sorted(range(len(self.ids)), key=lambda i: (dists[i], self.ids[i]))
        return [(self.ids[i], float(dists[i])) for i in order[: min(k, len(order))]]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_INDEX_MAGIC)
            fh.write(struct.pack("<III", _INDEX_VERSION, self.dim, len(self.ids)))
            for item_id in self.ids:
                encoded = item_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
            fh.write(self.vectors.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "VectorIndex":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _INDEX_MAGIC:
                raise RetrievalError(f"not an index file (bad magic {magic!r})")
            version, dim, count = struct.unpack("<III", fh.read(12))
            if version != _INDEX_VERSION:
                raise RetrievalError(f"unsupported index version {version}")
            ids = []
            for _ in range(count):
                (length,) = struct.unpack("<H", fh.read(2))
                ids.append(fh.read(length).decode("utf-8"))
            data = fh.read(4 * dim * count)
            vectors = np.frombuffer(data, dtype="<f4").reshape(count, dim).copy()
        return cls(ids, vectors)


def index_build(items: list[KnowledgeItem], embedder) -> VectorIndex:
    if not items:
        raise RetrievalError("cannot build an index over zero items")
    ids = [item.id for item in items]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise RetrievalError(f"duplicate item id(s): {', '.join(dupes)}")
    vectors = np.stack([embedder.embed(item.body) for item in items])
    return VectorIndex(ids, vectors)


@dataclass(frozen=True)
class PoolConfig:
    """Knowledge-pool composition for ablations.

    ``r_in_domain`` subsamples the dataset's own pool; ``r_external``
    adds that fraction of the external code corpus on top. Setting
    ``r_in_domain`` to 0 with ``r_external`` > 0 yields external-only.
    """

    r_in_domain: float = 1.0
    r_external: float = 0.0
    include_text: bool = True
    include_code: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("r_in_domain", "r_external"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise RetrievalError(f"{name}={value} outside [0, 1]")


def compose_pool(all_items: list[KnowledgeItem], config: PoolConfig) -> list[KnowledgeItem]:
    """Seeded, size-exact pool composition; result is id-sorted."""
    in_domain = [i for i in all_items if i.source in ("R1", "R2")]
    external = [i for i in all_items if i.source == "external_code"]
    if not config.include_text:
        in_domain = [i for i in in_domain if i.kind != "text"]
        external = [i for i in external if i.kind != "text"]
    if not config.include_code:
        in_domain = [i for i in in_domain if i.kind != "code"]
        external = [i for i in external if i.kind != "code"]

    rng = random.Random(config.seed)
    chosen: list[KnowledgeItem] = []
    # epsilon keeps binary float drift (0.29 * 100 -> 28.999...) from
    # undershooting the intended floor
    n_in = int(config.r_in_domain * len(in_domain) + 1e-9)
    if n_in:
        chosen.extend(rng.sample(sorted(in_domain, key=lambda i: i.id), n_in))
    n_ext = int(config.r_external * len(external) + 1e-9)
    if n_ext:
        chosen.extend(rng.sample(sorted(external, key=lambda i: i.id), n_ext))
    if not chosen:
        raise RetrievalError("pool composition produced an empty pool")
    return sorted(chosen, key=lambda i: i.id)


def build_R2(pool_tasks, gateway, examples: str = "", on_skip=None) -> list[KnowledgeItem]:
    """Generate one code snippet item per solved pool task.

    Items record their parent task id for leakage audits. A gateway
    failure on one task skips that item and continues; the pool degrades
    rather than aborting.
    """
    from .gateway import CassetteMiss, ExtractionError, TransportError, extract_code

    items: list[KnowledgeItem] = []
    for task in sorted(pool_tasks, key=lambda t: t.id):
        bindings = {
            "examples": examples,
            "question": task.text,
            "answer": task.gold.raw,
        }
        try:
            response = gateway.complete_template("A1_build_snippet", bindings)
            code = extract_code(response).code
        except (TransportError, CassetteMiss, ExtractionError) as exc:
            if on_skip is not None:
                on_skip(task.id, exc)
            continue
        loc = sum(1 for line in code.splitlines() if line.strip())
        items.append(
            KnowledgeItem(
                id=f"r2:{task.id}",
                kind="code",
                body=code,
                source="R2",
                meta=(("loc", loc), ("parent_task_id", task.id)),
            )
        )
    return items


def audit_leakage(items: list[KnowledgeItem], eval_ids) -> list[str]:
    """Return ids of snippet items whose parent task sits in the eval set."""
    eval_ids = set(eval_ids)
    return [
        item.id
        for item in items
        if item.source == "R2" and item.meta_dict.get("parent_task_id") in eval_ids
    ]


def load_kb_jsonl(path) -> list[KnowledgeItem]:
    items: list[KnowledgeItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                item = KnowledgeItem.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise RetrievalError(f"{path}: line {lineno}: bad record: {exc}") from exc
            if item.id in seen:
                raise RetrievalError(f"{path}: line {lineno}: duplicate item id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    return items


def save_kb_jsonl(items: list[KnowledgeItem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_code_dir(path, source: str = "external_code") -> list[KnowledgeItem]:
    """One code item per source file in a directory tree."""
    items: list[KnowledgeItem] = []
    for root, _dirs, files in os.walk(path):
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path)
            try:
                with open(full, encoding="utf-8") as fh:
                    body = fh.read()
            except (OSError, UnicodeDecodeError):
                continue
            if not body.strip():
                continue
            loc = sum(1 for line in body.splitlines() if line.strip())
            items.append(
                KnowledgeItem(
                    id=f"ext:{rel}",
                    kind="code",
                    body=body,
                    source=source,
                    meta=(("loc", loc), ("origin", rel)),
                )
            )
    return sorted(items, key=lambda i: i.id)
