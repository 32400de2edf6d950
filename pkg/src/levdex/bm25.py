"""Okapi BM25 inverted index over serialized dialogue contexts.

Doubles as the lexical retrieval baseline and as the candidate
generator for contrastive pair mining. Defaults k1=0.9, b=0.4 with
idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
"""

from __future__ import annotations

import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from math import log
from pathlib import Path

from .corpus import SerializedContext
from .errors import ArtifactIOError, DuplicateDocError, VersionMismatchError
from .state import LevSpan, parse_state, serialize_state

_MAGIC = b"LDXBM25\x00"
_VERSION = 1

# Separator tokens, bracketed domain markers, and the NULL deletion
# marker stay atomic; everything else folds to lowercase alphanumeric runs.
_TOKEN_RE = re.compile(r"⟨[^⟨⟩]*⟩|\[[^\[\]]+\]|NULL(?![A-Za-z0-9])|[A-Za-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Deterministic lowercase tokenizer with atomic marker tokens."""
    return [m if m == "NULL" else m.lower() for m in _TOKEN_RE.findall(text)]


Payload = tuple[LevSpan, str, int]


@dataclass(frozen=True)
class Bm25Index:
    postings: dict[str, tuple[tuple[str, int], ...]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    n_docs: int
    k1: float
    b: float
    doc_payloads: dict[str, Payload] = field(default_factory=dict)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_bm25(
    docs: list[tuple[str, SerializedContext | str, Payload]],
    k1: float = 0.9,
    b: float = 0.4,
) -> Bm25Index:
    """Index (doc_id, text, payload) triples. Deterministic postings order."""
    if k1 <= 0 or not 0 <= b <= 1:
        raise ValueError(f"bad BM25 parameters k1={k1}, b={b}")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    payloads: dict[str, Payload] = {}
    for doc_id, doc, payload in docs:
        if doc_id in doc_lengths:
            raise DuplicateDocError(f"duplicate doc id {doc_id!r}")
        text = doc.text if isinstance(doc, SerializedContext) else doc
        tokens = tokenize(text)
        doc_lengths[doc_id] = len(tokens)
        payloads[doc_id] = payload
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((doc_id, tf))
    n = len(doc_lengths)
    avg = (sum(doc_lengths.values()) / n) if n else 0.0
    return Bm25Index(
        postings={t: tuple(ps) for t, ps in postings.items()},
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        n_docs=n,
        k1=k1,
        b=b,
        doc_payloads=payloads,
    )


def bm25_topk(
    index: Bm25Index,
    query: SerializedContext | str,
    k: int,
    exclude_dialogue: str | None = None,
    exclude_doc: str | None = None,
) -> list[tuple[float, str, Payload]]:
    """Top-k Okapi-scored docs, descending score, ties by ascending doc_id.

    Docs scoring zero are dropped rather than padded. Docs whose payload
    comes from ``exclude_dialogue``, and the single ``exclude_doc``, are
    filtered before ranking.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    text = query.text if isinstance(query, SerializedContext) else query
    scores: dict[str, float] = {}
    for term in tokenize(text):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            norm = index.k1 * (1 - index.b + index.b * index.doc_lengths[doc_id] / index.avg_doc_length)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (index.k1 + 1) / (tf + norm)
    ranked = []
    for doc_id, score in scores.items():
        if score <= 0.0:
            continue
        if exclude_doc is not None and doc_id == exclude_doc:
            continue
        payload = index.doc_payloads[doc_id]
        if exclude_dialogue is not None and payload[1] == exclude_dialogue:
            continue
        ranked.append((score, doc_id, payload))
    ranked.sort(key=lambda r: (-r[0], r[1]))
    return ranked[:k]


def save_bm25(index: Bm25Index, path: str | Path) -> None:
    """Persist to a single versioned binary file (deterministic bytes)."""
    body = {
        "k1": index.k1,
        "b": index.b,
        "n_docs": index.n_docs,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": index.doc_lengths,
        "postings": {t: list(map(list, ps)) for t, ps in index.postings.items()},
        "payloads": {
            d: [serialize_state(p[0]), p[1], p[2]] for d, p in index.doc_payloads.items()
        },
    }
    blob = json.dumps(body, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)


def load_bm25(path: str | Path) -> Bm25Index:
    path = Path(path)
    if not path.is_file():
        raise ArtifactIOError(f"index file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 12 or raw[: len(_MAGIC)] != _MAGIC:
        raise VersionMismatchError(f"{path} is not a BM25 index file")
    version, size = struct.unpack_from("<IQ", raw, len(_MAGIC))
    if version != _VERSION:
        raise VersionMismatchError(f"unsupported BM25 index version {version}")
    blob = raw[len(_MAGIC) + 12 :]
    if len(blob) != size:
        raise ArtifactIOError(f"{path}: truncated index file")
    body = json.loads(blob.decode("utf-8"))
    return Bm25Index(
        postings={t: tuple((d, int(tf)) for d, tf in ps) for t, ps in body["postings"].items()},
        doc_lengths={d: int(n) for d, n in body["doc_lengths"].items()},
        avg_doc_length=float(body["avg_doc_length"]),
        n_docs=int(body["n_docs"]),
        k1=float(body["k1"]),
        b=float(body["b"]),
        doc_payloads={
            d: (parse_state(lev), did, int(t)) for d, (lev, did, t) in body["payloads"].items()
        },
    )
