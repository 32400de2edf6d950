import math
import random

import pytest

from levdex.bm25 import Bm25Index, bm25_topk, build_bm25, load_bm25, save_bm25, tokenize
from levdex.errors import ArtifactIOError, DuplicateDocError, VersionMismatchError
from levdex.state import EMPTY_LEV, canonicalize_lev


def reference_scores(docs, query_tokens, k1, b):
    """Naive double-loop Okapi scorer used as the test oracle."""
    token_lists = {d: tokenize(text) for d, text, _ in docs}
    n = len(docs)
    avg = sum(len(t) for t in token_lists.values()) / n if n else 0.0
    scores = {}
    for doc_id, toks in token_lists.items():
        s = 0.0
        for q in query_tokens:
            tf = toks.count(q)
            if tf == 0:
                continue
            df = sum(1 for other in token_lists.values() if q in other)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avg))
        scores[doc_id] = s
    return scores


def payload(did="dlg", t=0):
    return (EMPTY_LEV, did, t)


THREE_DOCS = [
    ("d1", "hotel area centre", payload("a", 0)),
    ("d2", "train leaves monday", payload("b", 0)),
    ("d3", "hotel stars", payload("c", 0)),
]


class TestTokenize:
    def test_folding_and_splitting(self):
        assert tokenize("Hotel area?") == ["hotel", "area"]

    def test_empty(self):
        assert tokenize("") == []

    def test_atomic_markers(self):
        assert tokenize("[hotel] stars 4 ⟨eos_l1⟩") == ["[hotel]", "stars", "4", "⟨eos_l1⟩"]

    def test_null_atomic(self):
        assert tokenize("price NULL, area centre") == ["price", "NULL", "area", "centre"]
        assert tokenize("NULLable null") == ["nullable", "null"]

    def test_placeholders_atomic(self):
        assert tokenize("[value_food] and [v]") == ["[value_food]", "and", "[v]"]


class TestBuild:
    def test_empty(self):
        index = build_bm25([])
        assert index.n_docs == 0
        assert bm25_topk(index, "anything", k=5) == []

    def test_counting(self):
        index = build_bm25(THREE_DOCS)
        assert index.n_docs == 3
        assert set(index.postings) == {"hotel", "area", "centre", "train", "leaves", "monday", "stars"}
        assert index.avg_doc_length == pytest.approx(8 / 3)

    def test_duplicate_doc(self):
        with pytest.raises(DuplicateDocError):
            build_bm25([("d1", "a", payload()), ("d1", "b", payload())])

    def test_idf_monotonicity(self):
        docs = [
            (f"d{i}", ("rare " if i < 1 else "") + ("mid " if i < 50 else "") + "common", payload())
            for i in range(100)
        ]
        index = build_bm25(docs)
        assert index.idf("rare") > index.idf("mid") > index.idf("common") > 0


class TestTopK:
    def test_no_shared_terms(self):
        index = build_bm25(THREE_DOCS)
        assert bm25_topk(index, "zebra quantum", k=5) == []

    def test_hand_ranked_example(self):
        index = build_bm25(THREE_DOCS, k1=0.9, b=0.4)
        results = bm25_topk(index, "hotel area", k=10)
        assert [doc_id for _, doc_id, _ in results] == ["d1", "d3"]
        expected = reference_scores(THREE_DOCS, ["hotel", "area"], 0.9, 0.4)
        for score, doc_id, _ in results:
            assert score == pytest.approx(expected[doc_id], abs=1e-12)

    def test_prefix_consistency(self):
        index = build_bm25(THREE_DOCS)
        top1 = bm25_topk(index, "hotel area", k=1)
        top10 = bm25_topk(index, "hotel area", k=10)
        assert top1 == top10[:1]

    def test_exclude_dialogue(self):
        index = build_bm25(THREE_DOCS)
        results = bm25_topk(index, "hotel", k=10, exclude_dialogue="a")
        assert [doc_id for _, doc_id, _ in results] == ["d3"]

    def test_exclude_doc(self):
        index = build_bm25(THREE_DOCS)
        results = bm25_topk(index, "hotel", k=10, exclude_doc="d1")
        assert [doc_id for _, doc_id, _ in results] == ["d3"]

    def test_tie_break_by_doc_id(self):
        docs = [("z", "alpha beta", payload()), ("a", "alpha beta", payload())]
        index = build_bm25(docs)
        results = bm25_topk(index, "alpha", k=2)
        assert [doc_id for _, doc_id, _ in results] == ["a", "z"]

    def test_reference_equivalence_random(self):
        rng = random.Random(42)
        vocab = [f"w{i}" for i in range(30)]
        for trial in range(20):
            n = rng.randint(2, 40)
            docs = [
                (f"d{i:03d}", " ".join(rng.choices(vocab, k=rng.randint(1, 15))), payload(f"g{i}", 0))
                for i in range(n)
            ]
            index = build_bm25(docs)
            query = " ".join(rng.choices(vocab, k=rng.randint(1, 6)))
            expected = reference_scores(docs, tokenize(query), 0.9, 0.4)
            got = {doc_id: s for s, doc_id, _ in bm25_topk(index, query, k=n)}
            for doc_id, s in expected.items():
                if s > 0:
                    assert got[doc_id] == pytest.approx(s, abs=1e-9)
                else:
                    assert doc_id not in got


class TestPersistence:
    def build(self):
        docs = [
            ("d1", "[hotel] stars 4 ⟨eos_b⟩ i want a hotel", (canonicalize_lev({"hotel": {"stars": "4"}}), "a", 0)),
            ("d2", "[train] day monday ⟨eos_b⟩ a train on monday", (canonicalize_lev({"train": {"day": "monday"}}), "b", 1)),
        ]
        return build_bm25(docs)

    def test_roundtrip(self, tmp_path):
        index = self.build()
        path = tmp_path / "bm25.bin"
        save_bm25(index, path)
        again = load_bm25(path)
        assert again == index

    def test_roundtrip_query_equality(self, tmp_path):
        index = self.build()
        path = tmp_path / "bm25.bin"
        save_bm25(index, path)
        again = load_bm25(path)
        assert bm25_topk(again, "hotel stars", k=5) == bm25_topk(index, "hotel stars", k=5)

    def test_deterministic_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_bm25(self.build(), p1)
        save_bm25(self.build(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bm25.bin"
        save_bm25(self.build(), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises((ArtifactIOError, VersionMismatchError)):
            load_bm25(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bm25.bin"
        path.write_bytes(b"not an index at all, definitely not")
        with pytest.raises(VersionMismatchError):
            load_bm25(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactIOError):
            load_bm25(tmp_path / "nope.bin")
