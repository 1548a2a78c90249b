import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2r.lexical import DuplicateDocumentError, InvertedIndex, tokenize

TOY = {
    "a": "the cat sat on the mat".split(),
    "b": "the dog chased the cat around the yard".split(),
    "c": "a bird sang".split(),
}


def bm25_oracle(docs, query, k1=0.8, b=0.72):
    """Okapi BM25 with Lucene idf, computed term by term."""
    N = len(docs)
    avg = sum(len(t) for t in docs.values()) / N
    out = {}
    for doc_id, toks in docs.items():
        s = 0.0
        for term in query:
            df = sum(term in t for t in docs.values())
            tf = toks.count(term)
            if df == 0 or tf == 0:
                continue
            idf = math.log(1 + (N - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avg))
        if s > 0:
            out[doc_id] = s
    return sorted(out.items(), key=lambda kv: (-kv[1], kv[0]))


def build(docs, **kw):
    idx = InvertedIndex(**kw)
    idx.add_documents(docs.items())
    return idx


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("Hello, World! x2-y") == ["hello", "world", "x2", "y"]


class TestAddDocuments:
    def test_lengths_and_average(self):
        idx = build({"x": ["a", "b", "c"], "y": list("abcde")})
        assert idx.doc_count == 2
        assert idx.avg_doc_len == 4.0

    def test_duplicate_rejected_by_name(self):
        idx = build({"x": ["a"]})
        with pytest.raises(DuplicateDocumentError, match="x"):
            idx.add_documents([("x", ["b"])])

    def test_duplicate_batch_leaves_index_untouched(self):
        idx = build({"x": ["a"]})
        with pytest.raises(DuplicateDocumentError):
            idx.add_documents([("z", ["q"]), ("x", ["b"])])
        assert idx.doc_count == 1
        assert idx.bm25_topk(["q"], 5) == []

    def test_sessions_are_additive(self):
        idx = build({"x": ["a", "b"]})
        idx.add_documents([("y", ["c"]), ("z", ["a", "c", "c"])])
        assert idx.doc_count == 3
        assert idx.avg_doc_len == pytest.approx(2.0)

    @settings(max_examples=40)
    @given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=8), min_size=1, max_size=12),
           st.integers(1, 11))
    def test_invariants_hold_across_incremental_adds(self, docs, split):
        named = [(f"d{i:02d}", t) for i, t in enumerate(docs)]
        idx = InvertedIndex()
        idx.add_documents(named[:split])
        idx.add_documents(named[split:])
        assert idx.doc_count == len(docs)
        assert idx.avg_doc_len == pytest.approx(np.mean([len(t) for t in docs]))


class TestBM25:
    def test_no_indexed_terms(self):
        assert build(TOY).bm25_topk(["zebra"], 3) == []

    def test_single_document(self):
        idx = build({"only": ["x", "y"]})
        assert [d for d, _ in idx.bm25_topk(["x", "y"], 5)] == ["only"]

    def test_toy_corpus_matches_hand_scores(self):
        got = build(TOY).bm25_topk(["the", "cat"], 3)
        want = bm25_oracle(TOY, ["the", "cat"])
        assert [d for d, _ in got] == [d for d, _ in want]
        np.testing.assert_allclose([s for _, s in got], [s for _, s in want], rtol=1e-12)

    def test_hand_value_single_term(self):
        # "bird": df=1, N=3 -> idf = ln(1 + 2.5/1.5); doc c has tf=1, len 3, avg 17/3
        idf = math.log(1 + 2.5 / 1.5)
        norm = 1 - 0.72 + 0.72 * 3 / (17 / 3)
        want = idf * 1.8 / (1 + 0.8 * norm)
        (doc, score), = build(TOY).bm25_topk(["bird"], 3)
        assert doc == "c" and score == pytest.approx(want, rel=1e-12)

    def test_ties_break_by_doc_id(self):
        idx = build({"z": ["w"], "m": ["w"], "a": ["w"]})
        assert [d for d, _ in idx.bm25_topk(["w"], 3)] == ["a", "m", "z"]

    def test_truncates_to_k(self):
        assert len(build(TOY).bm25_topk(["the", "cat", "bird"], 2)) == 2

    def test_restrict_to_subset(self):
        got = build(TOY).bm25_topk(["the", "cat", "bird"], 3, restrict_to={"b", "c"})
        assert {d for d, _ in got} <= {"b", "c"}

    @settings(max_examples=40)
    @given(st.dictionaries(st.text("abc", min_size=1, max_size=3),
                           st.lists(st.sampled_from(["x", "y", "z", "w"]), min_size=1, max_size=6),
                           min_size=1, max_size=10),
           st.lists(st.sampled_from(["x", "y", "z", "q"]), min_size=1, max_size=4))
    def test_matches_oracle_on_random_corpora(self, docs, query):
        got = build(docs).bm25_topk(query, len(docs))
        want = bm25_oracle(docs, query)
        assert [d for d, _ in got] == [d for d, _ in want]

    def test_save_load_round_trip(self, tmp_path):
        idx = build(TOY)
        idx.save(tmp_path / "bm25.idx")
        back = InvertedIndex.load(tmp_path / "bm25.idx")
        assert back.bm25_topk(["the", "cat"], 3) == idx.bm25_topk(["the", "cat"], 3)
        assert (back.k1, back.b, back.doc_count) == (idx.k1, idx.b, idx.doc_count)

    def test_load_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "junk.idx"
        p.write_text("not an index\n")
        with pytest.raises(ValueError):
            InvertedIndex.load(p)
