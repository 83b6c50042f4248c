import math

import pytest
from hypothesis import given, strategies as st

from fixtures import BM25_CORPORA, bm25_oracle, random_corpus
from uraner.sparse_index import (InvertedIndex, build_index, load_index, merge_indexes, save_index, search_topk,
                                 tokenize_for_index)

TINY = {1: "a b", 2: "a a b", 3: "c"}


def test_tokenize_examples():
    assert tokenize_for_index("Deal Hudson, 1995.") == ["deal", "hudson", "1995"]
    assert tokenize_for_index("") == []
    assert tokenize_for_index("北京大学", "zh") == ["北", "京", "大", "学"]


def test_tokenize_cjk_mixed_word_keeps_word_and_characters():
    assert tokenize_for_index("iPhone手机", "zh") == ["iphone手机", "手", "机"]
    assert tokenize_for_index("北京大学", "en") == ["北京大学"]


def test_tiny_corpus_hand_scores():
    # N=3, df(a)=2, avgdl=2: idf = ln 1.6; d1 has tf=1, len=2; d2 has tf=2, len=3
    index = build_index(TINY.items())
    hits = search_topk(index, "a", 3)
    assert [h.doc_id for h in hits] == [2, 1]
    assert [h.rank for h in hits] == [1, 2]
    assert hits[0].score == pytest.approx(math.log(1.6) * 2 * 2.2 / (2 + 1.2 * (0.25 + 0.75 * 1.5)), abs=1e-12)
    assert hits[1].score == pytest.approx(math.log(1.6), abs=1e-12)


def test_no_match_and_empty_query():
    index = build_index(TINY.items())
    assert search_topk(index, "zzz", 3) == []
    assert search_topk(index, "...", 3) == []
    assert search_topk(InvertedIndex(), "a", 3) == []


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        search_topk(build_index(TINY.items()), "a", 0)


def test_ties_break_by_doc_id():
    index = build_index([(9, "x y"), (4, "x y"), (6, "x y")])
    assert [h.doc_id for h in search_topk(index, "x", 3)] == [4, 6, 9]


def test_repeated_query_terms_count_once():
    index = build_index(TINY.items())
    assert search_topk(index, "a a a", 3) == search_topk(index, "a", 3)


def test_index_invariants():
    docs, _ = random_corpus(5, 30)
    index = build_index(docs.items())
    for term, plist in index.postings.items():
        assert index.doc_freq[term] == len(plist)
        assert [d for d, _ in plist] == sorted(d for d, _ in plist)
    assert index.avg_doc_len == pytest.approx(sum(index.doc_len.values()) / len(index.doc_len))


@pytest.mark.parametrize("seed,n_docs", BM25_CORPORA)
def test_matches_oracle(seed, n_docs):
    docs, queries = random_corpus(seed, n_docs)
    index = build_index(docs.items())
    for q in queries:
        oracle = bm25_oracle(docs, q)
        hits = search_topk(index, q, len(docs))
        assert [h.doc_id for h in hits] == sorted(oracle, key=lambda d: (-oracle[d], d))
        for h in hits:
            assert abs(h.score - oracle[h.doc_id]) <= 1e-9


def test_parameter_override():
    docs, queries = random_corpus(3, 20)
    index = build_index(docs.items(), k1=2.0, b=0.3)
    for q in queries:
        oracle = bm25_oracle(docs, q, k1=2.0, b=0.3)
        assert {h.doc_id: h.score for h in search_topk(index, q, 100)} == pytest.approx(oracle, abs=1e-9)
        plain = search_topk(index, q, 100, k1=1.2, b=0.75)
        assert {h.doc_id: h.score for h in plain} == pytest.approx(bm25_oracle(docs, q), abs=1e-9)


def test_shards_merge_to_same_index(tmp_path):
    docs, _ = random_corpus(7, 50)
    save_index(build_index(docs.items()), tmp_path / "one.urbm")
    save_index(build_index(docs.items(), shards=4), tmp_path / "four.urbm")
    assert (tmp_path / "one.urbm").read_bytes() == (tmp_path / "four.urbm").read_bytes()


def test_merge_rejects_overlap():
    with pytest.raises(ValueError):
        merge_indexes([build_index([(1, "a")]), build_index([(1, "b")])])


def test_save_load_roundtrip(tmp_path):
    index = build_index([(1, "北京 大学"), (2, "上海")], language="zh", k1=1.5, b=0.5)
    save_index(index, tmp_path / "i.urbm")
    loaded = load_index(tmp_path / "i.urbm")
    assert loaded.postings == index.postings and loaded.doc_len == index.doc_len
    assert (loaded.language, loaded.k1, loaded.b) == ("zh", 1.5, 0.5)
    assert search_topk(loaded, "北京", 2) == search_topk(index, "北京", 2)


def test_load_rejects_bad_magic(tmp_path):
    (tmp_path / "bad.urbm").write_bytes(b"NOPE" + b"\0" * 60)
    with pytest.raises(ValueError):
        load_index(tmp_path / "bad.urbm")


words = st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=6).map(" ".join)


@given(st.lists(words, min_size=1, max_size=8), words)
def test_adding_a_document_keeps_other_tf(texts, extra):
    index = build_index(enumerate(texts))
    before = {t: dict(p) for t, p in index.postings.items()}
    index.add(len(texts), extra)
    for term, tfs in before.items():
        after = dict(index.postings[term])
        assert all(after[d] == tf for d, tf in tfs.items())


@given(st.lists(words, min_size=1, max_size=8), words)
def test_search_is_deterministic_and_ordered(texts, query):
    index = build_index(enumerate(texts))
    hits = search_topk(index, query, 10)
    assert hits == search_topk(build_index(enumerate(texts)), query, 10)
    assert all((a.score, -a.doc_id) > (b.score, -b.doc_id) for a, b in zip(hits, hits[1:]))
