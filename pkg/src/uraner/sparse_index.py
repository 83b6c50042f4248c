"""BM25 inverted index.

Binary layout of a persisted index (all integers little-endian)::

    magic       4 bytes   b"URBM"
    version     uint32    currently 1
    n_docs      uint64
    n_terms     uint64
    n_postings  uint64
    k1, b       float64 x 2   defaults recorded at build time
    doc_ids     int64[n_docs]          ascending
    doc_len     int64[n_docs]          aligned with doc_ids
    terms_len   uint64                 byte length of the term blob
    terms       utf-8, terms joined by "\\n", sorted
    offsets     int64[n_terms + 1]     postings range per term
    post_doc    int64[n_postings]      doc id per posting, ascending within a term
    post_tf     int64[n_postings]
"""

from __future__ import annotations

import math
import re
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

BM25_K1 = 1.2
BM25_B = 0.75
INDEX_MAGIC = b"URBM"
INDEX_VERSION = 1

CJK_LANGUAGES = frozenset({"zh", "ja", "ko"})
_WORD = re.compile(r"\w+")


def _is_han(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0x20000 <= cp <= 0x2A6DF
        or 0xF900 <= cp <= 0xFAFF
    )


def tokenize_for_index(text: str, language: str = "en") -> list[str]:
    """NFKC + case-fold, split on word boundaries.

    For CJK languages every Han character becomes its own term; a word that
    is purely Han is replaced by its characters, a mixed word is kept and
    followed by its Han characters.
    """
    words = _WORD.findall(unicodedata.normalize("NFKC", text).casefold())
    if language not in CJK_LANGUAGES:
        return words
    terms = []
    for word in words:
        han = [ch for ch in word if _is_han(ch)]
        if han and len(han) == len(word):
            terms.extend(han)
        else:
            terms.append(word)
            terms.extend(han)
    return terms


@dataclass(frozen=True)
class ScoredHit:
    doc_id: int
    score: float
    rank: int


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    doc_len: dict[int, int] = field(default_factory=dict)
    language: str = "en"
    k1: float = BM25_K1
    b: float = BM25_B

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    @property
    def avg_doc_len(self) -> float:
        return sum(self.doc_len.values()) / len(self.doc_len) if self.doc_len else 0.0

    @property
    def doc_freq(self) -> dict[str, int]:
        return {t: len(p) for t, p in self.postings.items()}

    def add(self, doc_id: int, text: str) -> None:
        if doc_id in self.doc_len:
            raise ValueError(f"doc_id {doc_id} already indexed")
        terms = tokenize_for_index(text, self.language)
        self.doc_len[doc_id] = len(terms)
        for term, tf in Counter(terms).items():
            plist = self.postings.setdefault(term, [])
            plist.append((doc_id, tf))
            if len(plist) > 1 and plist[-2][0] > doc_id:
                plist.sort()

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def search(self, query: str, k: int, k1: float | None = None, b: float | None = None) -> list[ScoredHit]:
        return search_topk(self, query, k, k1=k1, b=b)


def build_index(docs: Iterable[tuple[int, str]], language: str = "en", shards: int = 1,
                k1: float = BM25_K1, b: float = BM25_B) -> InvertedIndex:
    """Build an index from ``(doc_id, text)`` pairs, optionally over shards merged at the end."""
    docs = list(docs)
    shards = max(1, shards)
    parts = []
    for s in range(shards):
        part = InvertedIndex(language=language, k1=k1, b=b)
        for doc_id, text in docs[s::shards]:
            part.add(doc_id, text)
        parts.append(part)
    return merge_indexes(parts) if shards > 1 else parts[0]


def merge_indexes(parts: list[InvertedIndex]) -> InvertedIndex:
    merged = InvertedIndex(language=parts[0].language, k1=parts[0].k1, b=parts[0].b)
    for part in parts:
        overlap = merged.doc_len.keys() & part.doc_len.keys()
        if overlap:
            raise ValueError(f"doc ids indexed in more than one shard: {sorted(overlap)[:5]}")
        merged.doc_len.update(part.doc_len)
        for term, plist in part.postings.items():
            merged.postings.setdefault(term, []).extend(plist)
    for plist in merged.postings.values():
        plist.sort()
    merged.doc_len = dict(sorted(merged.doc_len.items()))
    return merged


def search_topk(index: InvertedIndex, query: str, k: int,
                k1: float | None = None, b: float | None = None) -> list[ScoredHit]:
    """Top-k BM25 hits ordered by score desc, then doc_id asc.

    Each distinct query term contributes once, in first-occurrence order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    k1 = index.k1 if k1 is None else k1
    b = index.b if b is None else b
    terms = list(dict.fromkeys(tokenize_for_index(query, index.language)))
    if not terms or not index.doc_len:
        return []
    avgdl = index.avg_doc_len
    n = index.n_docs
    scores: dict[int, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for doc_id, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_len[doc_id] / avgdl)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return [ScoredHit(doc_id, score, rank) for rank, (doc_id, score) in enumerate(ranked, start=1)]


# ---------------------------------------------------------------------------
# persistence

_HEADER = struct.Struct("<4sIQQQdd")


def save_index(index: InvertedIndex, path) -> None:
    doc_ids = np.array(sorted(index.doc_len), dtype="<i8")
    doc_len = np.array([index.doc_len[d] for d in doc_ids.tolist()], dtype="<i8")
    terms = sorted(index.postings)
    offsets = [0]
    post_doc: list[int] = []
    post_tf: list[int] = []
    for term in terms:
        for doc_id, tf in index.postings[term]:
            post_doc.append(doc_id)
            post_tf.append(tf)
        offsets.append(len(post_doc))
    blob = "\n".join(terms).encode("utf-8")
    lang = index.language.encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, len(doc_ids), len(terms), len(post_doc),
                              index.k1, index.b))
        fh.write(struct.pack("<Q", len(lang)) + lang)
        fh.write(doc_ids.tobytes())
        fh.write(doc_len.tobytes())
        fh.write(struct.pack("<Q", len(blob)) + blob)
        fh.write(np.array(offsets, dtype="<i8").tobytes())
        fh.write(np.array(post_doc, dtype="<i8").tobytes())
        fh.write(np.array(post_tf, dtype="<i8").tobytes())


def load_index(path) -> InvertedIndex:
    data = Path(path).read_bytes()
    magic, version, n_docs, n_terms, n_post, k1, b = _HEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise ValueError(f"{path}: not a BM25 index file")
    if version != INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    pos = _HEADER.size

    def take_i8(count):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<i8", count=count, offset=pos)
        pos += 8 * count
        return arr.tolist()

    def take_bytes():
        nonlocal pos
        (length,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        chunk = data[pos:pos + length]
        pos += length
        return chunk

    language = take_bytes().decode("utf-8")
    doc_ids = take_i8(n_docs)
    doc_len = take_i8(n_docs)
    blob = take_bytes().decode("utf-8")
    terms = blob.split("\n") if n_terms else []
    offsets = take_i8(n_terms + 1)
    post_doc = take_i8(n_post)
    post_tf = take_i8(n_post)
    index = InvertedIndex(language=language, k1=k1, b=b)
    index.doc_len = dict(zip(doc_ids, doc_len))
    for i, term in enumerate(terms):
        lo, hi = offsets[i], offsets[i + 1]
        index.postings[term] = list(zip(post_doc[lo:hi], post_tf[lo:hi]))
    return index
