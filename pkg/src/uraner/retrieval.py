"""TEXT2TEXT / TEXT2ENT / ENT2ENT retrieval and context-bundle assembly."""

from __future__ import annotations

import json
import logging
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import EntitySpan, Sentence
from .kb_store import EntityLookup, KbEntity, normalize_surface, types_with_fallback
from .sparse_index import InvertedIndex, build_index, search_topk, tokenize_for_index

logger = logging.getLogger(__name__)

BUNDLE_VERSION = 1
DEFAULT_SLICE_LIMIT = 384
MIN_SLICE_LIMIT = 8

_CONTEXT_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize_text(text: str) -> list[str]:
    """Split retrieved text into word and punctuation tokens, keeping case."""
    return _CONTEXT_TOKEN.findall(text)


def _norm_tokens(tokens: Iterable[str]) -> tuple[str, ...]:
    return tuple(t for t in (normalize_surface(tok) for tok in tokens) if t)


def _find_all(haystack: Sequence[str], needle: Sequence[str]) -> list[int]:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return []
    first = needle[0]
    return [i for i in range(len(haystack) - n + 1)
            if haystack[i] == first and tuple(haystack[i:i + n]) == tuple(needle)]


# ---------------------------------------------------------------------------
# TEXT2TEXT


@dataclass
class DocumentIndex:
    index: InvertedIndex
    texts: Mapping[int, str]


def text2text(docs: DocumentIndex, sentence: Sentence, k: int) -> list[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not docs.index.doc_len:
        return []
    hits = search_topk(docs.index, " ".join(sentence.tokens), k)
    return [docs.texts[hit.doc_id] for hit in hits]


# ---------------------------------------------------------------------------
# TEXT2ENT


@dataclass
class EntityIndex:
    """BM25 index over ``label + aliases + description``; doc id = position in ``entities``."""

    index: InvertedIndex
    entities: list[KbEntity]

    @classmethod
    def build(cls, entities: Iterable[KbEntity], language: str = "en") -> "EntityIndex":
        entities = sorted(entities, key=lambda e: e.qid)
        index = build_index(((i, e.index_text()) for i, e in enumerate(entities)), language)
        return cls(index, entities)


def text2ent_sparse(entity_index: EntityIndex, sentence: Sentence, k: int, max_iters: int) -> list[str]:
    """Iterative BM25 entity retrieval with masking of matched surfaces.

    Each round retrieves the top-k entities for the current query. A retrieved
    entity whose label or alias occurs in the query contributes the matched
    surface, and those query terms are removed before the next round; other
    retrieved entities contribute their label. The loop stops after
    ``max_iters`` rounds or when a round matches nothing.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    language = sentence.language
    query = tokenize_for_index(" ".join(sentence.tokens), language)
    candidates: dict[str, str] = {}
    for _ in range(max_iters):
        if not query:
            break
        hits = search_topk(entity_index.index, " ".join(query), k)
        if not hits:
            break
        matched_any = False
        for hit in hits:
            entity = entity_index.entities[hit.doc_id]
            matched_surface = None
            for surface in entity.surfaces:
                terms = tokenize_for_index(surface, language)
                starts = _find_all(query, terms)
                if not starts:
                    continue
                matched_surface = matched_surface or " ".join(terms)
                keep = [True] * len(query)
                for s in starts:
                    for j in range(s, s + len(terms)):
                        keep[j] = False
                query = [t for t, kept in zip(query, keep) if kept]
            surface = matched_surface or entity.label
            key = normalize_surface(surface)
            if key not in candidates:
                candidates[key] = surface
            matched_any = matched_any or matched_surface is not None
        if not matched_any:
            break
    return list(candidates.values())


# ---------------------------------------------------------------------------
# dense TEXT2ENT path


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedTrigramEmbedder:
    """Bag of hashed character trigrams, L2-normalized.

    Hashing uses CRC32 so vectors are stable across processes.
    """

    def __init__(self, dim: int = 512):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        padded = f" {normalize_surface(text)} "
        vec = np.zeros(self.dim)
        for i in range(len(padded) - 2):
            vec[zlib.crc32(padded[i:i + 3].encode("utf-8")) % self.dim] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


class DenseEntityIndex:
    def __init__(self, embedder: Embedder, entities: Iterable[KbEntity]):
        self.embedder = embedder
        self.entities = sorted(entities, key=lambda e: e.qid)
        vectors = [embedder.embed(e.label) for e in self.entities]
        self.vectors = np.vstack(vectors) if vectors else np.zeros((0, embedder.dim))

    def scores(self, query_vec: np.ndarray) -> np.ndarray:
        if query_vec.shape != (self.vectors.shape[1],):
            raise ValueError(
                f"query dimension {query_vec.shape} does not match index dimension {self.vectors.shape[1]}"
            )
        norms = np.linalg.norm(self.vectors, axis=1) * np.linalg.norm(query_vec)
        dots = self.vectors @ query_vec
        return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def dense_retrieve(dense_index: DenseEntityIndex, sentence: Sentence, k: int) -> list[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    query_vec = dense_index.embedder.embed(" ".join(sentence.tokens))
    scores = dense_index.scores(query_vec)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    return [dense_index.entities[i].label for i in order]


# ---------------------------------------------------------------------------
# ENT2ENT


def ent2ent(
    lookup: EntityLookup,
    candidates: Sequence[str],
    language: str = "en",
    english: EntityLookup | None = None,
) -> list[tuple[str, list[str], str]]:
    """Type and describe each candidate surface; unmatched candidates are dropped.

    When a surface maps to several qids their types are merged in qid order
    and the first non-empty description is used.
    """
    if language == "en":
        english = None
    out = []
    seen = set()
    for surface in candidates:
        key = normalize_surface(surface)
        if key in seen:
            continue
        seen.add(key)
        matches = types_with_fallback(surface, lookup, english)
        if not matches:
            continue
        types: list[str] = []
        description = ""
        for _, qid_types, qid_desc in matches:
            types.extend(t for t in qid_types if t not in types)
            description = description or qid_desc
        out.append((surface, types, description))
    return out


# ---------------------------------------------------------------------------
# bundles


@dataclass
class Anchor:
    context_index: int
    start: int
    end: int
    surface: str

    def to_json(self) -> list:
        return [self.context_index, self.start, self.end, self.surface]


@dataclass
class ContextBundle:
    query: Sentence
    primary_context: list[str] = field(default_factory=list)
    extra_contexts: list[list[str]] = field(default_factory=list)
    anchors: list[Anchor] = field(default_factory=list)
    provenance: list[list[str]] = field(default_factory=list)
    source_runs: list[list] = field(default_factory=list)
    candidates: list[str] = field(default_factory=list)
    slice_limit: int = DEFAULT_SLICE_LIMIT
    retrieved: list[dict] = field(default_factory=list)

    @property
    def contexts(self) -> list[list[str]]:
        return [self.primary_context] + self.extra_contexts

    @property
    def m(self) -> int:
        return len(self.extra_contexts)

    def stream(self) -> list[str]:
        return [tok for ctx in self.contexts for tok in ctx]

    def to_json(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "query": list(self.query.tokens),
            "language": self.query.language,
            "contexts": self.contexts,
            "anchors": [a.to_json() for a in self.anchors],
            "provenance": self.provenance,
            "source_runs": self.source_runs,
            "candidates": self.candidates,
            "slice_limit": self.slice_limit,
            "retrieved": self.retrieved,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ContextBundle":
        if data.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {data.get('version')!r}")
        contexts = data["contexts"]
        return cls(
            query=Sentence(tuple(data["query"]), data["language"]),
            primary_context=list(contexts[0]),
            extra_contexts=[list(c) for c in contexts[1:]],
            anchors=[Anchor(*a) for a in data["anchors"]],
            provenance=[list(p) for p in data["provenance"]],
            source_runs=[list(r) for r in data["source_runs"]],
            candidates=list(data["candidates"]),
            slice_limit=data["slice_limit"],
            retrieved=list(data.get("retrieved", [])),
        )


def splice_segment(surface: str, types: Sequence[str]) -> list[str]:
    """Tokens of ``surface (type1, type2)``; bare surface when untyped."""
    tokens = tokenize_text(surface)
    if not types:
        return tokens
    tokens.append("(")
    for i, t in enumerate(types):
        if i:
            tokens.append(",")
        tokens.extend(tokenize_text(t))
    tokens.append(")")
    return tokens


def _find_anchors(slices: list[list[str]], surfaces: Sequence[str]) -> list[Anchor]:
    anchors = []
    targets = []
    for surface in dict.fromkeys(surfaces):
        needle = _norm_tokens(tokenize_text(surface))
        if needle and needle not in [t for t, _ in targets]:
            targets.append((needle, " ".join(needle)))
    for ci, tokens in enumerate(slices):
        normed = [normalize_surface(t) for t in tokens]
        for needle, surface in targets:
            for s in _find_all(normed, needle):
                anchors.append(Anchor(ci, s, s + len(needle), surface))
    anchors.sort(key=lambda a: (a.context_index, a.start, a.end, a.surface))
    return anchors


def slice_stream(stream: list, slice_limit: int) -> list[list]:
    if slice_limit < MIN_SLICE_LIMIT:
        raise ValueError(f"slice_limit must be >= {MIN_SLICE_LIMIT}")
    slices = [stream[i:i + slice_limit] for i in range(0, len(stream), slice_limit)]
    return slices or [[]]


def _runs(sources: Sequence[str]) -> list[list]:
    runs: list[list] = []
    for src in sources:
        if runs and runs[-1][0] == src:
            runs[-1][1] += 1
        else:
            runs.append([src, 1])
    return runs


def _unrun(runs) -> list[str]:
    return [src for src, count in runs for _ in range(count)]


def _bundle_from_stream(sentence, stream, sources, candidates, slice_limit, retrieved):
    slices = slice_stream(stream, slice_limit)
    provenance = [list(dict.fromkeys(s)) for s in slice_stream(list(sources), slice_limit)]
    return ContextBundle(
        query=sentence,
        primary_context=slices[0],
        extra_contexts=slices[1:],
        anchors=_find_anchors(slices, candidates),
        provenance=provenance,
        source_runs=_runs(sources),
        candidates=list(candidates),
        slice_limit=slice_limit,
        retrieved=retrieved,
    )


def assemble_bundle(
    sentence: Sentence,
    text_contexts: Sequence[str],
    ent_results: Sequence[tuple],
    slice_limit: int = DEFAULT_SLICE_LIMIT,
    entity_first: bool = False,
    retrieved: list[dict] | None = None,
) -> ContextBundle:
    """Concatenate retrieved text and entity splices, then cut into slices.

    ``ent_results`` holds ``(surface, types, ...)`` tuples; entries with empty
    types are spliced as bare surfaces. The first slice is the concatenation
    context, the rest feed the infusion passes.
    """
    text_tokens, text_src = [], []
    for text in text_contexts:
        toks = tokenize_text(text)
        text_tokens += toks
        text_src += ["text2text"] * len(toks)
    ent_tokens, ent_src = [], []
    for item in ent_results:
        surface, types = item[0], item[1]
        seg = splice_segment(surface, types)
        ent_tokens += seg
        ent_src += ["ent2ent" if types else "text2ent"] * len(seg)
    if entity_first:
        stream, sources = ent_tokens + text_tokens, ent_src + text_src
    else:
        stream, sources = text_tokens + ent_tokens, text_src + ent_src
    candidates = [item[0] for item in ent_results]
    return _bundle_from_stream(sentence, stream, sources, candidates, slice_limit, retrieved or [])


def truncate_bundle(bundle: ContextBundle, length: int) -> ContextBundle:
    """Keep the first ``length`` context tokens (0 gives the no-context bundle)."""
    length = max(length, 0)
    stream = bundle.stream()[:length]
    sources = _unrun(bundle.source_runs)[:length]
    return _bundle_from_stream(bundle.query, stream, sources, bundle.candidates,
                               bundle.slice_limit, bundle.retrieved)


def write_bundles(path, bundles: Iterable[ContextBundle]) -> None:
    lines = [json.dumps(b.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for b in bundles]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_bundles(path) -> list[ContextBundle]:
    with Path(path).open(encoding="utf-8") as fh:
        return [ContextBundle.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# end-to-end retriever


@dataclass
class RetrievalConfig:
    text2text: bool = True
    text2ent: bool = True
    ent2ent: bool = True
    dense: bool = False
    k_text: int = 16
    k_entity: int = 4
    k_dense: int = 4
    max_iters: int = 3
    slice_limit: int = DEFAULT_SLICE_LIMIT
    entity_first: bool = False


@dataclass
class Retriever:
    config: RetrievalConfig
    documents: DocumentIndex | None = None
    entity_index: EntityIndex | None = None
    lookup: EntityLookup | None = None
    english_lookup: EntityLookup | None = None
    dense_index: DenseEntityIndex | None = None

    def bundle(self, sentence: Sentence) -> ContextBundle:
        cfg = self.config
        query_text = " ".join(sentence.tokens)
        retrieved = []
        texts = []
        if cfg.text2text and self.documents is not None:
            texts = text2text(self.documents, sentence, cfg.k_text)
            retrieved += [{"strategy": "text2text", "query": query_text, "result": t} for t in texts]
        candidates: list[str] = []
        if cfg.text2ent and self.entity_index is not None:
            candidates += text2ent_sparse(self.entity_index, sentence, cfg.k_entity, cfg.max_iters)
        if cfg.dense and self.dense_index is not None:
            candidates += dense_retrieve(self.dense_index, sentence, cfg.k_dense)
        unique: dict[str, str] = {}
        for c in candidates:
            unique.setdefault(normalize_surface(c), c)
        candidates = list(unique.values())
        retrieved += [{"strategy": "text2ent", "query": query_text, "result": c} for c in candidates]
        items = [(c, []) for c in candidates]
        if cfg.ent2ent and self.lookup is not None and candidates:
            typed = {normalize_surface(s): (s, types) for s, types, _ in
                     ent2ent(self.lookup, candidates, sentence.language, self.english_lookup)}
            items = [typed.get(normalize_surface(c), (c, [])) for c in candidates]
            for surface, types in typed.values():
                retrieved.append({"strategy": "ent2ent", "query": surface,
                                  "result": " ".join(splice_segment(surface, types))})
        return assemble_bundle(sentence, texts, items, cfg.slice_limit, cfg.entity_first, retrieved)


# ---------------------------------------------------------------------------
# coverage analysis


def _span_covered(bundle: ContextBundle, span: EntitySpan) -> bool:
    needle = _norm_tokens(bundle.query.tokens[span.start:span.end])
    if not needle:
        return False
    for ctx in bundle.contexts:
        if _find_all([normalize_surface(t) for t in ctx], needle):
            return True
    return False


def _check_aligned(bundles, gold):
    if len(bundles) != len(gold):
        raise ValueError(f"{len(bundles)} bundles vs {len(gold)} gold sentences")


def span_coverage_flags(bundles: Sequence[ContextBundle], gold: Sequence[Sequence[EntitySpan]]) -> list[list[bool]]:
    _check_aligned(bundles, gold)
    return [[_span_covered(b, s) for s in spans] for b, spans in zip(bundles, gold)]


def entity_coverage(bundles: Sequence[ContextBundle], gold: Sequence[Sequence[EntitySpan]]) -> float:
    flags = [f for row in span_coverage_flags(bundles, gold) for f in row]
    return sum(flags) / len(flags) if flags else 0.0


def split_in_out(bundles: Sequence[ContextBundle], gold: Sequence[Sequence[EntitySpan]]) -> tuple[list[int], list[int]]:
    """Sentence indices split by whether every gold span is covered by the context.

    A sentence without gold spans counts as in-context.
    """
    in_set, out_set = [], []
    for i, row in enumerate(span_coverage_flags(bundles, gold)):
        (in_set if all(row) else out_set).append(i)
    return in_set, out_set
