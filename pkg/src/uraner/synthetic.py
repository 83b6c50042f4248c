"""Synthetic corpora where an entity's fine type is only knowable from the KB.

Entity names are built from a shared pool of pseudo-word name parts, so no
surface token hints at the type, and sentence templates are type-neutral.
Train and test sentences mention disjoint entities, so memorizing names does
not help either. Most entities have a KB record whose types reveal the label;
a held-out group is missing from the KB and only retrievable as look-alike
distractors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import EntitySpan, Sentence, bio_encode, write_corpus

TYPE_WORDS = {
    "Artist": ("painter", "sculptor"),
    "Athlete": ("footballer", "sprinter"),
    "Politician": ("senator", "diplomat"),
    "Scientist": ("physicist", "chemist"),
}

TEMPLATES = (
    "yesterday we talked about {E} at dinner .",
    "{E} was mentioned on the radio today .",
    "my neighbour keeps a photo of {E} on the wall .",
    "everyone at the party wanted to meet {E} .",
    "the newspaper printed a long story on {E} .",
    "i still remember when {E} visited our town .",
    "they named the new cafe after {E} .",
    "a stranger asked me about {E} this morning .",
    "we watched a documentary about {E} last night .",
    "our teacher once shook hands with {E} .",
)

FILLER_DOCS = (
    "The radio station broadcast a story this morning about the new cafe in our town . "
    "Listeners called in for hours , and the host read out letters from people who had "
    "grown up on the same street . Many of them said the old bakery had been there for decades .",
    "At dinner yesterday the party talked about the local newspaper and its long story . "
    "The editor had spent months on the reporting , travelling between villages in the valley "
    "and collecting photographs from family albums that nobody had opened in years .",
    "A documentary shown last night followed a stranger who visited a small town . "
    "The film crew stayed through the winter , recording the market , the harbour and the "
    "school concert , and the final cut ran for almost two hours without narration .",
    "The teacher hung a photo on the wall of the school and everyone wanted to see it . "
    "It showed the first class to graduate from the building , standing in rows in front of "
    "the gate , and several of the children in the picture later returned as teachers .",
    "Neighbours remember the day the town named a street after the old cafe . "
    "The council voted in the spring , the sign went up in early summer , and a small crowd "
    "gathered with flowers while a band played on the square until late in the evening .",
    "The newspaper printed photos of the party and the radio mentioned it today . "
    "Organisers said more than four hundred guests attended , and the money raised will pay "
    "for repairs to the library roof and new shelves for the reading room on the ground floor .",
)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "tr", "vl")
_NUCLEI = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "n", "r", "s", "k", "l", "m", "x")


def _pseudo_words(rng, count: int, banned: set) -> list[str]:
    words: list[str] = []
    seen = set(banned)
    while len(words) < count:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_NUCLEI) for _ in range(2)) + rng.choice(_CODAS)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticEntity:
    qid: str
    first: str
    last: str
    label: str
    type_word: str
    town: str
    in_kb: bool
    has_doc: bool

    @property
    def tokens(self) -> list[str]:
        return [self.first, self.last]

    @property
    def surface(self) -> str:
        return f"{self.first} {self.last}"

    def kb_record(self) -> dict:
        return {
            "qid": self.qid,
            "label": f"{self.first.capitalize()} {self.last.capitalize()}",
            "aliases": [f"{self.first[0].upper()}. {self.last.capitalize()}"],
            "description": f"{self.type_word} born {self.town}",
            "instance_of": ["human"] if self.label else [],
            "subclass_of": [self.type_word],
        }


@dataclass
class SyntheticWorld:
    entities: list[SyntheticEntity]
    documents: list[dict]
    train: list[tuple[Sentence, list[str]]]
    test: list[tuple[Sentence, list[str]]]
    test_in_kb: list[bool] = field(default_factory=list)

    def kb_entities(self) -> list[dict]:
        return [e.kb_record() for e in self.entities if e.in_kb]

    def write(self, root) -> dict[str, Path]:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        paths = {
            "documents": root / "documents.jsonl",
            "entities": root / "entities.jsonl",
            "train": root / "train.conll",
            "test": root / "test.conll",
        }
        paths["documents"].write_text(
            "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.documents), encoding="utf-8")
        paths["entities"].write_text(
            "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.kb_entities()), encoding="utf-8")
        write_corpus(paths["train"], self.train)
        write_corpus(paths["test"], self.test)
        return paths


def make_world(
    seed: int = 0,
    n_train: int = 210,
    n_test: int = 90,
    n_kb: int = 200,
    n_out_of_kb: int = 50,
    doc_fraction: float = 0.35,
    name_pool: int = 60,
) -> SyntheticWorld:
    """Generate entities, KB records, documents and train/test corpora."""
    rng = np.random.default_rng(seed)
    template_words = {w for t in TEMPLATES for w in t.split()}
    pool = _pseudo_words(rng, name_pool, template_words)
    towns = _pseudo_words(rng, 20, template_words | set(pool))
    labels = list(TYPE_WORDS)
    n_entities = n_kb + n_out_of_kb
    names = set()
    entities = []
    while len(entities) < n_entities:
        first, last = rng.choice(pool), rng.choice(pool)
        if first == last or (first, last) in names:
            continue
        names.add((first, last))
        i = len(entities)
        label = labels[i % len(labels)]
        entities.append(SyntheticEntity(
            qid=f"Q{1000 + i}", first=str(first), last=str(last), label=label,
            type_word=str(rng.choice(TYPE_WORDS[label])), town=str(rng.choice(towns)),
            in_kb=i < n_kb, has_doc=False,
        ))
    perm = rng.permutation(n_entities)
    entities = [entities[i] for i in perm]
    for e in entities:
        e.has_doc = e.in_kb and rng.random() < doc_fraction

    # disjoint entity pools: test keeps a larger share of out-of-KB entities
    in_kb = [e for e in entities if e.in_kb]
    out_kb = [e for e in entities if not e.in_kb]
    n_test_in = int(round(0.25 * len(in_kb)))
    n_test_out = len(out_kb) // 2
    test_pool = in_kb[:n_test_in] + out_kb[:n_test_out]
    train_pool = in_kb[n_test_in:] + out_kb[n_test_out:]

    def sentences(pool_, count):
        rows, flags = [], []
        for j in range(count):
            ent = pool_[j % len(pool_)] if j < len(pool_) else pool_[int(rng.integers(len(pool_)))]
            template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
            before, after = template.split("{E}")
            left, right = before.split(), after.split()
            tokens = left + ent.tokens + right
            span = EntitySpan(len(left), len(left) + 2, ent.label)
            rows.append((Sentence(tuple(tokens)), bio_encode([span], len(tokens))))
            flags.append(ent.in_kb)
        order = rng.permutation(count)
        return [rows[i] for i in order], [flags[i] for i in order]

    train, _ = sentences(train_pool, n_train)
    test, test_in_kb = sentences(test_pool, n_test)

    documents = []
    for e in entities:
        if e.has_doc:
            name = f"{e.first.capitalize()} {e.last.capitalize()}"
            documents.append({
                "id": len(documents) + 1,
                "title": name,
                "text": f"{name} is widely known as a {e.type_word} . {name} grew up near {e.town.capitalize()} "
                        f"and later moved abroad , where the career of {name} took off . In the years that "
                        f"followed , the work of {name} drew attention from critics and admirers alike , and "
                        f"several books now describe the early life , the long journeys and the later honours "
                        f"that came with it . Friends recall a quiet person who rarely gave interviews .",
            })
    for text in FILLER_DOCS:
        documents.append({"id": len(documents) + 1, "title": "", "text": text})
    return SyntheticWorld(entities, documents, train, test, test_in_kb)
