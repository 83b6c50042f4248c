"""Label taxonomy, sentences, BIO codec and column-format corpus I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


COARSE_TO_FINE: dict[str, tuple[str, ...]] = {
    "LOC": ("Facility", "OtherLOC", "HumanSettlement", "Station"),
    "CW": ("VisualWork", "MusicalWork", "WrittenWork", "ArtWork", "Software"),
    "GRP": (
        "MusicalGRP",
        "PublicCORP",
        "PrivateCORP",
        "AerospaceManufacturer",
        "SportsGRP",
        "CarManufacturer",
        "ORG",
    ),
    "PER": (
        "Scientist",
        "Artist",
        "Athlete",
        "Politician",
        "Cleric",
        "SportsManager",
        "OtherPER",
    ),
    "PROD": ("Clothing", "Vehicle", "Food", "Drink", "OtherPROD"),
    "MED": (
        "Medication/Vaccine",
        "MedicalProcedure",
        "AnatomicalStructure",
        "Symptom",
        "Disease",
    ),
}


@dataclass(frozen=True)
class Taxonomy:
    coarse_labels: tuple[str, ...]
    fine_labels: tuple[str, ...]
    fine_to_coarse: dict

    @classmethod
    def default(cls) -> "Taxonomy":
        fine_to_coarse = {}
        for coarse, children in COARSE_TO_FINE.items():
            for fine in children:
                fine_to_coarse[fine] = coarse
        return cls(
            coarse_labels=tuple(COARSE_TO_FINE),
            fine_labels=tuple(fine_to_coarse),
            fine_to_coarse=fine_to_coarse,
        )

    def label_rank(self, label: str) -> int:
        """Canonical position of a fine or coarse label (unknown labels sort last)."""
        try:
            return _RANK[label]
        except KeyError:
            return len(_RANK)


TAXONOMY = Taxonomy.default()
FINE_LABELS = TAXONOMY.fine_labels
COARSE_LABELS = TAXONOMY.coarse_labels
_RANK = {label: i for i, label in enumerate(FINE_LABELS)}
_RANK.update({label: len(FINE_LABELS) + i for i, label in enumerate(COARSE_LABELS)})
_KNOWN_LABELS = frozenset(FINE_LABELS) | frozenset(COARSE_LABELS)

# Tag inventory used by the CRF: index 0 is O, then B-/I- pairs in canonical label order.
TAGS: tuple[str, ...] = ("O",) + tuple(
    f"{prefix}-{label}" for label in FINE_LABELS for prefix in ("B", "I")
)
TAG_TO_ID = {tag: i for i, tag in enumerate(TAGS)}


def project_coarse(label: str) -> str:
    try:
        return TAXONOMY.fine_to_coarse[label]
    except KeyError:
        raise ValueError(f"unknown fine label {label!r}") from None


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    language: str = "en"

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("sentence must have at least one token")
        if any(tok == "" for tok in self.tokens):
            raise ValueError("empty token in sentence")

    def __len__(self) -> int:
        return len(self.tokens)

    def surface(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start:end])


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Token span ``[start, end)`` with a label.

    Labels are validated against the taxonomy; coarse labels are accepted so
    that projected spans can reuse the same type.
    """

    start: int
    end: int
    label: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span bounds [{self.start}, {self.end})")
        if self.label not in _KNOWN_LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "EntitySpan") -> bool:
        return self.start < other.end and other.start < self.end

    @property
    def boundary(self) -> tuple[int, int]:
        return (self.start, self.end)


TagSequence = list  # list[str] of "O" / "B-<label>" / "I-<label>"


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, sep, label = tag.partition("-")
    if not sep or prefix not in ("B", "I") or label not in _KNOWN_LABELS:
        raise ValueError(f"malformed or unknown tag {tag!r}")
    return prefix, label


def bio_encode(spans: Iterable[EntitySpan], length: int) -> list[str]:
    ordered = sorted(spans)
    for a, b in zip(ordered, ordered[1:]):
        if a.overlaps(b):
            raise ValueError(f"overlapping spans {a} and {b}")
    tags = ["O"] * length
    for span in ordered:
        if span.end > length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        tags[span.start] = f"B-{span.label}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.label}"
    return tags


def bio_decode(tags: Sequence[str]) -> list[EntitySpan]:
    """Decode BIO tags into spans; a stray ``I-X`` opens a new span of X."""
    spans = []
    start = label = None
    for i, tag in enumerate(tags):
        prefix, tag_label = _split_tag(tag)
        continues = prefix == "I" and label == tag_label
        if label is not None and not continues:
            spans.append(EntitySpan(start, i, label))
            start = label = None
        if prefix != "O" and not continues:
            start, label = i, tag_label
    if label is not None:
        spans.append(EntitySpan(start, len(tags), label))
    return spans


# ---------------------------------------------------------------------------
# Column corpus files


def read_corpus(path, language: str = "en") -> list[tuple[Sentence, list[str]]]:
    """Read a tab/space separated column file.

    Two-column lines are ``token TAG``; four-column lines are
    ``token _ _ TAG``. Lines starting with ``# id`` are skipped and blank
    lines separate sentences.
    """
    path = Path(path)
    corpus = []
    tokens: list[str] = []
    tags: list[str] = []
    width = None
    lineno = 0

    def flush(lineno):
        nonlocal tokens, tags, width
        if tokens:
            if len(tokens) != len(tags):
                raise ValueError(f"{path}:{lineno}: token/tag length mismatch")
            corpus.append((Sentence(tuple(tokens), language), tags))
        tokens, tags, width = [], [], None

    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.startswith("# id"):
                continue
            if not line.strip():
                flush(lineno)
                continue
            cols = line.split("\t") if "\t" in line else line.split()
            if len(cols) not in (2, 4):
                raise ValueError(f"{path}:{lineno}: expected 2 or 4 columns, got {len(cols)}")
            if width is not None and len(cols) != width:
                raise ValueError(f"{path}:{lineno}: ragged columns within sentence")
            width = len(cols)
            try:
                _split_tag(cols[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            tokens.append(cols[0])
            tags.append(cols[-1])
        flush(lineno)
    return corpus


def write_corpus(path, corpus: Iterable[tuple[Sentence, Sequence[str]]]) -> None:
    """Write the normalized two-column form (``token<TAB>tag``)."""
    lines = []
    for sentence, tags in corpus:
        if len(sentence) != len(tags):
            raise ValueError("token/tag length mismatch")
        for token, tag in zip(sentence.tokens, tags):
            lines.append(f"{token}\t{tag}\n")
        lines.append("\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def corpus_spans(corpus) -> list[list[EntitySpan]]:
    return [bio_decode(tags) for _, tags in corpus]
