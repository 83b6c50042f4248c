"""Knowledge-base storage: Wikipedia-style paragraphs and Wikidata-style entities.

Store directory layout::

    <root>/documents.<lang>.jsonl    append-only document log, one JSON record per line
    <root>/documents.<lang>.keys     rebuildable key index: ``doc_id<TAB>byte_offset`` per line
    <root>/entities.<lang>.jsonl     append-only entity log (normalized KbEntity records)
    <root>/entities.<lang>.keys      ``qid<TAB>byte_offset`` per line

The ``.keys`` files can always be regenerated from the logs with
:meth:`KbStore.rebuild_keys`.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

logger = logging.getLogger(__name__)

_WS = re.compile(r"\s+")


def normalize_surface(text: str) -> str:
    """NFKC, case-fold and collapse internal whitespace."""
    text = unicodedata.normalize("NFKC", text).casefold()
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class KbDocument:
    doc_id: int
    title: str
    text: str
    language: str = "en"

    def to_json(self) -> dict:
        return {"id": self.doc_id, "title": self.title, "text": self.text, "language": self.language}


@dataclass(frozen=True)
class KbEntity:
    qid: str
    label: str
    aliases: tuple[str, ...] = ()
    description: str = ""
    types: tuple[str, ...] = ()
    language: str = "en"

    @property
    def surfaces(self) -> tuple[str, ...]:
        return (self.label,) + tuple(self.aliases)

    def index_text(self) -> str:
        return " ".join((self.label, *self.aliases, self.description))

    def to_json(self) -> dict:
        return {
            "qid": self.qid,
            "label": self.label,
            "aliases": list(self.aliases),
            "description": self.description,
            "types": list(self.types),
            "language": self.language,
        }


class DuplicateRecordError(ValueError):
    pass


def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return list(value)


def parse_entity(record: dict, language: str) -> KbEntity | None:
    """Turn a raw entity record into a KbEntity, or None if unusable.

    Types are the union (first-seen order) of ``instance_of`` and
    ``subclass_of``; ``sub_instance_of`` is accepted as a synonym.
    """
    qid = record.get("qid")
    label = record.get("label")
    if not isinstance(qid, str) or not qid or not isinstance(label, str) or not label.strip():
        return None
    types: list[str] = []
    for key in ("instance_of", "subclass_of", "sub_instance_of", "types"):
        for value in _as_list(record.get(key)):
            if isinstance(value, str) and value and value not in types:
                types.append(value)
    aliases = tuple(a for a in _as_list(record.get("aliases")) if isinstance(a, str) and a.strip())
    return KbEntity(
        qid=qid,
        label=label,
        aliases=aliases,
        description=record.get("description") or "",
        types=tuple(types),
        language=language,
    )


def _read_jsonl(path: Path) -> Iterator[tuple[int, dict | None]]:
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                record = None
            yield lineno, record if isinstance(record, dict) else None


class KbStore:
    """On-disk store of documents and entities, one log per language."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._doc_keys: dict[str, dict[int, int]] = {}
        self._ent_keys: dict[str, dict[str, int]] = {}

    # -- paths & key index -------------------------------------------------

    def _log(self, kind: str, language: str) -> Path:
        return self.root / f"{kind}.{language}.jsonl"

    def _keys_path(self, kind: str, language: str) -> Path:
        return self.root / f"{kind}.{language}.keys"

    def languages(self, kind: str = "documents") -> list[str]:
        return sorted(p.name.split(".")[1] for p in self.root.glob(f"{kind}.*.jsonl"))

    def clear(self, language: str) -> None:
        """Drop every document and entity stored for ``language``."""
        for kind in ("documents", "entities"):
            self._log(kind, language).unlink(missing_ok=True)
            self._keys_path(kind, language).unlink(missing_ok=True)
        self._doc_keys.pop(language, None)
        self._ent_keys.pop(language, None)

    def _load_keys(self, kind: str, language: str) -> dict:
        cache = self._doc_keys if kind == "documents" else self._ent_keys
        if language in cache:
            return cache[language]
        keys = {}
        path = self._keys_path(kind, language)
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                key, offset = line.split("\t")
                keys[int(key) if kind == "documents" else key] = int(offset)
        elif self._log(kind, language).exists():
            keys = self.rebuild_keys(kind, language)
        cache[language] = keys
        return keys

    def rebuild_keys(self, kind: str, language: str) -> dict:
        keys = {}
        log = self._log(kind, language)
        offset = 0
        with log.open("rb") as fh:
            for raw in fh:
                record = json.loads(raw)
                key = record["id"] if kind == "documents" else record["qid"]
                keys[key] = offset
                offset += len(raw)
        self._write_keys(kind, language, keys)
        (self._doc_keys if kind == "documents" else self._ent_keys)[language] = keys
        return keys

    def _write_keys(self, kind, language, keys):
        lines = "".join(f"{k}\t{v}\n" for k, v in keys.items())
        self._keys_path(kind, language).write_text(lines, encoding="utf-8")

    def _append(self, kind: str, language: str, records: list[dict], key_field: str) -> None:
        keys = self._load_keys(kind, language)
        log = self._log(kind, language)
        offset = log.stat().st_size if log.exists() else 0
        with log.open("ab") as fh:
            for record in records:
                raw = (json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n").encode("utf-8")
                fh.write(raw)
                keys[record[key_field]] = offset
                offset += len(raw)
        self._write_keys(kind, language, keys)

    # -- documents ---------------------------------------------------------

    def ingest_documents(self, path, language: str = "en") -> tuple[int, int]:
        """Append records from a JSONL file of ``{id, title, text}``.

        Returns ``(ingested, skipped)``. A doc id already present in the
        store (or repeated inside the file) raises DuplicateRecordError and
        nothing from the file is written.
        """
        keys = self._load_keys("documents", language)
        seen = set()
        records = []
        skipped = 0
        for lineno, record in _read_jsonl(Path(path)):
            doc = None
            if record is not None:
                doc_id, text = record.get("id"), record.get("text")
                if isinstance(doc_id, int) and isinstance(text, str) and text.strip():
                    doc = KbDocument(doc_id, str(record.get("title") or ""), text, language)
            if doc is None:
                skipped += 1
                logger.warning("%s:%d: malformed document record skipped", path, lineno)
                continue
            if doc.doc_id in keys or doc.doc_id in seen:
                raise DuplicateRecordError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id}")
            seen.add(doc.doc_id)
            records.append(doc.to_json())
        if skipped:
            logger.warning("%s: skipped %d malformed record(s)", path, skipped)
        self._append("documents", language, records, "id")
        return len(records), skipped

    def n_documents(self, language: str = "en") -> int:
        return len(self._load_keys("documents", language))

    def iter_documents(self, language: str = "en") -> Iterator[KbDocument]:
        log = self._log("documents", language)
        if not log.exists():
            return
        for _, record in _read_jsonl(log):
            yield KbDocument(record["id"], record["title"], record["text"], record["language"])

    def get_document(self, doc_id: int, language: str = "en") -> KbDocument:
        offset = self._load_keys("documents", language)[doc_id]
        with self._log("documents", language).open("rb") as fh:
            fh.seek(offset)
            record = json.loads(fh.readline())
        return KbDocument(record["id"], record["title"], record["text"], record["language"])

    # -- entities ----------------------------------------------------------

    def ingest_entities(self, path, language: str = "en") -> tuple[int, int]:
        keys = self._load_keys("entities", language)
        seen = set()
        records = []
        skipped = 0
        for lineno, record in _read_jsonl(Path(path)):
            entity = parse_entity(record, language) if record is not None else None
            if entity is None:
                skipped += 1
                logger.warning("%s:%d: entity record without qid/label skipped", path, lineno)
                continue
            if entity.qid in keys or entity.qid in seen:
                raise DuplicateRecordError(f"{path}:{lineno}: duplicate qid {entity.qid}")
            seen.add(entity.qid)
            records.append(entity.to_json())
        self._append("entities", language, records, "qid")
        return len(records), skipped

    def iter_entities(self, language: str = "en") -> Iterator[KbEntity]:
        log = self._log("entities", language)
        if not log.exists():
            return
        for _, r in _read_jsonl(log):
            yield KbEntity(r["qid"], r["label"], tuple(r["aliases"]), r["description"],
                           tuple(r["types"]), r["language"])

    def entity_lookup(self, language: str = "en") -> "EntityLookup":
        lookup = EntityLookup()
        lookup.add_all(self.iter_entities(language))
        return lookup


@dataclass
class EntityLookup:
    """String-to-Qid and Qid-to-Types tables for one language."""

    string_to_qid: dict[str, set[str]] = field(default_factory=dict)
    qid_to_types: dict[str, list[str]] = field(default_factory=dict)
    descriptions: dict[str, str] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)

    def add(self, entity: KbEntity) -> None:
        for surface in entity.surfaces:
            key = normalize_surface(surface)
            if key:
                self.string_to_qid.setdefault(key, set()).add(entity.qid)
        self.qid_to_types[entity.qid] = list(entity.types)
        self.descriptions[entity.qid] = entity.description
        self.labels[entity.qid] = entity.label

    def add_all(self, entities) -> "EntityLookup":
        for entity in entities:
            self.add(entity)
        return self

    def lookup(self, surface: str) -> list[str]:
        return sorted(self.string_to_qid.get(normalize_surface(surface), ()))

    def to_json(self) -> dict:
        return {
            "string_to_qid": {k: sorted(v) for k, v in sorted(self.string_to_qid.items())},
            "qid_to_types": dict(sorted(self.qid_to_types.items())),
            "descriptions": dict(sorted(self.descriptions.items())),
            "labels": dict(sorted(self.labels.items())),
        }

    @classmethod
    def from_json(cls, data: dict) -> "EntityLookup":
        return cls(
            string_to_qid={k: set(v) for k, v in data["string_to_qid"].items()},
            qid_to_types={k: list(v) for k, v in data["qid_to_types"].items()},
            descriptions=dict(data.get("descriptions", {})),
            labels=dict(data.get("labels", {})),
        )


def read_entities(path, language: str = "en") -> list[KbEntity]:
    entities = []
    for lineno, record in _read_jsonl(Path(path)):
        entity = parse_entity(record, language) if record is not None else None
        if entity is None:
            logger.warning("%s:%d: entity record without qid/label skipped", path, lineno)
            continue
        entities.append(entity)
    return entities


def build_entity_lookup(path, language: str = "en") -> EntityLookup:
    return EntityLookup().add_all(read_entities(path, language))


def types_with_fallback(
    surface: str,
    lookup: EntityLookup,
    english: EntityLookup | None = None,
) -> list[tuple[str, list[str], str]]:
    """Exact normalized match of ``surface``, returning ``(qid, types, description)``.

    Qids whose types are empty in ``lookup`` borrow their English types when
    an English table is supplied. Pass ``english=None`` for English itself.
    """
    results = []
    for qid in lookup.lookup(surface):
        types = lookup.qid_to_types.get(qid, [])
        description = lookup.descriptions.get(qid, "")
        if not types and english is not None:
            types = english.qid_to_types.get(qid, [])
            if not description:
                description = english.descriptions.get(qid, "")
        results.append((qid, list(types), description))
    return results
