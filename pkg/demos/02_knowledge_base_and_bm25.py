"""
Knowledge base store and BM25 search
====================================

Documents and entity records are ingested into an append-only store. A
BM25 inverted index answers keyword queries over the documents, and the
entity lookup maps surface strings to ids and types.
"""

import json
import tempfile
from pathlib import Path

from uraner.kb_store import KbStore, types_with_fallback
from uraner.sparse_index import build_index, search_topk, tokenize_for_index

documents = [
    {"id": 1, "title": "Deal W. Hudson", "text": "Deal Wyatt Hudson is an American writer. "
                                               "In 1995 Hudson became publisher of the Crisis magazine."},
    {"id": 2, "title": "Crisis", "text": "Crisis is a Catholic magazine founded in 1982."},
    {"id": 3, "title": "Hudson River", "text": "The Hudson River flows to New York Bay."},
]
entities = [
    {"qid": "Q1", "label": "Deal W. Hudson", "aliases": ["Deal Hudson"], "instance_of": ["human"],
     "description": "American publisher"},
    {"qid": "Q2", "label": "Crisis", "instance_of": ["magazine"], "subclass_of": ["periodical"]},
    {"qid": "Q3", "label": "Hudson River", "aliases": ["Hudson"], "instance_of": ["river"]},
]

work = Path(tempfile.mkdtemp())
(work / "docs.jsonl").write_text("".join(json.dumps(d) + "\n" for d in documents))
(work / "ents.jsonl").write_text("".join(json.dumps(e) + "\n" for e in entities))

store = KbStore(work / "store")
print("ingested (documents, skipped):", store.ingest_documents(work / "docs.jsonl"))
print("ingested (entities, skipped):", store.ingest_entities(work / "ents.jsonl"))

# BM25 with the usual k1 = 1.2, b = 0.75; ties go to the smaller doc id
index = build_index((d.doc_id, d.text) for d in store.iter_documents())
for hit in search_topk(index, "Hudson publisher magazine", k=3):
    print(f"  doc {hit.doc_id}  score {hit.score:.4f}  {store.get_document(hit.doc_id).title}")

# tokenization is Unicode-aware; Han characters index one by one
print(tokenize_for_index("Hudson, 1995!"), tokenize_for_index("北京大学", "zh"))

# exact normalized surface lookup; types are the union of instance_of and subclass_of
lookup = store.entity_lookup()
print("'crisis' ->", types_with_fallback("crisis", lookup))
print("'Hudson' ->", types_with_fallback("Hudson", lookup))
