"""
Retrieval strategies and context bundles
========================================

Three retrieval strategies feed the tagger:

* TEXT2TEXT finds documents that share words with the sentence,
* TEXT2ENT finds entity records whose names match the sentence,
* ENT2ENT attaches the knowledge-base types of every candidate.

Their output is concatenated and cut into fixed-size slices. The first
slice is the concatenation context; the rest are extra contexts.
"""

from uraner.core import Sentence
from uraner.kb_store import EntityLookup, parse_entity
from uraner.retrieval import DocumentIndex, EntityIndex, RetrievalConfig, Retriever, text2ent_sparse
from uraner.sparse_index import build_index

docs = {
    1: "Deal Wyatt Hudson is an American writer . In 1995 Hudson became publisher of the Crisis magazine .",
    2: "Crisis is a Catholic magazine founded in 1982 .",
    3: "The Hudson River flows to New York Bay .",
}
records = [
    {"qid": "Q1", "label": "Deal W. Hudson", "aliases": ["Deal Hudson"], "instance_of": ["human"]},
    {"qid": "Q2", "label": "Crisis", "instance_of": ["magazine"]},
    {"qid": "Q3", "label": "Hudson River", "aliases": ["Hudson"], "instance_of": ["river"]},
]
entities = [parse_entity(r, "en") for r in records]

documents = DocumentIndex(build_index(docs.items()), docs)
entity_index = EntityIndex.build(entities)
lookup = EntityLookup().add_all(entities)

sentence = Sentence(tuple("In 1995 Deal Hudson took over Crisis .".split()))

# TEXT2ENT masks each matched name and searches again, so several entities surface
print("TEXT2ENT candidates:", text2ent_sparse(entity_index, sentence, k=2, max_iters=3))

config = RetrievalConfig(k_text=1, k_entity=2, slice_limit=12)
bundle = Retriever(config, documents, entity_index, lookup).bundle(sentence)
print("primary context:", " ".join(bundle.primary_context))
for j, ctx in enumerate(bundle.extra_contexts, start=1):
    print(f"extra context {j}:", " ".join(ctx))

# anchors are occurrences of candidate names inside the extra contexts
for anchor in bundle.anchors:
    print("anchor", anchor)

# every retrieved (query, result) pair is kept for the IoU analysis
for rec in bundle.retrieved:
    print(f"  {rec['strategy']:<10}{rec['result'][:60]}")
