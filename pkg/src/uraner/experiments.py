"""The synthetic knowledge-dependence experiment, shared by tests, demos and ``uraner synth``.

The settings below were picked so that the toy encoder can learn, within a
500-step budget, to read a candidate's types out of its retrieved context:
one TEXT2TEXT document, one TEXT2ENT candidate, the entity splice placed
before the document text, and dropout to discourage memorizing names.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import corpus_spans
from .evaluation import EvalReport, InOutReport, entity_f1, in_out_report, iou_by_strategy
from .kb_store import EntityLookup, parse_entity
from .ner_model.training import TrainConfig, kb_token_streams, predict, train
from .retrieval import DocumentIndex, EntityIndex, RetrievalConfig, Retriever, entity_coverage
from .sparse_index import build_index
from .synthetic import SyntheticWorld, make_world

SYNTH_RETRIEVAL = {"k_text": 1, "k_entity": 1, "max_iters": 2, "slice_limit": 64, "entity_first": True}
SYNTH_TRAIN = {"epochs": 100, "batch_size": 16, "max_steps": 500, "lr": 5e-3, "use_dropout": True, "seed": 1}


@dataclass
class KnowledgeResult:
    baseline: EvalReport
    post: EvalReport
    coverage_full: float
    coverage_text_only: float
    in_out: InOutReport
    iou: dict[str, list[float]]
    seconds: float
    steps: dict[str, int] = field(default_factory=dict)

    @property
    def typing_gap(self) -> float:
        return self.post.typing_accuracy - self.baseline.typing_accuracy

    def iou_medians(self) -> dict[str, float]:
        return {k: statistics.median(v) for k, v in sorted(self.iou.items())}


def synthetic_retrievers(world: SyntheticWorld, retrieval: dict | None = None) -> tuple[Retriever, Retriever]:
    """Retrievers over the world's KB: every strategy on, and TEXT2TEXT alone."""
    settings = {**SYNTH_RETRIEVAL, **(retrieval or {})}
    entities = [parse_entity(r, "en") for r in world.kb_entities()]
    lookup = EntityLookup().add_all(entities)
    docs = DocumentIndex(build_index((d["id"], d["text"]) for d in world.documents),
                         {d["id"]: d["text"] for d in world.documents})
    entity_index = EntityIndex.build(entities)
    full = Retriever(RetrievalConfig(**settings), docs, entity_index, lookup)
    text_only = Retriever(RetrievalConfig(**{**settings, "text2ent": False, "ent2ent": False}),
                          docs, entity_index, lookup)
    return full, text_only


def knowledge_experiment(world_seed: int = 0, train_settings: dict | None = None,
                         retrieval: dict | None = None) -> KnowledgeResult:
    """Train a no-retrieval baseline and a post-infusion model on the same synthetic world."""
    start = time.perf_counter()
    world = make_world(world_seed)
    full, text_only = synthetic_retrievers(world, retrieval)
    train_bundles = [full.bundle(s) for s, _ in world.train]
    test_bundles = [full.bundle(s) for s, _ in world.test]
    text_bundles = [text_only.bundle(s) for s, _ in world.test]
    gold = corpus_spans(world.test)
    entities = [parse_entity(r, "en") for r in world.kb_entities()]
    streams = kb_token_streams((d["text"] for d in world.documents), entities)

    settings = {**SYNTH_TRAIN, **(train_settings or {})}
    preds, steps = {}, {}
    for mode in ("baseline", "post"):
        result = train(TrainConfig(mode=mode, **settings), world.train, train_bundles, vocab_streams=streams)
        steps[mode] = len(result.log)
        preds[mode] = predict(result.params, mode, test_bundles)
    return KnowledgeResult(
        baseline=entity_f1(gold, preds["baseline"]),
        post=entity_f1(gold, preds["post"]),
        coverage_full=entity_coverage(test_bundles, gold),
        coverage_text_only=entity_coverage(text_bundles, gold),
        in_out=in_out_report(gold, preds["post"], test_bundles),
        iou=iou_by_strategy(test_bundles),
        seconds=time.perf_counter() - start,
        steps=steps,
    )


def write_synthetic_fixture(out, seed: int = 0, n_train: int = 210, n_test: int = 90, steps: int = 500,
                            seeds: list[int] | None = None) -> Path:
    """Write a synthetic world and a pipeline config that runs on it; returns the config path."""
    out = Path(out)
    world = make_world(seed, n_train=n_train, n_test=n_test)
    paths = world.write(out)
    config = {
        "paths": {
            "kb_documents": paths["documents"].name,
            "kb_entities": paths["entities"].name,
            "train": paths["train"].name,
            "test": paths["test"].name,
        },
        "retrieval": dict(SYNTH_RETRIEVAL),
        "model": {**SYNTH_TRAIN, "mode": "post", "max_steps": steps},
        "analysis": {"sweep_lengths": [0, 16, 32, 64]},
    }
    if seeds:
        config["ensemble"] = {"seeds": list(seeds)}
    config_path = out / "config.json"
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return config_path
