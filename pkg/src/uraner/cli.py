"""Batch command line: ingest, index, retrieve, train, predict, ensemble, evaluate, analyze.

Every stage reads the artifacts of earlier stages from the directories named
in the config and writes its own outputs next to a dump of the effective
config (``<stage>.config.json``). Re-running a stage with the same inputs
rewrites byte-identical files.

Exit codes: 0 success, 1 bad input data, 2 bad config or usage, 3 missing
upstream artifact.
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps matrix products bit-reproducible
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config
from .core import EntitySpan, Sentence, bio_encode, corpus_spans, read_corpus, write_corpus
from .ensemble import vote
from .evaluation import (entity_f1, context_length_sweep, in_out_report, iou_by_strategy, iou_histogram,
                         write_histogram_csv)
from .kb_store import EntityLookup, KbStore
from .ner_model import load_params, predict, save_params, train
from .ner_model.training import kb_token_streams
from .retrieval import (ContextBundle, DenseEntityIndex, DocumentIndex, EntityIndex, HashedTrigramEmbedder,
                        Retriever, RetrievalConfig, entity_coverage, read_bundles, write_bundles)
from .sparse_index import build_index, load_index, merge_indexes, save_index

logger = logging.getLogger("uraner")

STAGES = ("ingest", "index", "retrieve", "train", "predict", "ensemble", "evaluate", "analyze")
HELP = {
    "ingest": "load KB documents and entities into the store",
    "index": "build the BM25 document and entity indexes and the entity lookup",
    "retrieve": "write context bundles for the training and test corpora",
    "train": "train one checkpoint per configured seed",
    "predict": "tag the test corpus with every checkpoint",
    "ensemble": "majority-vote several prediction corpora",
    "evaluate": "score predictions against the test corpus",
    "analyze": "coverage, in/out-of-context, IoU and context-length reports",
}


class StageError(RuntimeError):
    """An upstream artifact is missing."""


def _need(path: Path, stage: str, what: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {what} ({path}); run `uraner {stage}` first")
    return path


def _need_config(value: str, key: str) -> Path:
    if not value:
        raise ConfigError(f"config value paths.{key} is required for this stage")
    return Path(value)


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _stage_dir(cfg: PipelineConfig, attr: str, stage: str) -> Path:
    out = Path(getattr(cfg.paths, attr))
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / f"{stage}.config.json")
    return out


# ---------------------------------------------------------------------------
# parallel helpers; workers inherit module state through fork

_SHARED: dict = {}


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("fork")) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


# ---------------------------------------------------------------------------
# artifact locations


def _languages(cfg: PipelineConfig) -> list[str]:
    langs = [cfg.language]
    if cfg.paths.english_entities and cfg.language != "en":
        langs.append("en")
    return langs


def _index_paths(cfg: PipelineConfig, language: str) -> dict[str, Path]:
    root = Path(cfg.paths.index_dir)
    return {
        "documents": root / f"documents.{language}.urbm",
        "entities": root / f"entities.{language}.urbm",
        "lookup": root / f"lookup.{language}.json",
    }


def _splits(cfg: PipelineConfig) -> dict[str, str]:
    splits = dict(cfg.paths.train_corpora())
    if "test" in splits:
        raise ConfigError("training corpus groups may not be named 'test'")
    if cfg.paths.test:
        splits["test"] = cfg.paths.test
    return splits


def _bundle_path(cfg: PipelineConfig, split: str) -> Path:
    return Path(cfg.paths.bundle_dir) / f"{split}.jsonl"


def _ckpt_path(cfg: PipelineConfig, seed: int) -> Path:
    return Path(cfg.paths.checkpoint_dir) / f"model.seed{seed}.urck"


def _pred_path(cfg: PipelineConfig, name) -> Path:
    return Path(cfg.paths.prediction_dir) / f"test.{name}.conll"


# ---------------------------------------------------------------------------
# stages


def cmd_ingest(cfg: PipelineConfig, args) -> None:
    docs = _need_config(cfg.paths.kb_documents, "kb_documents")
    ents = _need_config(cfg.paths.kb_entities, "kb_entities")
    out = _stage_dir(cfg, "store_dir", "ingest")
    store = KbStore(out)
    store.clear(cfg.language)
    n_docs, skipped_docs = store.ingest_documents(docs, cfg.language)
    n_ents, skipped_ents = store.ingest_entities(ents, cfg.language)
    summary = {cfg.language: {"documents": n_docs, "documents_skipped": skipped_docs,
                              "entities": n_ents, "entities_skipped": skipped_ents}}
    if cfg.paths.english_entities and cfg.language != "en":
        store.clear("en")
        n_en, skipped_en = store.ingest_entities(cfg.paths.english_entities, "en")
        summary["en"] = {"documents": 0, "documents_skipped": 0, "entities": n_en, "entities_skipped": skipped_en}
    _dump_json(out / "ingest.summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_index(cfg: PipelineConfig, args) -> None:
    store_dir = Path(cfg.paths.store_dir)
    _need(store_dir / f"entities.{cfg.language}.jsonl", "ingest", "knowledge-base store")
    store = KbStore(store_dir)
    _stage_dir(cfg, "index_dir", "index")
    k1, b = cfg.index.bm25_k1, cfg.index.bm25_b
    shards = max(1, args.jobs)
    for language in _languages(cfg):
        paths = _index_paths(cfg, language)
        docs = [(d.doc_id, d.text) for d in store.iter_documents(language)]
        if shards > 1 and len(docs) > 1:
            parts = [docs[i::shards] for i in range(shards)]
            _SHARED["index"] = (language, k1, b)
            doc_index = merge_indexes(_map(_build_shard, parts, shards))
        else:
            doc_index = build_index(docs, language, k1=k1, b=b)
        save_index(doc_index, paths["documents"])
        entities = EntityIndex.build(store.iter_entities(language), language)
        entities.index.k1, entities.index.b = k1, b
        save_index(entities.index, paths["entities"])
        _dump_json(paths["lookup"], store.entity_lookup(language).to_json())
        print(f"{language}: indexed {doc_index.n_docs} documents and {len(entities.entities)} entities")


def _build_shard(part):
    language, k1, b = _SHARED["index"]
    return build_index(part, language, k1=k1, b=b)


def _load_retriever(cfg: PipelineConfig, rcfg: RetrievalConfig | None = None) -> Retriever:
    rcfg = rcfg or cfg.retrieval
    language = cfg.language
    paths = _index_paths(cfg, language)
    for key in ("documents", "entities", "lookup"):
        _need(paths[key], "index", f"{key} index")
    store = KbStore(cfg.paths.store_dir)
    texts = {d.doc_id: d.text for d in store.iter_documents(language)}
    documents = DocumentIndex(load_index(paths["documents"]), texts)
    entities = sorted(store.iter_entities(language), key=lambda e: e.qid)
    entity_index = EntityIndex(load_index(paths["entities"]), entities)
    lookup = EntityLookup.from_json(json.loads(paths["lookup"].read_text(encoding="utf-8")))
    english = None
    if language != "en" and cfg.paths.english_entities:
        en_path = _need(_index_paths(cfg, "en")["lookup"], "index", "English entity lookup")
        english = EntityLookup.from_json(json.loads(en_path.read_text(encoding="utf-8")))
    dense = DenseEntityIndex(HashedTrigramEmbedder(), entities) if rcfg.dense else None
    return Retriever(rcfg, documents, entity_index, lookup, english, dense)


def _read_split(cfg: PipelineConfig, path: str):
    return read_corpus(path, cfg.language)


def _retrieve_one(sentence: Sentence) -> ContextBundle:
    return _SHARED["retriever"].bundle(sentence)


def cmd_retrieve(cfg: PipelineConfig, args) -> None:
    splits = _splits(cfg)
    if not splits:
        raise ConfigError("no corpora configured (paths.train / paths.test)")
    retriever = _load_retriever(cfg)
    out = _stage_dir(cfg, "bundle_dir", "retrieve")
    _SHARED["retriever"] = retriever
    for split, path in splits.items():
        corpus = _read_split(cfg, path)
        bundles = _map(_retrieve_one, [s for s, _ in corpus], args.jobs)
        write_bundles(out / f"{split}.jsonl", bundles)
        print(f"{split}: {len(bundles)} bundles, coverage {entity_coverage(bundles, corpus_spans(corpus)):.4f}")


def _train_inputs(cfg: PipelineConfig):
    corpus, bundles, groups = [], [], []
    needs_bundles = cfg.model.mode != "baseline"
    for group, path in cfg.paths.train_corpora().items():
        part = _read_split(cfg, path)
        corpus += part
        groups += [group] * len(part)
        if needs_bundles:
            part_bundles = read_bundles(_need(_bundle_path(cfg, group), "retrieve", f"bundles for {group!r}"))
            if len(part_bundles) != len(part):
                raise StageError(f"bundles for {group!r} are stale ({len(part_bundles)} vs {len(part)} "
                                 f"sentences); run `uraner retrieve` first")
            bundles += part_bundles
        else:
            bundles += [ContextBundle(query=s) for s, _ in part]
    return corpus, bundles, groups


def _vocab_streams(cfg: PipelineConfig) -> list[list[str]] | None:
    if not cfg.vocab.include_kb or cfg.model.mode == "baseline":
        return None
    store = KbStore(cfg.paths.store_dir)
    return kb_token_streams((d.text for d in store.iter_documents(cfg.language)), store.iter_entities(cfg.language))


def _train_one(seed: int):
    cfg: PipelineConfig = _SHARED["cfg"]
    corpus, bundles, groups, streams, init = _SHARED["train"]
    tcfg = type(cfg.model).from_dict({**cfg.model.__dict__, "seed": seed})
    result = train(tcfg, corpus, bundles, init=init, groups=groups, vocab_streams=streams)
    save_params(result.params, _ckpt_path(cfg, seed), extra={"train_config": tcfg.__dict__,
                                                              "diverged": result.diverged})
    result.write_log(Path(cfg.paths.checkpoint_dir) / f"log.seed{seed}.csv")
    return seed, result.log[-1][1] if result.log else float("nan"), result.diverged


def cmd_train(cfg: PipelineConfig, args) -> None:
    if not cfg.paths.train_corpora():
        raise ConfigError("config value paths.train is required for this stage")
    corpus, bundles, groups = _train_inputs(cfg)
    streams = None
    if cfg.vocab.include_kb and cfg.model.mode != "baseline":
        _need(Path(cfg.paths.store_dir) / f"documents.{cfg.language}.jsonl", "ingest", "knowledge-base store")
        streams = _vocab_streams(cfg)
    init = None
    if cfg.paths.init_checkpoint:
        init, _ = load_params(cfg.paths.init_checkpoint)
    _stage_dir(cfg, "checkpoint_dir", "train")
    _SHARED["cfg"] = cfg
    _SHARED["train"] = (corpus, bundles, groups, streams, init)
    for seed, loss, diverged in _map(_train_one, cfg.seeds, args.jobs):
        status = "diverged, kept last finite parameters" if diverged else "ok"
        print(f"seed {seed}: final batch loss {loss:.6f} ({status})")


def _test_inputs(cfg: PipelineConfig, mode: str):
    test = _read_split(cfg, str(_need_config(cfg.paths.test, "test")))
    if mode == "baseline":
        return test, [ContextBundle(query=s) for s, _ in test]
    bundles = read_bundles(_need(_bundle_path(cfg, "test"), "retrieve", "test bundles"))
    if len(bundles) != len(test):
        raise StageError("test bundles are stale; run `uraner retrieve` first")
    return test, bundles


def _write_predictions(path: Path, sentences, spans) -> None:
    write_corpus(path, [(s, bio_encode(p, len(s))) for s, p in zip(sentences, spans)])


def _predict_one(seed: int):
    cfg = _SHARED["cfg"]
    params, extra = load_params(_ckpt_path(cfg, seed))
    mode = extra.get("train_config", {}).get("mode", cfg.model.mode)
    test, bundles = _SHARED["test"][mode]
    spans = predict(params, mode, bundles)
    _write_predictions(_pred_path(cfg, f"seed{seed}"), [s for s, _ in test], spans)
    return seed


def cmd_predict(cfg: PipelineConfig, args) -> None:
    modes = {}
    for seed in cfg.seeds:
        _, extra = load_params(_need(_ckpt_path(cfg, seed), "train", f"checkpoint for seed {seed}"))
        modes[seed] = extra.get("train_config", {}).get("mode", cfg.model.mode)
    _stage_dir(cfg, "prediction_dir", "predict")
    _SHARED["cfg"] = cfg
    _SHARED["test"] = {mode: _test_inputs(cfg, mode) for mode in sorted(set(modes.values()))}
    for seed in _map(_predict_one, cfg.seeds, args.jobs):
        print(f"seed {seed}: wrote {_pred_path(cfg, f'seed{seed}')}")


def cmd_ensemble(cfg: PipelineConfig, args) -> None:
    inputs = [Path(p) for p in args.inputs] if args.inputs else [
        _need(_pred_path(cfg, f"seed{s}"), "predict", f"predictions for seed {s}") for s in cfg.seeds]
    for p in inputs:
        _need(p, "predict", "prediction file")
    corpora = [read_corpus(p, cfg.language) for p in inputs]
    first = corpora[0]
    for path, other in zip(inputs[1:], corpora[1:]):
        if [s.tokens for s, _ in other] != [s.tokens for s, _ in first]:
            raise ValueError(f"{path} does not cover the same sentences as {inputs[0]}")
    spans = [corpus_spans(c) for c in corpora]
    voted = [vote([rows[i] for rows in spans], len(spans)) for i in range(len(first))]
    out = Path(args.out) if args.out else _pred_path(cfg, "ensemble")
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg.dump(out.parent / "ensemble.config.json")
    _write_predictions(out, [s for s, _ in first], voted)
    print(f"voted {len(inputs)} prediction files into {out}")


def _default_predictions(cfg: PipelineConfig) -> Path:
    ens = _pred_path(cfg, "ensemble")
    if ens.exists():
        return ens
    return _need(_pred_path(cfg, f"seed{cfg.seeds[0]}"), "predict", "predictions")


def _aligned(gold, pred_corpus, path) -> list[list[EntitySpan]]:
    if [s.tokens for s, _ in pred_corpus] != [s.tokens for s, _ in gold]:
        raise ValueError(f"{path} does not match the sentences of the test corpus")
    return corpus_spans(pred_corpus)


def cmd_evaluate(cfg: PipelineConfig, args) -> None:
    gold_corpus = _read_split(cfg, str(_need_config(cfg.paths.test, "test")))
    pred_path = Path(args.pred) if args.pred else _default_predictions(cfg)
    _need(pred_path, "predict", "prediction file")
    pred = _aligned(gold_corpus, read_corpus(pred_path, cfg.language), pred_path)
    gold = corpus_spans(gold_corpus)
    out = _stage_dir(cfg, "report_dir", "evaluate")
    reports = {mode: entity_f1(gold, pred, mode, coarse=True) for mode in ("micro", "macro")}
    _dump_json(out / "evaluate.json", {"predictions": pred_path.name,
                                       **{m: r.to_dict() for m, r in reports.items()}})
    table = reports["micro"].table()
    (out / "evaluate.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def _iou_summary(values: dict, bins: int) -> dict:
    return {name: {"n": len(v), "median": statistics.median(v) if v else 0.0,
                   "mean": statistics.fmean(v) if v else 0.0, "histogram": iou_histogram(v, bins)}
            for name, v in sorted(values.items())}


def cmd_analyze(cfg: PipelineConfig, args) -> None:
    test, bundles = _test_inputs(cfg, "post")
    gold = corpus_spans(test)
    pred_path = Path(args.pred) if args.pred else _default_predictions(cfg)
    pred = _aligned(test, read_corpus(_need(pred_path, "predict", "prediction file"), cfg.language), pred_path)
    out = _stage_dir(cfg, "report_dir", "analyze")
    acfg = cfg.analysis

    text_only = RetrievalConfig(**{**cfg.retrieval.__dict__, "text2ent": False, "ent2ent": False, "dense": False})
    retriever = _load_retriever(cfg, text_only)
    _SHARED["retriever"] = retriever
    text_bundles = _map(_retrieve_one, [s for s, _ in test], args.jobs)
    coverage = {"configured": entity_coverage(bundles, gold), "text2text_only": entity_coverage(text_bundles, gold)}

    io = in_out_report(gold, pred, bundles)
    iou = iou_by_strategy(bundles, acfg.strip_whitespace)
    histograms = {name: iou_histogram(v, acfg.iou_bins) for name, v in sorted(iou.items())}
    write_histogram_csv(out / "iou_histogram.csv", histograms)

    params, extra = load_params(_need(_ckpt_path(cfg, cfg.seeds[0]), "train", "checkpoint"))
    mode = extra.get("train_config", {}).get("mode", cfg.model.mode)
    sweep = context_length_sweep(lambda bs: predict(params, mode, bs), bundles, gold, acfg.sweep_lengths)

    report = {
        "predictions": pred_path.name,
        "coverage": coverage,
        "in_out": {
            "in_ratio": io.in_ratio, "out_ratio": io.out_ratio,
            "in_context_f1": io.in_context.micro_f1, "out_of_context_f1": io.out_of_context.micro_f1,
            "total_f1": io.total.micro_f1,
            "span_recall_covered": io.span_recall_covered, "span_recall_uncovered": io.span_recall_uncovered,
            "in_context": io.in_context.to_dict(), "out_of_context": io.out_of_context.to_dict(),
        },
        "iou": _iou_summary(iou, acfg.iou_bins),
        "sweep": {"mode": mode, "seed": cfg.seeds[0], "rows": [[n, f] for n, f in sweep]},
    }
    _dump_json(out / "analysis.json", report)
    lines = [
        f"coverage (configured)      {coverage['configured']:.4f}",
        f"coverage (TEXT2TEXT only)  {coverage['text2text_only']:.4f}",
        f"{'stratum':<16}{'ratio':>8}{'F1':>8}",
        f"{'in-context':<16}{io.in_ratio:>8.4f}{io.in_context.micro_f1:>8.4f}",
        f"{'out-of-context':<16}{io.out_ratio:>8.4f}{io.out_of_context.micro_f1:>8.4f}",
        f"{'total':<16}{1.0:>8.4f}{io.total.micro_f1:>8.4f}",
        f"{'strategy':<12}{'pairs':>7}{'median IoU':>12}",
    ]
    lines += [f"{name:<12}{s['n']:>7}{s['median']:>12.4f}" for name, s in report["iou"].items()]
    lines.append(f"{'context len':<12}{'F1':>8}")
    lines += [f"{n:<12}{f:>8.4f}" for n, f in sweep]
    with (out / "sweep.csv").open("w", encoding="utf-8") as fh:
        fh.write("context_length,f1\n" + "".join(f"{n},{f!r}\n" for n, f in sweep))
    text = "\n".join(lines)
    (out / "analysis.txt").write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_synth(args) -> None:
    """Write a synthetic knowledge-dependence corpus plus a ready-to-run config."""
    from .experiments import write_synthetic_fixture
    config_path = write_synthetic_fixture(args.out, seed=args.seed, n_train=args.n_train, n_test=args.n_test,
                                          steps=args.steps, seeds=args.seeds)
    print(f"wrote synthetic fixture; run e.g. `uraner --config {config_path} ingest`")


COMMANDS = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "retrieve": cmd_retrieve,
    "train": cmd_train,
    "predict": cmd_predict,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uraner", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="pipeline config (JSON); defaults apply when omitted")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes within a stage (default 1)")
    parser.add_argument("--bm25-k1", type=float, help="override index.bm25_k1")
    parser.add_argument("--bm25-b", type=float, help="override index.bm25_b")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=HELP[name])
        if name == "ensemble":
            p.add_argument("inputs", nargs="*", help="prediction corpora (default: one per configured seed)")
            p.add_argument("--out", help="output corpus (default: <prediction_dir>/test.ensemble.conll)")
        if name in ("evaluate", "analyze"):
            p.add_argument("--pred", help="prediction corpus (default: ensemble output, else first seed)")
    p = sub.add_parser("synth", help="write the synthetic demo corpus and config")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=210)
    p.add_argument("--n-test", type=int, default=90)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seeds", type=int, nargs="*", help="ensemble seeds written into the config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "synth":
            cmd_synth(args)
            return 0
        cfg = load_config(args.config)
        if args.bm25_k1 is not None:
            cfg.index.bm25_k1 = args.bm25_k1
        if args.bm25_b is not None:
            cfg.index.bm25_b = args.bm25_b
        start = time.perf_counter()
        COMMANDS[args.command](cfg, args)
        logger.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
