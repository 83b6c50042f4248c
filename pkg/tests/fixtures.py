"""Small hand-written knowledge bases shared by several test modules."""

import json
import math
import random

HUDSON_DOCS = [
    {"id": 1, "title": "Deal W. Hudson",
     "text": "Deal Wyatt Hudson is an American writer. In 1995 Hudson became publisher of the Crisis magazine "
             "and held the post until 2011."},
    {"id": 2, "title": "Crisis (magazine)",
     "text": "Crisis is a Catholic magazine founded in 1982 that publishes essays on religion and culture."},
    {"id": 3, "title": "Hudson River",
     "text": "The Hudson River flows from the Adirondack Mountains to New York Bay."},
    {"id": 4, "title": "Publishing", "text": "A publisher prepares and distributes books and magazines."},
]

HUDSON_ENTITIES = [
    {"qid": "Q1", "label": "Deal W. Hudson", "aliases": ["Deal Wyatt Hudson", "Deal Hudson"],
     "description": "Hudson is the former publisher of a Catholic magazine", "instance_of": ["human"]},
    {"qid": "Q2", "label": "Crisis", "aliases": ["Crisis Magazine"], "description": "American monthly magazine",
     "instance_of": ["magazine"], "subclass_of": ["periodical"]},
    {"qid": "Q3", "label": "Hudson River", "aliases": ["Hudson"], "description": "river in New York",
     "instance_of": ["river"]},
    {"qid": "Q4", "label": "Untyped Thing", "aliases": [], "description": ""},
]


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def bm25_oracle(docs, query, k1=1.2, b=0.75):
    """Straight-line BM25 over whitespace tokens: {doc_id: score} for docs sharing a term."""
    n = len(docs)
    lengths = {d: len(text.split()) for d, text in docs.items()}
    avgdl = sum(lengths.values()) / n
    out = {}
    for term in dict.fromkeys(query.split()):
        df = sum(1 for text in docs.values() if term in text.split())
        if df == 0:
            continue
        idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        for d, text in docs.items():
            tf = text.split().count(term)
            if tf:
                out[d] = out.get(d, 0.0) + idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * lengths[d] / avgdl))
    return out


def random_corpus(seed, n_docs, vocab_size=30, max_len=25):
    rng = random.Random(seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    docs = {}
    for i in range(n_docs):
        doc_id = rng.randrange(1, 10 * n_docs)
        while doc_id in docs:
            doc_id += 1
        # a skewed draw so that some terms are frequent and some rare
        docs[doc_id] = " ".join(vocab[min(int(rng.expovariate(0.15)), vocab_size - 1)]
                                for _ in range(rng.randint(1, max_len)))
    queries = [" ".join(rng.sample(vocab, rng.randint(1, 4))) for _ in range(10)]
    return docs, queries


BM25_CORPORA = [(0, 8), (1, 40), (2, 100)]  # (seed, n_docs)


WORDS = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lam", "mu"]


def tiny_model(seed, d=8, layers=1, heads=2, max_len=64):
    """Small model with every array randomized so no gradient is structurally zero."""
    import numpy as np

    from uraner.ner_model import ModelConfig, ModelParams, Vocab

    vocab = Vocab.build([WORDS], max_size=300)
    params = ModelParams.init(ModelConfig(d=d, layers=layers, heads=heads, max_len=max_len), vocab, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for name, arr in params.arrays.items():
        if name.endswith("_g"):
            arr += rng.normal(0, 0.1, arr.shape)
        elif arr.ndim == 1 or name == "trans":
            arr += rng.normal(0, 0.3, arr.shape)
    return params


def tiny_bundle(seed, n=4, m=2, slice_limit=8, anchors=True):
    """A query of ``n`` tokens with ``m`` extra context slices (m + 1 slices in total)."""
    from uraner.core import Sentence
    from uraner.retrieval import assemble_bundle

    rng = random.Random(seed)
    query = Sentence(tuple(rng.choice(WORDS) for _ in range(n)))
    length = slice_limit * m + rng.randint(1, slice_limit)
    tokens = [rng.choice(WORDS) for _ in range(length)]
    candidates = [(rng.choice(WORDS), [])] if anchors else []
    text = " ".join(tokens[:length - len(candidates)])
    return assemble_bundle(query, [text], candidates, slice_limit=slice_limit)


def finite_difference_check(params, loss_fn, n_samples, seed, eps=1e-4):
    """Compare analytic and central-difference gradients at randomly drawn parameter entries.

    Returns a list of (name, index, analytic, numeric) tuples.
    """
    import numpy as np

    from uraner.ner_model import Weights

    weights = Weights(params, requires_grad=True)
    loss_fn(weights).backward()
    grads = weights.grads()
    # embedding rows the input never touches have a structural zero gradient; skip them
    candidates = []
    for name in sorted(params.arrays):
        arr = params.arrays[name]
        if name in ("tok_emb", "pos_emb"):
            rows = np.flatnonzero(np.abs(grads[name]).sum(axis=1) > 0)
            candidates += [(name, (int(r), c)) for r in rows for c in range(arr.shape[1])]
        else:
            candidates += [(name, idx) for idx in np.ndindex(arr.shape)]
    rng = np.random.default_rng(seed)
    out = []
    for pick in rng.choice(len(candidates), size=n_samples, replace=False):
        name, idx = candidates[int(pick)]
        arr = params.arrays[name]
        original = arr[idx]
        arr[idx] = original + eps
        plus = float(loss_fn(Weights(params)).data)
        arr[idx] = original - eps
        minus = float(loss_fn(Weights(params)).data)
        arr[idx] = original
        out.append((name, idx, float(grads[name][idx]), (plus - minus) / (2 * eps)))
    return out


def relative_error(analytic, numeric, floor=1e-7):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def brute_force_crf(emissions, transitions):
    """(log Z, best path) by enumerating every tag path; ties go to the lexicographically smallest reversed path."""
    import itertools

    n, T = emissions.shape
    scores = {}
    for path in itertools.product(range(T), repeat=n):
        s = transitions[T, path[0]] + transitions[path[-1], T + 1]
        s += sum(emissions[i, t] for i, t in enumerate(path))
        s += sum(transitions[a, b] for a, b in zip(path, path[1:]))
        scores[path] = s
    values = list(scores.values())
    top = max(values)
    log_z = top + math.log(sum(math.exp(v - top) for v in values))
    best = min((p for p, v in scores.items() if v == top), key=lambda p: p[::-1])
    return log_z, list(best)


def vote_oracle(predictions, m):
    """Exhaustive voting oracle.

    Counts votes per distinct span, admits spans with more than half the
    votes, then scores every non-overlapping subset of the admitted spans by
    its membership pattern along the priority order (votes desc, length desc,
    start asc, canonical label) and returns the best one.
    """
    import itertools

    from uraner.core import FINE_LABELS, COARSE_LABELS

    canon = list(FINE_LABELS) + [c for c in COARSE_LABELS if c not in FINE_LABELS]
    votes = {}
    for spans in predictions:
        for s in set(spans):
            votes[s] = votes.get(s, 0) + 1
    admitted = [s for s, v in votes.items() if v > m / 2]
    admitted.sort(key=lambda s: (-votes[s], -(s.end - s.start), s.start, canon.index(s.label)))
    best, best_pattern = [], None
    for r in range(len(admitted) + 1):
        for subset in itertools.combinations(range(len(admitted)), r):
            chosen = [admitted[i] for i in subset]
            if any(a.start < b.end and b.start < a.end for a, b in itertools.combinations(chosen, 2)):
                continue
            pattern = tuple(i in subset for i in range(len(admitted)))
            if best_pattern is None or pattern > best_pattern:
                best, best_pattern = chosen, pattern
    return sorted(best, key=lambda s: (s.start, s.end))


def random_vote_instance(rng, max_spans=6, ms=(3, 4, 5), length=8):
    """m model predictions drawn from a pool of at most ``max_spans`` candidate spans."""
    from uraner.core import EntitySpan, FINE_LABELS

    m = rng.choice(ms)
    pool = []
    while len(pool) < rng.randint(1, max_spans):
        start = rng.randrange(length)
        span = EntitySpan(start, rng.randint(start + 1, min(length, start + 4)), rng.choice(FINE_LABELS[:4]))
        if span not in pool:
            pool.append(span)
    predictions = [[s for s in pool if rng.random() < 0.6] for _ in range(m)]
    return predictions, m


def random_spans(rng, length=10, labels=None):
    """Non-overlapping random spans over a sentence of ``length`` tokens."""
    from uraner.core import EntitySpan, FINE_LABELS

    labels = labels or FINE_LABELS
    spans, pos = [], 0
    while pos < length:
        pos += rng.randint(0, 3)
        if pos >= length:
            break
        end = min(length, pos + rng.randint(1, 3))
        spans.append(EntitySpan(pos, end, rng.choice(labels)))
        pos = end
    return spans


def random_gold_pred(rng, n_sentences=5, labels=None):
    """Gold spans plus a prediction that keeps, relabels, shifts or drops each span."""
    from uraner.core import EntitySpan, FINE_LABELS

    labels = labels or FINE_LABELS
    gold, pred = [], []
    for _ in range(n_sentences):
        g = random_spans(rng, labels=labels)
        p = []
        for s in g:
            r = rng.random()
            if r < 0.4:
                p.append(s)
            elif r < 0.7:
                p.append(EntitySpan(s.start, s.end, rng.choice(labels)))
            elif r < 0.85 and s.end - s.start > 1:
                p.append(EntitySpan(s.start, s.end - 1, s.label))
        gold.append(g)
        pred.append(p)
    return gold, pred


PIPELINE = ("ingest", "index", "retrieve", "train", "predict", "ensemble", "evaluate", "analyze")


def small_fixture(out, seeds=(1, 2, 3), n_train=12, n_test=6, steps=8):
    """A synthetic world plus a config shrunk so the whole pipeline runs in seconds."""
    from uraner.experiments import write_synthetic_fixture

    config_path = write_synthetic_fixture(out, seed=0, n_train=n_train, n_test=n_test, steps=steps,
                                          seeds=list(seeds))
    config = json.loads(config_path.read_text())
    config["model"].update(d=16, layers=1, heads=2, max_len=128)
    config["analysis"]["sweep_lengths"] = [0, 16]
    config_path.write_text(json.dumps(config, indent=2, sort_keys=True))
    return config_path


def run_pipeline(config_path, jobs=1, stages=PIPELINE):
    from uraner.cli import main

    for stage in stages:
        code = main(["--config", str(config_path), "--jobs", str(jobs), stage])
        assert code == 0, f"stage {stage} exited with {code}"


def snapshot(root):
    """Relative path -> bytes for every file under ``root``."""
    from pathlib import Path

    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
