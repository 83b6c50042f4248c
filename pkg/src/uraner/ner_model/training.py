"""Training harness: AdamW with linear warmup-decay, batch schedules, upsampling, MSF."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import TAG_TO_ID, TAGS, EntitySpan, Sentence, bio_decode
from ..retrieval import ContextBundle, tokenize_text
from .crf import crf_nll_tensor, crf_viterbi
from .model import MODES, ModelConfig, ModelParams, Vocab, Weights, fit_bundle, forward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    mode: str = "post"
    epochs: int = 20
    batch_size: int = 16
    batch_schedule: list[int] = field(default_factory=list)  # per-epoch batch sizes, overrides batch_size
    lr: float = 2e-3
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    trans_lr_scale: float = 50.0  # CRF transitions step this many times faster than the encoder
    max_steps: int | None = None
    seed: int = 1
    dropout: float = 0.1
    use_dropout: bool = False
    upsample: dict[str, int] = field(default_factory=dict)
    d: int = 64
    layers: int = 2
    heads: int = 2
    max_len: int = 512
    vocab_size: int = 8192

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, layers=self.layers, heads=self.heads, max_len=self.max_len)

    def batch_size_for(self, epoch: int) -> int:
        if self.batch_schedule:
            return self.batch_schedule[min(epoch, len(self.batch_schedule) - 1)]
        return self.batch_size


@dataclass
class TrainResult:
    params: ModelParams
    log: list[tuple[int, float, float]]
    epoch_losses: list[float]
    diverged: bool = False
    initial_params: ModelParams | None = None

    def write_log(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr"])
            for step, loss, lr in self.log:
                writer.writerow([step, repr(loss), repr(lr)])


class AdamW:
    """Decoupled weight decay; vectors (biases, layer-norm) are not decayed."""

    def __init__(self, arrays: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for k in sorted(arrays):
            g = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.eps)
            if arrays[k].ndim >= 2 and k != "trans":
                update = update + cfg.weight_decay * arrays[k]
            arrays[k] -= lr * (cfg.trans_lr_scale if k == "trans" else 1.0) * update


def warmup_decay(step: int, total: int, peak: float, warmup_frac: float) -> float:
    """Linear warmup to ``peak`` then linear decay to zero; ``step`` is 0-based."""
    warm = max(1, int(round(total * warmup_frac)))
    if step < warm:
        return peak * (step + 1) / warm
    return peak * max(0.0, (total - step) / max(1, total - warm))


def tag_ids(tags: Sequence[str]) -> list[int]:
    return [TAG_TO_ID[t] for t in tags]


def build_vocab(corpus, bundles, max_size: int, extra_streams=None) -> Vocab:
    streams = [s.tokens for s, _ in corpus]
    for b in bundles or ():
        streams.extend(b.contexts)
    streams.extend(extra_streams or ())
    return Vocab.build(streams, max_size=max_size)


def kb_token_streams(doc_texts, entities) -> list[list[str]]:
    """Token sequences of KB documents and entity records, for ``train(vocab_streams=...)``."""
    streams = [tokenize_text(t) for t in doc_texts]
    streams += [tokenize_text(e.index_text() + " " + " ".join(e.types)) for e in entities]
    return streams


def _empty_bundle(sentence: Sentence) -> ContextBundle:
    return ContextBundle(query=sentence)


def _examples(corpus, bundles, groups, cfg: TrainConfig) -> list[int]:
    order = []
    for i in range(len(corpus)):
        factor = cfg.upsample.get(groups[i], 1) if groups else 1
        order.extend([i] * max(1, int(factor)))
    return order


def _epoch_batches(n_examples: int, cfg: TrainConfig, rng) -> list:
    batches = []
    epoch = 0
    while True:
        perm = rng.permutation(n_examples)
        bs = cfg.batch_size_for(epoch)
        batches.extend([(epoch, perm[i:i + bs]) for i in range(0, n_examples, bs)])
        epoch += 1
        if epoch >= cfg.epochs:
            break
    return batches


def example_loss(weights: Weights, mode: str, bundle: ContextBundle, gold: Sequence[int]):
    emissions = forward(weights, mode, bundle)
    return crf_nll_tensor(emissions, weights.t["trans"], gold)


def train(
    cfg: TrainConfig,
    corpus: Sequence[tuple[Sentence, Sequence[str]]],
    bundles: Sequence[ContextBundle] | None = None,
    init: ModelParams | None = None,
    groups: Sequence[str] | None = None,
    vocab_streams: Sequence[Sequence[str]] | None = None,
) -> TrainResult:
    """Train a CRF tagger for ``cfg.mode`` and return the final-step parameters.

    ``groups`` names the sub-corpus of each sentence for upsampling. With
    ``init`` (multi-stage fine-tuning) the vocabulary and every encoder
    array are copied from the earlier stage; emission and transition layers
    start fresh. ``vocab_streams`` are extra token sequences (typically the
    knowledge-base text) whose pieces join the vocabulary.
    """
    if bundles is None:
        bundles = [_empty_bundle(s) for s, _ in corpus]
    if len(bundles) != len(corpus):
        raise ValueError(f"{len(bundles)} bundles for {len(corpus)} sentences")
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        params = ModelParams.init(init.config, init.vocab, seed=cfg.seed)
        for name in init.encoder_names():
            params.arrays[name] = init.arrays[name].copy()
    else:
        vocab = build_vocab(corpus, bundles if cfg.mode != "baseline" else None, cfg.vocab_size,
                            vocab_streams)
        params = ModelParams.init(cfg.model_config(), vocab, seed=cfg.seed)
    initial = params.copy()
    max_len = params.config.max_len
    fitted = [fit_bundle(b, params.vocab, max_len, cfg.mode) for b in bundles]
    golds = [tag_ids(tags) for _, tags in corpus]

    order = _examples(corpus, bundles, groups, cfg)
    batches = _epoch_batches(len(order), cfg, rng)
    total = len(batches) if cfg.max_steps is None else min(cfg.max_steps, len(batches))
    optimizer = AdamW(params.arrays, cfg)
    drop_rng = np.random.default_rng(cfg.seed + 1) if cfg.use_dropout else None

    log: list[tuple[int, float, float]] = []
    epoch_sums: dict[int, list[float]] = {}
    diverged = False
    for step in range(total):
        epoch, batch = batches[step]
        lr = warmup_decay(step, total, cfg.lr, cfg.warmup_frac)
        weights = Weights(params, requires_grad=True,
                          dropout=cfg.dropout if cfg.use_dropout else 0.0, rng=drop_rng)
        batch_loss = 0.0
        for j in batch:
            idx = order[j]
            loss = example_loss(weights, cfg.mode, fitted[idx], golds[idx])
            loss.backward(1.0 / len(batch))
            batch_loss += float(loss.data) / len(batch)
        if not math.isfinite(batch_loss):
            logger.error("loss became non-finite at step %d; keeping last finite parameters", step)
            diverged = True
            break
        grads = weights.grads()
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if cfg.clip_norm and norm > cfg.clip_norm:
            grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
        backup = params.copy()
        optimizer.step(params.arrays, grads, lr)
        if not params.is_finite():
            logger.error("parameters became non-finite at step %d", step)
            params = backup
            diverged = True
            break
        log.append((step, batch_loss, lr))
        epoch_sums.setdefault(epoch, []).append(batch_loss)
    epoch_losses = [float(np.mean(epoch_sums[e])) for e in sorted(epoch_sums)]
    return TrainResult(params, log, epoch_losses, diverged, initial)


def predict(params: ModelParams, mode: str, bundles: Sequence[ContextBundle]) -> list[list[EntitySpan]]:
    weights = Weights(params)
    out = []
    trans = params.arrays["trans"]
    for bundle in bundles:
        fitted = fit_bundle(bundle, params.vocab, params.config.max_len, mode)
        emissions = forward(weights, mode, fitted).data
        path = crf_viterbi(emissions, trans)
        out.append(bio_decode([TAGS[i] for i in path]))
    return out
