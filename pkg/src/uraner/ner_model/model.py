"""Toy transformer encoder with the four context-use architectures.

All forwards return emissions for the query tokens only (first subword
piece of each token). The query is always followed by a ``[SEP]`` piece, so
the baseline is the concatenation model with an empty context.
"""

from __future__ import annotations

import json
import logging
import re
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..core import TAGS, Sentence
from ..retrieval import ContextBundle, _find_anchors
from . import tensor as tn
from .tensor import Tensor

logger = logging.getLogger(__name__)

SEP = "[SEP]"
SPECIALS = (SEP,)
N_BYTES = 256
MAX_VOCAB = 8192
_PIECE = re.compile(r"\w+|[^\w\s]")


class ContextOverflow(ValueError):
    pass


# ---------------------------------------------------------------------------
# vocabulary


def _units(token: str) -> list[str]:
    units = _PIECE.findall(unicodedata.normalize("NFKC", token).casefold())
    return units or [token]


class Vocab:
    """Case-folded word/punctuation pieces with UTF-8 byte fallback."""

    def __init__(self, pieces: Sequence[str]):
        self.pieces = list(pieces)
        self.index = {p: i for i, p in enumerate(self.pieces)}
        self._byte0 = len(SPECIALS)
        self._cache: dict[str, tuple[int, ...]] = {}

    @classmethod
    def build(cls, token_streams: Iterable[Iterable[str]], max_size: int = MAX_VOCAB) -> "Vocab":
        counts: Counter = Counter()
        for tokens in token_streams:
            for token in tokens:
                counts.update(_units(token))
        base = list(SPECIALS) + [f"<0x{b:02X}>" for b in range(N_BYTES)]
        room = max(0, max_size - len(base))
        learned = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:room]
        return cls(base + sorted(p for p, _ in learned))

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    def token_ids(self, token: str) -> tuple[int, ...]:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        ids = []
        for unit in _units(token):
            if unit in self.index:
                ids.append(self.index[unit])
            else:
                ids.extend(self._byte0 + b for b in unit.encode("utf-8"))
        out = tuple(ids)
        self._cache[token] = out
        return out

    def encode_tokens(self, tokens: Sequence[str]) -> tuple[list[int], list[int]]:
        """Piece ids and the offset of each token's first piece."""
        ids: list[int] = []
        starts: list[int] = []
        for token in tokens:
            starts.append(len(ids))
            ids.extend(self.token_ids(token))
        return ids, starts


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelConfig:
    d: int = 64
    layers: int = 2
    heads: int = 2
    max_len: int = 512
    n_tags: int = len(TAGS)
    init_std: float = 0.02

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ModelParams:
    config: ModelConfig
    vocab: Vocab
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, vocab: Vocab, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d, T = config.d, config.n_tags
        std = config.init_std

        def w(*shape, scale=std):
            return rng.normal(0.0, scale, size=shape)

        arrays = {
            "tok_emb": w(len(vocab), d, scale=1.0 / np.sqrt(d)),
            "pos_emb": w(config.max_len, d, scale=1.0 / np.sqrt(d)),
        }
        for layer in range(config.layers):
            p = f"block{layer}."
            for name in ("wq", "wk", "wv", "wo"):
                arrays[p + name] = w(d, d, scale=1.0 / np.sqrt(d))
                arrays[p + "b" + name[1]] = np.zeros(d)
            arrays[p + "ff1"] = w(d, 4 * d, scale=1.0 / np.sqrt(d))
            arrays[p + "ff1_b"] = np.zeros(4 * d)
            arrays[p + "ff2"] = w(4 * d, d, scale=1.0 / np.sqrt(4 * d))
            arrays[p + "ff2_b"] = np.zeros(d)
            for ln in ("ln1", "ln2"):
                arrays[p + ln + "_g"] = np.ones(d)
                arrays[p + ln + "_b"] = np.zeros(d)
        arrays["emit"] = w(d, T, scale=1.0 / np.sqrt(d))
        arrays["emit_b"] = np.zeros(T)
        arrays["trans"] = np.zeros((T + 2, T + 2))
        return cls(config, vocab, arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.vocab, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def encoder_names(self) -> list[str]:
        return [k for k in self.arrays if k not in ("emit", "emit_b", "trans")]


class Weights:
    """Parameters wrapped as autodiff leaves for one forward/backward pass."""

    def __init__(self, params: ModelParams, requires_grad: bool = False,
                 dropout: float = 0.0, rng: np.random.Generator | None = None):
        self.params = params
        self.config = params.config
        self.vocab = params.vocab
        self.t = {k: Tensor(v, requires_grad=requires_grad) for k, v in params.arrays.items()}
        self.dropout = dropout
        self.rng = rng

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.t.items()}


def _weights(params) -> Weights:
    return params if isinstance(params, Weights) else Weights(params)


# ---------------------------------------------------------------------------
# encoder


@dataclass
class EncodedInput:
    """Either piece ids or pre-embedded vectors, never both."""

    ids: Sequence[int] | None = None
    vectors: Tensor | None = None
    query_len: int = 0

    def __post_init__(self):
        if (self.ids is None) == (self.vectors is None):
            raise ValueError("exactly one of ids / vectors must be given")

    @property
    def length(self) -> int:
        return len(self.ids) if self.ids is not None else self.vectors.shape[0]


def embed_ids(params, ids: Sequence[int]) -> Tensor:
    w = _weights(params)
    return tn.take_rows(w.t["tok_emb"], ids)


def encode(params, inp: EncodedInput) -> Tensor:
    """Token representations (length x d)."""
    w = _weights(params)
    cfg = w.config
    length = inp.length
    if length > cfg.max_len:
        raise ContextOverflow(f"input of {length} pieces exceeds the position limit {cfg.max_len}")
    if inp.query_len > length:
        raise ValueError("query length exceeds input length")
    x = embed_ids(w, inp.ids) if inp.ids is not None else inp.vectors
    x = x + tn.take_rows(w.t["pos_emb"], np.arange(length))
    x = tn.dropout(x, w.dropout, w.rng)
    h = cfg.heads
    dh = cfg.d // h
    for layer in range(cfg.layers):
        p = f"block{layer}."
        t = w.t

        def split(z):
            return tn.transpose(tn.reshape(z, (length, h, dh)), (1, 0, 2))

        q = split(x @ t[p + "wq"] + t[p + "bq"])
        k = split(x @ t[p + "wk"] + t[p + "bk"])
        v = split(x @ t[p + "wv"] + t[p + "bv"])
        scores = tn.scale(q @ tn.transpose(k, (0, 2, 1)), 1.0 / np.sqrt(dh))
        attn = tn.dropout(tn.softmax(scores), w.dropout, w.rng)
        ctx = tn.reshape(tn.transpose(attn @ v, (1, 0, 2)), (length, cfg.d))
        out = tn.dropout(ctx @ t[p + "wo"] + t[p + "bo"], w.dropout, w.rng)
        x = tn.layer_norm(x + out, t[p + "ln1_g"], t[p + "ln1_b"])
        ff = tn.gelu(x @ t[p + "ff1"] + t[p + "ff1_b"]) @ t[p + "ff2"] + t[p + "ff2_b"]
        x = tn.layer_norm(x + tn.dropout(ff, w.dropout, w.rng), t[p + "ln2_g"], t[p + "ln2_b"])
    return x


# ---------------------------------------------------------------------------
# architectures


def _pair_ids(w: Weights, sentence: Sentence, context: Sequence[str]):
    q_ids, starts = w.vocab.encode_tokens(sentence.tokens)
    c_ids, c_starts = w.vocab.encode_tokens(context)
    ids = q_ids + [w.vocab.sep_id] + c_ids
    return ids, len(q_ids), starts, len(q_ids) + 1, c_starts


def _check_len(w: Weights, length: int, what: str):
    if length > w.config.max_len:
        raise ContextOverflow(
            f"{what}: {length} pieces exceed the limit of {w.config.max_len}; slice contexts first"
        )


def _emit(w: Weights, h: Tensor, first_pieces: Sequence[int]) -> Tensor:
    rows = tn.take_rows(h, first_pieces)
    return rows @ w.t["emit"] + w.t["emit_b"]


def _query_states(w: Weights, sentence: Sentence, context: Sequence[str]) -> tuple[Tensor, list[int]]:
    ids, q_len, starts, _, _ = _pair_ids(w, sentence, context)
    _check_len(w, len(ids), "concatenated input")
    h = encode(w, EncodedInput(ids=ids, query_len=q_len))
    return tn.take_rows(h, np.arange(q_len)), starts


def forward_raner(params, sentence: Sentence, context: Sequence[str]) -> Tensor:
    w = _weights(params)
    h, starts = _query_states(w, sentence, context)
    return _emit(w, h, starts)


def forward_baseline(params, sentence: Sentence) -> Tensor:
    return forward_raner(params, sentence, ())


def forward_post_infusion(params, bundle) -> Tensor:
    """Elementwise max of query states over the primary pass and each extra-context pass."""
    w = _weights(params)
    states = []
    starts = None
    for ctx in [bundle.primary_context] + list(bundle.extra_contexts):
        h, starts = _query_states(w, bundle.query, ctx)
        states.append(h)
    return _emit(w, tn.stack_max(states), starts)


def anchor_vectors(params, bundle) -> tuple[Tensor | None, list[str], dict]:
    """Mean-pooled anchor vectors from the extra-context passes.

    An occurrence's vector is the mean over its pieces; a surface's row is
    the mean over its occurrences. Returns ``(V, surfaces, occurrences)``
    where ``occurrences`` maps surface to its per-occurrence vectors.
    """
    w = _weights(params)
    extra = list(bundle.extra_contexts)
    by_context: dict[int, list] = {}
    for anchor in bundle.anchors:
        if anchor.context_index >= 1:
            by_context.setdefault(anchor.context_index, []).append(anchor)
    occurrences: dict[str, list[Tensor]] = {}
    for ci in sorted(by_context):
        ids, q_len, _, offset, c_starts = _pair_ids(w, bundle.query, extra[ci - 1])
        _check_len(w, len(ids), f"extra context {ci}")
        h = encode(w, EncodedInput(ids=ids, query_len=q_len))
        ends = c_starts[1:] + [len(ids) - offset]
        for anchor in by_context[ci]:
            lo = offset + c_starts[anchor.start]
            hi = offset + ends[anchor.end - 1]
            occ = tn.mean_rows(tn.take_rows(h, np.arange(lo, hi)))
            occurrences.setdefault(anchor.surface, []).append(occ)
    surfaces = list(occurrences)
    if not surfaces:
        return None, [], {}
    rows = []
    for s in surfaces:
        occ = occurrences[s]
        row = occ[0] if len(occ) == 1 else tn.mean_rows(tn.concat([tn.reshape(o, (1, -1)) for o in occ]))
        rows.append(tn.reshape(row, (1, -1)))
    return tn.concat(rows), surfaces, occurrences


def forward_pre_infusion(params, bundle) -> Tensor:
    """Append anchor vectors to the embedded ``[x ; SEP ; x0]`` input."""
    w = _weights(params)
    V, _, _ = anchor_vectors(w, bundle)
    if V is None:
        logger.debug("no anchors in extra contexts; pre-infusion falls back to concatenation")
        return forward_raner(w, bundle.query, bundle.primary_context)
    ids, q_len, starts, _, _ = _pair_ids(w, bundle.query, bundle.primary_context)
    _check_len(w, len(ids) + V.shape[0], "pre-infusion input")
    vectors = tn.concat([embed_ids(w, ids), V])
    h = encode(w, EncodedInput(vectors=vectors, query_len=q_len))
    return _emit(w, tn.take_rows(h, np.arange(q_len)), starts)


MODES = ("baseline", "raner", "pre", "post")


def forward(params, mode: str, bundle) -> Tensor:
    if mode == "baseline":
        return forward_baseline(params, bundle.query)
    if mode == "raner":
        return forward_raner(params, bundle.query, bundle.primary_context)
    if mode == "pre":
        return forward_pre_infusion(params, bundle)
    if mode == "post":
        return forward_post_infusion(params, bundle)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def fit_bundle(bundle, vocab: Vocab, max_len: int, mode: str = "post"):
    """Drop trailing context tokens so every pass fits in ``max_len`` pieces."""
    q_pieces = sum(len(vocab.token_ids(t)) for t in bundle.query.tokens) + 1
    reserve = len({a.surface for a in bundle.anchors if a.context_index >= 1}) if mode == "pre" else 0

    def clip(ctx, budget):
        out, used = [], 0
        for tok in ctx:
            n = len(vocab.token_ids(tok))
            if used + n > budget:
                break
            out.append(tok)
            used += n
        return out

    budget = max_len - q_pieces
    contexts = [clip(bundle.primary_context, budget - reserve)] + [clip(c, budget) for c in bundle.extra_contexts]
    if all(len(a) == len(b) for a, b in zip(contexts, bundle.contexts)):
        return bundle
    anchors = _find_anchors(contexts, bundle.candidates)
    return ContextBundle(
        query=bundle.query,
        primary_context=contexts[0],
        extra_contexts=contexts[1:],
        anchors=anchors,
        provenance=bundle.provenance,
        source_runs=bundle.source_runs,
        candidates=bundle.candidates,
        slice_limit=bundle.slice_limit,
        retrieved=bundle.retrieved,
    )


# ---------------------------------------------------------------------------
# checkpoint I/O
#
# layout: b"URCK" | uint32 version | uint64 header_len | header JSON (utf-8)
#         | float64 little-endian arrays concatenated in header order

CKPT_MAGIC = b"URCK"
CKPT_VERSION = 1


def save_params(params: ModelParams, path, extra: dict | None = None) -> None:
    names = sorted(params.arrays)
    header = {
        "config": params.config.to_json(),
        "vocab": params.vocab.pieces,
        "arrays": [[n, list(params.arrays[n].shape)] for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(blob)) + blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes())


def load_params(path) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    pos = 16 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    params = ModelParams(ModelConfig(**header["config"]), Vocab(header["vocab"]), arrays)
    return params, header["extra"]
