import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uraner.core import Sentence
from uraner.ner_model import TrainConfig, predict, train, warmup_decay
from uraner.ner_model.training import _epoch_batches, _examples, build_vocab, kb_token_streams
from uraner.kb_store import KbEntity
from uraner.synthetic import make_world

SMALL = dict(d=8, layers=1, heads=2, max_len=96, batch_size=2, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return make_world(0).train[:10]


def test_zero_learning_rate_leaves_params_unchanged(corpus):
    result = train(TrainConfig(mode="baseline", epochs=1, lr=0.0, **SMALL), corpus)
    assert len(result.log) == 5
    for name, arr in result.params.arrays.items():
        assert arr.tobytes() == result.initial_params.arrays[name].tobytes(), name


def test_loss_decreases_on_memorization_fixture(corpus):
    cfg = TrainConfig(mode="baseline", epochs=10, lr=1e-2, **SMALL)
    result = train(cfg, corpus)
    assert len(result.log) == 50
    means = result.epoch_losses
    assert all(b < a for a, b in zip(means, means[1:])), means
    assert means[-1] < 0.5 * means[0]


def test_training_is_bit_reproducible(corpus):
    cfg = TrainConfig(mode="baseline", epochs=2, lr=5e-3, use_dropout=True, **SMALL)
    a, b = train(cfg, corpus), train(cfg, corpus)
    assert a.log == b.log
    for name in a.params.arrays:
        assert a.params.arrays[name].tobytes() == b.params.arrays[name].tobytes()
    other = train(TrainConfig(mode="baseline", epochs=2, lr=5e-3, use_dropout=True,
                              **{**SMALL, "seed": 4}), corpus)
    assert other.log != a.log


def test_msf_copies_encoder_and_vocab(corpus):
    stage1 = train(TrainConfig(mode="baseline", epochs=1, lr=1e-2, **SMALL), corpus[:6])
    stage2 = train(TrainConfig(mode="baseline", epochs=1, lr=1e-2, **SMALL), corpus[6:], init=stage1.params)
    assert stage2.initial_params.vocab.pieces == stage1.params.vocab.pieces
    assert stage2.initial_params.arrays["tok_emb"].tobytes() == stage1.params.arrays["tok_emb"].tobytes()
    assert stage2.initial_params.arrays["block0.wq"].tobytes() == stage1.params.arrays["block0.wq"].tobytes()
    assert not np.any(stage2.initial_params.arrays["trans"])


def test_upsampling_repeats_group_examples():
    cfg = TrainConfig(upsample={"small": 3})
    corpus = [(Sentence(("a",)), ["O"])] * 3
    assert _examples(corpus, None, ["big", "small", "big"], cfg) == [0, 1, 1, 1, 2]
    assert _examples(corpus, None, None, cfg) == [0, 1, 2]


def test_batch_schedule_grows_batches():
    cfg = TrainConfig(epochs=3, batch_schedule=[2, 4])
    batches = _epoch_batches(8, cfg, np.random.default_rng(0))
    sizes = [(e, len(b)) for e, b in batches]
    assert sizes == [(0, 2)] * 4 + [(1, 4)] * 2 + [(2, 4)] * 2
    for epoch in range(3):
        seen = sorted(int(i) for e, b in batches if e == epoch for i in b)
        assert seen == list(range(8))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_keeps_last_finite_params(corpus):
    result = train(TrainConfig(mode="baseline", epochs=1, lr=float("inf"), **SMALL), corpus)
    assert result.diverged
    assert result.params.is_finite()
    assert result.log == []


def test_config_rejects_unknown_keys_and_modes():
    with pytest.raises(ValueError, match="unknown training config keys"):
        TrainConfig.from_dict({"lr": 1e-3, "learning_rate": 1e-3})
    with pytest.raises(ValueError, match="unknown mode"):
        TrainConfig(mode="early")
    assert TrainConfig.from_dict({"epochs": 3}).epochs == 3


def test_log_csv(tmp_path, corpus):
    result = train(TrainConfig(mode="baseline", epochs=1, lr=1e-3, **SMALL), corpus)
    path = tmp_path / "log.csv"
    result.write_log(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["step", "loss", "lr"]
    assert [int(r[0]) for r in rows[1:]] == list(range(5))
    assert float(rows[1][1]) == result.log[0][1]


def test_max_steps_caps_training(corpus):
    result = train(TrainConfig(mode="baseline", epochs=5, max_steps=7, lr=1e-3, **SMALL), corpus)
    assert len(result.log) == 7


def test_bundle_count_must_match(corpus):
    from uraner.retrieval import ContextBundle

    with pytest.raises(ValueError, match="bundles"):
        train(TrainConfig(mode="raner", **SMALL), corpus, [ContextBundle(query=corpus[0][0])])


def test_predict_returns_spans_per_sentence(corpus):
    result = train(TrainConfig(mode="baseline", epochs=1, lr=1e-3, **SMALL), corpus)
    from uraner.retrieval import ContextBundle

    preds = predict(result.params, "baseline", [ContextBundle(query=s) for s, _ in corpus])
    assert len(preds) == len(corpus)
    for (s, _), spans in zip(corpus, preds):
        assert all(0 <= sp.start < sp.end <= len(s.tokens) for sp in spans)


def test_kb_streams_extend_vocabulary(corpus):
    entity = KbEntity("Q9", "Zanzibar Quill", description="A rare bird", types=("ornithologist",))
    streams = kb_token_streams(["Quill flew north"], [entity])
    vocab = build_vocab(corpus, None, 8192, streams)
    assert "ornithologist" in vocab.index and "zanzibar" in vocab.index
    assert "ornithologist" not in build_vocab(corpus, None, 8192).index


@given(st.integers(1, 200), st.floats(0.0, 0.5), st.floats(1e-5, 1.0))
def test_warmup_decay_shape(total, frac, peak):
    lrs = [warmup_decay(s, total, peak, frac) for s in range(total)]
    assert all(0.0 <= v <= peak * (1 + 1e-12) for v in lrs)
    top = lrs.index(max(lrs))
    assert all(a <= b for a, b in zip(lrs[:top], lrs[1:top + 1]))
    assert all(a >= b for a, b in zip(lrs[top:], lrs[top + 1:]))
    assert warmup_decay(total, total, peak, frac) == 0.0
