import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fixtures import brute_force_crf
from uraner.ner_model import crf_log_partition, crf_marginals, crf_nll, crf_nll_tensor, crf_viterbi, path_score
from uraner.ner_model import tensor as tn
from uraner.ner_model.tensor import Tensor


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


OPS = {
    "matmul": lambda a, b: tn.matmul(a, b),
    "add_broadcast": lambda a, b: (a + b[0]) * b,
    "softmax": lambda a, b: tn.softmax(a) * b,
    "gelu": lambda a, b: tn.gelu(a) * b,
    "layer_norm": lambda a, b: tn.layer_norm(a, b[0], b[1]),
    "stack_max": lambda a, b: tn.stack_max([a, b]),
    "concat": lambda a, b: tn.concat([a, b]) * tn.concat([b, a]),
    "mean_rows": lambda a, b: tn.mean_rows(a * b),
    "transpose": lambda a, b: tn.transpose(a, (1, 0)) @ b,
    "getitem": lambda a, b: a[1:] * b[:-1],
    "take_rows": lambda a, b: tn.take_rows(a, [2, 0, 2]) * b,
    "reshape": lambda a, b: tn.reshape(a, (-1,)) * tn.reshape(b, (-1,)),
    "scale_neg_sub": lambda a, b: tn.scale(a, 3.0) - b,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    weights = rng.normal(size=OPS[name](Tensor(a0), Tensor(b0)).shape)

    def loss(a, b):
        return float((OPS[name](Tensor(a), Tensor(b)).data * weights).sum())

    a, b = Tensor(a0.copy(), requires_grad=True), Tensor(b0.copy(), requires_grad=True)
    out = OPS[name](a, b)
    out.backward(weights)
    np.testing.assert_allclose(a.grad, numeric_grad(lambda x: loss(x, b0), a0.copy()), atol=1e-7)
    np.testing.assert_allclose(b.grad, numeric_grad(lambda x: loss(a0, x), b0.copy()), atol=1e-7)


def test_dropout_mask_scales_and_passes_gradient():
    x = Tensor(np.ones((50, 4)), requires_grad=True)
    y = tn.dropout(x, 0.5, np.random.default_rng(0))
    assert set(np.unique(y.data)) == {0.0, 2.0}
    y.backward(np.ones((50, 4)))
    np.testing.assert_array_equal(x.grad, y.data)
    assert tn.dropout(x, 0.5, None) is x


def test_stack_max_gradient_goes_to_earliest_tie():
    a, b = Tensor([1.0, 2.0], requires_grad=True), Tensor([1.0, 3.0], requires_grad=True)
    tn.stack_max([a, b]).backward(np.ones(2))
    assert a.grad.tolist() == [1.0, 0.0] and b.grad.tolist() == [0.0, 1.0]


def test_shared_node_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x
    y.backward()
    assert x.grad.tolist() == [5.0]


def test_uniform_crf():
    e, t = np.zeros((1, 2)), np.zeros((4, 4))
    assert crf_log_partition(e, t) == pytest.approx(math.log(2), abs=1e-12)
    assert crf_nll(e, t, [0]) == pytest.approx(math.log(2), abs=1e-12)
    assert crf_nll(e, t, [1]) == pytest.approx(math.log(2), abs=1e-12)


def test_logz_matches_enumeration_3x3():
    rng = np.random.default_rng(3)
    e, t = rng.normal(size=(3, 3)), rng.normal(size=(5, 5))
    log_z, best = brute_force_crf(e, t)
    assert len(list(itertools.product(range(3), repeat=3))) == 27
    assert abs(crf_log_partition(e, t) - log_z) <= 1e-9
    assert crf_viterbi(e, t) == best


def test_viterbi_argmax_without_transitions():
    e = np.array([[0.0, 5.0, 1.0], [3.0, 0.0, 0.0], [0.0, 0.0, 9.0]])
    assert crf_viterbi(e, np.zeros((5, 5))) == [1, 0, 2]


def test_viterbi_ties_choose_lowest_index():
    assert crf_viterbi(np.zeros((3, 4)), np.zeros((6, 6))) == [0, 0, 0]


def test_crf_rejects_bad_input():
    with pytest.raises(ValueError):
        crf_log_partition(np.array([[np.nan, 0.0]]), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        crf_log_partition(np.zeros((0, 2)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        crf_viterbi(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        crf_nll(np.zeros((2, 2)), np.zeros((4, 4)), [0])


instances = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))


@given(instances)
def test_probabilities_sum_to_one(inst):
    n, T, seed = inst
    rng = np.random.default_rng(seed)
    e, t = rng.normal(size=(n, T)) * 2, rng.normal(size=(T + 2, T + 2))
    total = sum(math.exp(-crf_nll(e, t, list(p))) for p in itertools.product(range(T), repeat=n))
    assert abs(total - 1.0) <= 1e-9


@given(instances)
def test_marginals_are_distributions(inst):
    n, T, seed = inst
    rng = np.random.default_rng(seed)
    e, t = rng.normal(size=(n, T)), rng.normal(size=(T + 2, T + 2))
    unary, pair, _ = crf_marginals(e, t)
    np.testing.assert_allclose(unary.sum(axis=1), 1.0, atol=1e-12)
    assert pair.sum() == pytest.approx(n - 1, abs=1e-9)
    best = crf_viterbi(e, t)
    assert path_score(e, t, best) == pytest.approx(brute_force_crf(e, t)[0] - crf_nll(e, t, best), abs=1e-9)


def test_nll_tensor_gradient():
    rng = np.random.default_rng(5)
    e0, t0 = rng.normal(size=(4, 3)), rng.normal(size=(5, 5))
    tags = [2, 0, 1, 1]
    e, t = Tensor(e0.copy(), requires_grad=True), Tensor(t0.copy(), requires_grad=True)
    loss = crf_nll_tensor(e, t, tags)
    assert float(loss.data) == pytest.approx(crf_nll(e0, t0, tags), abs=1e-12)
    loss.backward()
    np.testing.assert_allclose(e.grad, numeric_grad(lambda x: crf_nll(x, t0, tags), e0.copy()), atol=1e-7)
    np.testing.assert_allclose(t.grad, numeric_grad(lambda x: crf_nll(e0, x, tags), t0.copy()), atol=1e-7)
