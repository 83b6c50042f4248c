"""Linear-chain CRF with explicit start/stop states.

Transitions have shape ``(T + 2, T + 2)``; index ``T`` is START and
``T + 1`` is STOP. The score of a path ``y`` over emissions ``E`` (n x T) is::

    trans[START, y0] + sum_i E[i, y_i] + sum_i trans[y_{i-1}, y_i] + trans[y_{n-1}, STOP]
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def _check(emissions: np.ndarray, transitions: np.ndarray) -> tuple[int, int]:
    emissions = np.asarray(emissions)
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ValueError(f"emissions must be (n >= 1, T), got {emissions.shape}")
    n, T = emissions.shape
    if transitions.shape != (T + 2, T + 2):
        raise ValueError(f"transitions must be {(T + 2, T + 2)}, got {transitions.shape}")
    if not (np.all(np.isfinite(emissions)) and np.all(np.isfinite(transitions))):
        raise ValueError("non-finite value in CRF scores")
    return n, T


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(x - m).sum(axis=axis))


def _forward(emissions, transitions):
    n, T = emissions.shape
    inner = transitions[:T, :T]
    alpha = np.empty((n, T))
    alpha[0] = transitions[T, :T] + emissions[0]
    for i in range(1, n):
        alpha[i] = _logsumexp(alpha[i - 1][:, None] + inner, axis=0) + emissions[i]
    log_z = float(_logsumexp(alpha[-1] + transitions[:T, T + 1], axis=0))
    return alpha, log_z


def crf_log_partition(emissions, transitions) -> float:
    emissions = np.asarray(emissions, dtype=np.float64)
    transitions = np.asarray(transitions, dtype=np.float64)
    _check(emissions, transitions)
    return _forward(emissions, transitions)[1]


def path_score(emissions, transitions, tags: Sequence[int]) -> float:
    emissions = np.asarray(emissions, dtype=np.float64)
    T = emissions.shape[1]
    tags = list(tags)
    score = transitions[T, tags[0]] + transitions[tags[-1], T + 1]
    for i, tag in enumerate(tags):
        score += emissions[i, tag]
        if i:
            score += transitions[tags[i - 1], tag]
    return float(score)


def crf_nll(emissions, transitions, tags: Sequence[int]) -> float:
    emissions = np.asarray(emissions, dtype=np.float64)
    transitions = np.asarray(transitions, dtype=np.float64)
    n, _ = _check(emissions, transitions)
    if len(tags) != n:
        raise ValueError(f"{len(tags)} gold tags for {n} positions")
    return _forward(emissions, transitions)[1] - path_score(emissions, transitions, tags)


def crf_viterbi(emissions, transitions) -> list[int]:
    """Best path; among tied paths, the lowest tag index wins at the latest differing position."""
    emissions = np.asarray(emissions, dtype=np.float64)
    transitions = np.asarray(transitions, dtype=np.float64)
    n, T = _check(emissions, transitions)
    inner = transitions[:T, :T]
    delta = transitions[T, :T] + emissions[0]
    back = np.zeros((n, T), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + inner
        back[i] = cand.argmax(axis=0)
        delta = cand.max(axis=0) + emissions[i]
    last = int((delta + transitions[:T, T + 1]).argmax())
    path = [last]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    return path[::-1]


def crf_marginals(emissions, transitions):
    """Unary marginals (n x T), pairwise expected transition counts, and log Z."""
    n, T = emissions.shape
    alpha, log_z = _forward(emissions, transitions)
    inner = transitions[:T, :T]
    beta = np.empty((n, T))
    beta[-1] = transitions[:T, T + 1]
    for i in range(n - 2, -1, -1):
        beta[i] = _logsumexp(inner + (emissions[i + 1] + beta[i + 1])[None, :], axis=1)
    unary = np.exp(alpha + beta - log_z)
    pair = np.zeros((T, T))
    for i in range(1, n):
        pair += np.exp(alpha[i - 1][:, None] + inner + (emissions[i] + beta[i])[None, :] - log_z)
    return unary, pair, log_z


def crf_nll_tensor(emissions: Tensor, transitions: Tensor, tags: Sequence[int]) -> Tensor:
    """Differentiable negative log-likelihood of ``tags``."""
    e = emissions.data
    tr = transitions.data
    n, T = _check(e, tr)
    if len(tags) != n:
        raise ValueError(f"{len(tags)} gold tags for {n} positions")
    unary, pair, log_z = crf_marginals(e, tr)
    value = log_z - path_score(e, tr, tags)

    def backward(g):
        g = float(g)
        ge = unary.copy()
        ge[np.arange(n), tags] -= 1.0
        gt = np.zeros_like(tr)
        gt[:T, :T] = pair
        gt[T, :T] = unary[0]
        gt[:T, T + 1] = unary[-1]
        gt[T, tags[0]] -= 1.0
        gt[tags[-1], T + 1] -= 1.0
        for i in range(1, n):
            gt[tags[i - 1], tags[i]] -= 1.0
        return ge * g, gt * g

    return Tensor(np.array(value), parents=(emissions, transitions), backward=backward)
