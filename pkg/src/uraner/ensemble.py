"""Majority voting over span predictions from several models."""

from __future__ import annotations

from collections import Counter
from typing import Sequence

from .core import TAXONOMY, EntitySpan, Sentence


def vote_table(predictions: Sequence[Sequence[EntitySpan]]) -> Counter:
    table: Counter = Counter()
    for spans in predictions:
        table.update(set(spans))
    return table


def priority_key(span: EntitySpan, votes: int):
    """More votes first, then longer spans, then earlier start, then canonical label order."""
    return (-votes, -(span.end - span.start), span.start, TAXONOMY.label_rank(span.label))


def vote(predictions: Sequence[Sequence[EntitySpan]], m: int | None = None) -> list[EntitySpan]:
    """Keep spans voted by more than half of the ``m`` models, resolving overlaps greedily."""
    if m is None:
        m = len(predictions)
    if m < 1:
        raise ValueError("need at least one model")
    if len(predictions) != m:
        raise ValueError(f"expected predictions from {m} models, got {len(predictions)}")
    table = vote_table(predictions)
    admitted = [s for s, c in table.items() if 2 * c > m]
    admitted.sort(key=lambda s: priority_key(s, table[s]))
    kept: list[EntitySpan] = []
    for span in admitted:
        if not any(span.overlaps(k) for k in kept):
            kept.append(span)
    return sorted(kept, key=lambda s: (s.start, s.end))


def vote_corpus(corpora: Sequence[Sequence[tuple[Sentence, Sequence[EntitySpan]]]]) -> list[tuple[Sentence, list[EntitySpan]]]:
    """Vote sentence by sentence over ``m`` prediction corpora of identical sentences."""
    if not corpora:
        raise ValueError("need at least one prediction corpus")
    n = len(corpora[0])
    for j, corpus in enumerate(corpora[1:], start=1):
        if len(corpus) != n:
            raise ValueError(f"corpus {j} has {len(corpus)} sentences, expected {n}")
    out = []
    for i in range(n):
        sentence = corpora[0][i][0]
        for j, corpus in enumerate(corpora[1:], start=1):
            if corpus[i][0].tokens != sentence.tokens:
                raise ValueError(f"sentence {i} differs between corpus 0 and corpus {j}")
        out.append((sentence, vote([c[i][1] for c in corpora])))
    return out
