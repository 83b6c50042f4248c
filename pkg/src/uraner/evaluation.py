"""Entity-level metrics and the retrieval analyses."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .core import TAXONOMY, EntitySpan, project_coarse
from .retrieval import span_coverage_flags, split_in_out, truncate_bundle

Spans = Sequence[Sequence[EntitySpan]]


@dataclass
class LabelScore:
    precision: float
    recall: float
    f1: float
    tp: int
    n_pred: int
    n_gold: int


@dataclass
class EvalReport:
    per_label: dict[str, LabelScore]
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_f1: float
    mention_f1: float
    typing_accuracy: float
    tp: int
    n_pred: int
    n_gold: int
    n_boundary_matched: int
    undefined: list[str] = field(default_factory=list)
    mode: str = "micro"
    coarse: "EvalReport | None" = None

    @property
    def f1(self) -> float:
        return self.micro_f1 if self.mode == "micro" else self.macro_f1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'label':<24}{'P':>8}{'R':>8}{'F1':>8}{'gold':>7}{'pred':>7}"]
        for label, s in self.per_label.items():
            lines.append(f"{label:<24}{s.precision:>8.4f}{s.recall:>8.4f}{s.f1:>8.4f}{s.n_gold:>7}{s.n_pred:>7}")
        lines.append(f"{'micro':<24}{self.micro_precision:>8.4f}{self.micro_recall:>8.4f}{self.micro_f1:>8.4f}"
                     f"{self.n_gold:>7}{self.n_pred:>7}")
        lines.append(f"{'macro F1':<24}{self.macro_f1:>24.4f}")
        lines.append(f"{'mention F1':<24}{self.mention_f1:>24.4f}")
        lines.append(f"{'typing accuracy':<24}{self.typing_accuracy:>24.4f}")
        if self.coarse is not None:
            lines.append(f"{'coarse micro F1':<24}{self.coarse.micro_f1:>24.4f}")
            lines.append(f"{'coarse macro F1':<24}{self.coarse.macro_f1:>24.4f}")
        return "\n".join(lines)


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float, list[str]]:
    undefined = []
    if n_pred:
        p = tp / n_pred
    else:
        p = 0.0
        undefined.append("precision")
    if n_gold:
        r = tp / n_gold
    else:
        r = 0.0
        undefined.append("recall")
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f, undefined


def _check(gold: Spans, pred: Spans):
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} sentences, pred has {len(pred)}")


def _counts(gold: Spans, pred: Spans):
    tp = Counter()
    n_gold = Counter()
    n_pred = Counter()
    for g, p in zip(gold, pred):
        gset = {(s.start, s.end, s.label) for s in g}
        pset = {(s.start, s.end, s.label) for s in p}
        for *_, label in gset:
            n_gold[label] += 1
        for *_, label in pset:
            n_pred[label] += 1
        for *_, label in gset & pset:
            tp[label] += 1
    return tp, n_pred, n_gold


def mention_f1(gold: Spans, pred: Spans) -> float:
    _check(gold, pred)
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred):
        gb = {s.boundary for s in g}
        pb = {s.boundary for s in p}
        tp += len(gb & pb)
        n_pred += len(pb)
        n_gold += len(gb)
    return _prf(tp, n_pred, n_gold)[2]


def _typing(gold: Spans, pred: Spans) -> tuple[int, int]:
    matched = correct = 0
    for g, p in zip(gold, pred):
        by_boundary: dict[tuple[int, int], set[str]] = {}
        for s in p:
            by_boundary.setdefault(s.boundary, set()).add(s.label)
        for s in g:
            if s.boundary in by_boundary:
                matched += 1
                correct += s.label in by_boundary[s.boundary]
    return matched, correct


def typing_accuracy(gold: Spans, pred: Spans) -> float:
    """Among gold spans whose boundaries are predicted, the fraction with the right label."""
    _check(gold, pred)
    matched, correct = _typing(gold, pred)
    return correct / matched if matched else 0.0


def entity_f1(gold: Spans, pred: Spans, mode: str = "micro", coarse: bool = False) -> EvalReport:
    """Exact-match entity scores; macro averages labels seen in gold or pred."""
    if mode not in ("micro", "macro"):
        raise ValueError("mode must be 'micro' or 'macro'")
    _check(gold, pred)
    tp, n_pred, n_gold = _counts(gold, pred)
    labels = sorted(set(n_gold) | set(n_pred), key=TAXONOMY.label_rank)
    per_label = {}
    for label in labels:
        p, r, f, _ = _prf(tp[label], n_pred[label], n_gold[label])
        per_label[label] = LabelScore(p, r, f, tp[label], n_pred[label], n_gold[label])
    total_tp, total_pred, total_gold = sum(tp.values()), sum(n_pred.values()), sum(n_gold.values())
    p, r, f, undefined = _prf(total_tp, total_pred, total_gold)
    macro = sum(s.f1 for s in per_label.values()) / len(per_label) if per_label else 0.0
    matched, correct = _typing(gold, pred)
    report = EvalReport(
        per_label=per_label,
        micro_precision=p,
        micro_recall=r,
        micro_f1=f,
        macro_f1=macro,
        mention_f1=mention_f1(gold, pred),
        typing_accuracy=correct / matched if matched else 0.0,
        tp=total_tp,
        n_pred=total_pred,
        n_gold=total_gold,
        n_boundary_matched=matched,
        undefined=undefined,
        mode=mode,
    )
    if coarse:
        report.coarse = coarse_report(gold, pred, mode)
    return report


def project_spans(spans: Spans) -> list[list[EntitySpan]]:
    """Relabel each span with its coarse parent; spans are never merged."""
    return [[EntitySpan(s.start, s.end, project_coarse(s.label)) for s in row] for row in spans]


def coarse_report(gold: Spans, pred: Spans, mode: str = "micro") -> EvalReport:
    return entity_f1(project_spans(gold), project_spans(pred), mode)


# ---------------------------------------------------------------------------
# character IoU


def char_iou(query: str, result: str, strip_whitespace: bool = False) -> float:
    """Multiset IoU over characters; repeated characters count separately."""
    if strip_whitespace:
        query = "".join(query.split())
        result = "".join(result.split())
    a, b = Counter(query), Counter(result)
    union = sum((a | b).values())
    if union == 0:
        return 1.0
    return sum((a & b).values()) / union


def iou_histogram(values: Sequence[float], bins: int = 10) -> list[int]:
    """Counts over ``bins`` equal bins on [0, 1]; right-open except the last."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts = [0] * bins
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"IoU value {v} outside [0, 1]")
        counts[min(int(math.floor(v * bins)), bins - 1)] += 1
    return counts


def write_histogram_csv(path, histograms: dict[str, list[int]]) -> None:
    bins = len(next(iter(histograms.values()))) if histograms else 0
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "bin_lo", "bin_hi", "count"])
        for name, counts in histograms.items():
            for i, c in enumerate(counts):
                writer.writerow([name, f"{i / bins:.4f}", f"{(i + 1) / bins:.4f}", c])


def iou_by_strategy(bundles, strip_whitespace: bool = False) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for bundle in bundles:
        for rec in bundle.retrieved:
            out.setdefault(rec["strategy"], []).append(
                char_iou(rec["query"], rec["result"], strip_whitespace))
    return out


# ---------------------------------------------------------------------------
# analyses


def context_length_sweep(
    predict_fn: Callable[[list], Spans],
    bundles: Sequence,
    gold: Spans,
    lengths: Sequence[int],
    mode: str = "micro",
) -> list[tuple[int, float]]:
    """F1 after truncating every bundle to each context length; 0 is the no-context point."""
    rows = []
    for length in lengths:
        truncated = [truncate_bundle(b, length) for b in bundles]
        rows.append((length, entity_f1(gold, predict_fn(truncated), mode).f1))
    return rows


@dataclass
class InOutReport:
    in_context: EvalReport
    out_of_context: EvalReport
    total: EvalReport
    in_ratio: float
    out_ratio: float
    span_recall_covered: float
    span_recall_uncovered: float

    def to_dict(self) -> dict:
        return asdict(self)


def in_out_report(gold: Spans, pred: Spans, bundles) -> InOutReport:
    """Score the in-context and out-of-context strata separately.

    Also reports recall over covered vs. uncovered gold spans (the per-span
    variant of the split).
    """
    _check(gold, pred)
    in_idx, out_idx = split_in_out(bundles, gold)
    n = len(gold)

    def sub(idx):
        return entity_f1([gold[i] for i in idx], [pred[i] for i in idx])

    flags = span_coverage_flags(bundles, gold)
    hit = {True: [0, 0], False: [0, 0]}
    for g, p, row in zip(gold, pred, flags):
        pset = {(s.start, s.end, s.label) for s in p}
        for span, covered in zip(g, row):
            hit[covered][1] += 1
            hit[covered][0] += (span.start, span.end, span.label) in pset
    return InOutReport(
        in_context=sub(in_idx),
        out_of_context=sub(out_idx),
        total=entity_f1(gold, pred),
        in_ratio=len(in_idx) / n if n else 0.0,
        out_ratio=len(out_idx) / n if n else 0.0,
        span_recall_covered=hit[True][0] / hit[True][1] if hit[True][1] else 0.0,
        span_recall_uncovered=hit[False][0] / hit[False][1] if hit[False][1] else 0.0,
    )
