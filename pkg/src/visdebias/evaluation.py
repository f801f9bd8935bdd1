"""Answer matching, classification metrics, confidence bins and bias probes."""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .calibration import score_candidates
from .errors import BadParam, NotBinary
from .sources import DEGENERATE, Variant, VisualContext, degrade_visual

_TRAILING = string.punctuation + string.whitespace


def normalize_answer(text: str) -> str:
    return text.strip().casefold().rstrip(_TRAILING)


def match_answer(predicted: str, gold: str) -> bool:
    return normalize_answer(predicted) == normalize_answer(gold)


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    predicted: str
    gold: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise BadParam(f"confidence must lie in [0, 1], got {self.confidence!r}")

    @property
    def correct(self) -> bool:
        return match_answer(self.predicted, self.gold)


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    positive_label: str
    counts: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "positive_label": self.positive_label,
            "counts": self.counts,
            "warnings": self.warnings,
        }


def f1_score(precision: float, recall: float) -> float:
    denom = precision + recall
    return 2 * precision * recall / denom if denom > 0 else 0.0


def accuracy(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise BadParam("no records")
    return math.fsum(r.correct for r in records) / len(records)


def classification_metrics(records: Sequence[EvalRecord], positive_label: str) -> MetricReport:
    """Binary confusion-matrix metrics; labels compared after normalization."""
    if not records:
        raise BadParam("no records")
    pos = normalize_answer(positive_label)
    labels = {normalize_answer(r.gold) for r in records} | {normalize_answer(r.predicted) for r in records}
    if len(labels | {pos}) > 2:
        raise NotBinary(f"precision/recall need a binary label space, got {sorted(labels)}")
    tp = fp = fn = tn = 0
    for r in records:
        pred_pos = normalize_answer(r.predicted) == pos
        gold_pos = normalize_answer(r.gold) == pos
        if pred_pos and gold_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif gold_pos:
            fn += 1
        else:
            tn += 1
    warnings = []
    if tp + fp == 0:
        warnings.append("precision undefined (no positive predictions); reported as 0")
    if tp + fn == 0:
        warnings.append("recall undefined (no positive gold labels); reported as 0")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricReport(
        accuracy=(tp + tn) / len(records),
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        positive_label=positive_label,
        counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        warnings=warnings,
    )


@dataclass
class BinReport:
    edges: list[float]
    counts: list[int]
    correct: list[int]
    accuracy: list[float | None]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def overall_accuracy(self) -> float:
        return sum(self.correct) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {"edges": self.edges, "counts": self.counts, "correct": self.correct, "accuracy": self.accuracy}

    def to_csv(self) -> str:
        rows = ["bin,lower,upper,count,correct,accuracy"]
        for i, (n, c, a) in enumerate(zip(self.counts, self.correct, self.accuracy)):
            rows.append(f"{i},{self.edges[i]!r},{self.edges[i + 1]!r},{n},{c},{'' if a is None else repr(a)}")
        return "\n".join(rows) + "\n"


def bin_index(confidence: float, bin_count: int) -> int:
    """Equal-width bins ``[i/n, (i+1)/n)``; the top bin also takes 1.0."""
    return min(int(math.floor(confidence * bin_count)), bin_count - 1)


def confidence_bins(records: Iterable[EvalRecord], bin_count: int = 10) -> BinReport:
    if bin_count < 1:
        raise BadParam("bin_count must be >= 1")
    counts = [0] * bin_count
    correct = [0] * bin_count
    for r in records:
        i = bin_index(r.confidence, bin_count)
        counts[i] += 1
        correct[i] += r.correct
    return BinReport(
        edges=[i / bin_count for i in range(bin_count + 1)],
        counts=counts,
        correct=correct,
        accuracy=[c / n if n else None for c, n in zip(correct, counts)],
    )


@dataclass
class ProbeRow:
    variant: str
    rank: int
    answer: str
    probability: float


def probe_report(source, prompts, variants=None, top_n: int = 15, global_seed: int = 0) -> dict[str, list[ProbeRow]]:
    """Average candidate distribution under each degenerate input, ranked.

    Answers are keyed by their text. A prompt lacking an answer contributes 0
    to it. Ties keep first-seen order.
    """
    if top_n < 1:
        raise BadParam("top_n must be >= 1")
    if not prompts:
        raise BadParam("probe needs at least one prompt")
    variants = [Variant(v) for v in (variants or DEGENERATE)]
    report = {}
    for v in variants:
        if not v.degenerate:
            raise BadParam("probe variants must be degenerate")
        mass: dict[str, list[float]] = {}
        for prompt in prompts:
            ctx = degrade_visual(VisualContext.real(prompt.sample_id), v, global_seed)
            dist = score_candidates(source, prompt, ctx)
            for cand, p in zip(prompt.candidates, dist):
                mass.setdefault("".join(cand), []).append(float(p))
        means = [(ans, math.fsum(ps) / len(prompts)) for ans, ps in mass.items()]
        ranked = sorted(enumerate(means), key=lambda t: (-t[1][1], t[0]))[:top_n]
        report[v.value] = [ProbeRow(v.value, r + 1, ans, p) for r, (_, (ans, p)) in enumerate(ranked)]
    return report


def probe_tsv(report: dict[str, list[ProbeRow]]) -> str:
    rows = ["variant\trank\tanswer\tprobability"]
    for rows_v in report.values():
        rows.extend(f"{r.variant}\t{r.rank}\t{r.answer}\t{round(r.probability, 12)!r}" for r in rows_v)
    return "\n".join(rows) + "\n"
