"""Exhaustive decoding-configuration sweep and best-of selection.

Every sample is decoded under 49 configurations (20 temperatures, 9 top-k
values, 20 nucleus masses) plus a greedy default kept apart from the grid.
Groups never mix strategies. Oracle selection counts a sample correct when any configuration
in the group answered it correctly, which is an upper bound and not a
deployable decoder; fixed selection reports the single best configuration.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .decoding import DecodingConfig, Strategy, generate
from .errors import BadParam, DebiasError, error_record
from .evaluation import match_answer
from .sources import LogitSource, Prompt

TEMPERATURE_HUNDREDTHS = tuple(range(5, 101, 5))
TOP_K_VALUES = (1, 2, 5, 10, 20, 50, 100, 200, 500)
TOP_P_HUNDREDTHS = tuple(range(5, 101, 5))

GROUPS = ("temp", "top_k", "top_p")
GROUPINGS = GROUPS + ("overall",)
_GROUP_OF = {Strategy.TEMPERATURE: "temp", Strategy.TOP_K: "top_k", Strategy.TOP_P: "top_p"}


@dataclass(frozen=True)
class ConfigGrid:
    temperature_configs: tuple[DecodingConfig, ...]
    top_k_configs: tuple[DecodingConfig, ...]
    top_p_configs: tuple[DecodingConfig, ...]

    def __iter__(self):
        yield from self.temperature_configs
        yield from self.top_k_configs
        yield from self.top_p_configs

    def __len__(self) -> int:
        return len(self.temperature_configs) + len(self.top_k_configs) + len(self.top_p_configs)

    def to_json(self) -> str:
        """Canonical serialization: one entry per config, parameters as exact decimals."""
        entries = []
        for i, c in enumerate(self):
            value = str(c.param) if c.strategy is Strategy.TOP_K else f"{c.param // 100}.{c.param % 100:02d}"
            entries.append({"index": i, "group": _GROUP_OF[c.strategy], "strategy": c.strategy.value, "value": value})
        return json.dumps({"format": "vdd-grid/1", "configs": entries}, indent=1) + "\n"


def enumerate_configs(base: DecodingConfig | None = None) -> ConfigGrid:
    base = base or DecodingConfig()
    return ConfigGrid(
        tuple(base.with_strategy(Strategy.TEMPERATURE, h) for h in TEMPERATURE_HUNDREDTHS),
        tuple(base.with_strategy(Strategy.TOP_K, k) for k in TOP_K_VALUES),
        tuple(base.with_strategy(Strategy.TOP_P, h) for h in TOP_P_HUNDREDTHS),
    )


@dataclass
class SweepRecord:
    sample_id: str
    config_index: int
    config: str
    group: str
    tokens: list[int] = field(default_factory=list)
    text: str = ""
    gold: str | None = None
    correct: bool = False
    confidence: float = 0.0
    error: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "sample": self.sample_id,
            "config_index": self.config_index,
            "config": self.config,
            "group": self.group,
            "tokens": self.tokens,
            "text": self.text,
            "gold": self.gold,
            "correct": self.correct,
            "confidence": round(self.confidence, 12),
        }
        if self.error is not None:
            d["error"] = self.error
        return d


@dataclass
class SweepResult:
    samples: list[str]
    configs: list[DecodingConfig]  # grid order
    records: list[SweepRecord]  # len(samples) * len(configs), sample-major
    defaults: list[SweepRecord] = field(default_factory=list)  # greedy baseline, one per sample

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records + self.defaults)


def _run_one(source: LogitSource, prompt: Prompt, config: DecodingConfig, index: int, group: str) -> SweepRecord:
    rec = SweepRecord(prompt.sample_id, index, config.label, group)
    rec.gold = None if prompt.gold is None else "".join(prompt.gold)
    try:
        gen = generate(source, prompt, config, config_index=index)
    except DebiasError as e:
        rec.error = error_record(e)
        return rec
    stops = config.stop_tokens
    rec.tokens = gen.tokens
    rec.text = source.vocab.decode(gen.tokens, skip=stops)
    rec.confidence = gen.confidence
    if rec.gold is not None:
        rec.correct = match_answer(rec.text, rec.gold)
    return rec


def run_sweep(source: LogitSource, samples: Sequence[Prompt], base: DecodingConfig | None = None, parallelism: int = 1) -> SweepResult:
    """Decode every sample under the full grid plus the greedy default.

    Each (sample, config) pair draws from its own random sub-stream, so the
    result is identical for any ``parallelism``.
    """
    if not samples:
        raise BadParam("sweep needs at least one sample")
    base = base or DecodingConfig()
    grid = list(enumerate_configs(base))
    default = base.with_strategy(Strategy.GREEDY, None)
    jobs = []
    for prompt in samples:
        for i, c in enumerate(grid):
            jobs.append((prompt, c, i, _GROUP_OF[c.strategy]))
        jobs.append((prompt, default, len(grid), "default"))

    def work(job):
        return _run_one(source, *job)

    if parallelism <= 1:
        records = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(work, jobs))
    order = {p.sample_id: n for n, p in enumerate(samples)}
    records.sort(key=lambda r: (order[r.sample_id], r.config_index))
    return SweepResult(
        [p.sample_id for p in samples],
        grid,
        [r for r in records if r.group != "default"],
        [r for r in records if r.group == "default"],
    )


@dataclass
class Selection:
    grouping: str
    mode: str
    score: float
    chosen: dict  # oracle: sample -> first correct config label or None; fixed: {"config": label}


def _in_group(rec: SweepRecord, grouping: str) -> bool:
    return grouping == "overall" or rec.group == grouping


def select_best(result: SweepResult, grouping: str, mode: str = "oracle") -> Selection:
    if grouping not in GROUPINGS:
        raise BadParam(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")
    records = [r for r in result.records if _in_group(r, grouping)]
    n = len(result.samples)
    if mode in ("oracle", "oracle_per_sample"):
        chosen = {s: None for s in result.samples}
        for r in records:
            if r.correct and chosen[r.sample_id] is None:
                chosen[r.sample_id] = r.config
        hits = sum(v is not None for v in chosen.values())
        return Selection(grouping, "oracle", hits / n, chosen)
    if mode in ("fixed", "fixed_config"):
        per_config: dict[int, list] = {}
        for r in records:
            per_config.setdefault(r.config_index, [r.config, 0])
            per_config[r.config_index][1] += r.correct
        best_index = min(per_config, key=lambda i: (-per_config[i][1], i))
        label, hits = per_config[best_index]
        return Selection(grouping, "fixed", hits / n, {"config": label, "config_index": best_index})
    raise BadParam(f"unknown selection mode {mode!r}")


def default_score(result: SweepResult) -> float:
    return sum(r.correct for r in result.defaults) / len(result.samples)


def config_accuracy(result: SweepResult) -> dict[str, float]:
    """Accuracy of every grid configuration (label -> score), in grid order."""
    hits: dict[str, int] = {}
    for r in result.records:
        hits[r.config] = hits.get(r.config, 0) + r.correct
    return {k: v / len(result.samples) for k, v in hits.items()}


def summarize(result: SweepResult, mode: str = "oracle") -> dict:
    selections = {g: select_best(result, g, mode) for g in GROUPINGS}
    return {
        "mode": selections["overall"].mode,
        "samples": len(result.samples),
        "records": len(result.records),
        "errors": sum(r.error is not None for r in result.records + result.defaults),
        "groups": {g: round(s.score, 12) for g, s in selections.items()},
        "default": round(default_score(result), 12),
        "chosen_configs": {g: s.chosen for g, s in selections.items()},
    }
