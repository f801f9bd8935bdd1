"""Logit sources: providers of next-token logits for (prompt, visual context, prefix).

Three implementations share the ``query`` contract:

* ``TraceSource`` replays externally recorded logits from a JSON Lines trace.
* ``ScenarioSource`` is table driven: logits = prior row + evidence row.
* ``ProceduralSource`` derives every logit from an FNV-1a hash, so it scales
  to any vocabulary without storing anything.

Trace and scenario rows are keyed by decoding step (``len(prefix)``), not by
prefix content. They cover teacher-forced scoring and fixed continuations;
free-running generation over an arbitrary prefix tree needs the procedural
model.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    UNK,
    Vocabulary,
    as_logits,
    derive_seed,
    fnv1a64,
    fnv1a64_fan,
    hash_to_unit,
    u64,
)
from .errors import (
    BadParam,
    DuplicateRecord,
    InvalidDegradation,
    TraceFormatError,
    TraceMiss,
    VocabMismatch,
)

TRACE_FORMAT = "vdd-trace/1"
SCENARIO_FORMAT = "vdd-scenario/1"
PROMPTS_FORMAT = "vdd-prompts/1"
STOP = "</s>"
NOISE_JITTER = 0.01


class Variant(str, enum.Enum):
    REAL = "real"
    NONE = "none"
    UNK = "unk"
    NOISE = "noise"
    ZEROS = "zeros"
    ONES = "ones"

    @property
    def degenerate(self) -> bool:
        return self is not Variant.REAL


DEGENERATE = tuple(v for v in Variant if v.degenerate)


@dataclass(frozen=True)
class VisualContext:
    """A visual input variant.

    ``payload`` is the context identifier for ``REAL`` (optional) and the
    noise seed for ``NOISE``; the other variants carry nothing.
    """

    variant: Variant
    payload: str | int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant in (Variant.NONE, Variant.UNK, Variant.ZEROS, Variant.ONES) and self.payload is not None:
            raise BadParam(f"{self.variant.value} context carries no payload")

    @classmethod
    def real(cls, context_id: str | None = None) -> "VisualContext":
        return cls(Variant.REAL, context_id)

    @classmethod
    def of(cls, variant: Variant | str) -> "VisualContext":
        return cls(Variant(variant))

    @property
    def is_degenerate(self) -> bool:
        return self.variant.degenerate


def noise_seed(global_seed: int, sample_id: str) -> int:
    return derive_seed(global_seed, sample_id)


def degrade_visual(v: VisualContext, target: Variant | str, global_seed: int = 0, sample_id: str | None = None) -> VisualContext:
    """Replace a real visual context by a degenerate one.

    Noise is seeded with ``noise_seed(global_seed, sample_id)``; ``sample_id``
    falls back to the real context's identifier.
    """
    target = Variant(target)
    if v.variant is not Variant.REAL:
        raise InvalidDegradation(f"can only degrade a real context, got {v.variant.value}")
    if not target.degenerate:
        raise InvalidDegradation("target variant must be degenerate, got real")
    if target is Variant.NOISE:
        sid = sample_id if sample_id is not None else v.payload
        if sid is None:
            raise InvalidDegradation("noise degradation needs a sample id")
        return VisualContext(Variant.NOISE, noise_seed(global_seed, str(sid)))
    return VisualContext(target)


@dataclass(frozen=True)
class Prompt:
    sample_id: str
    text: tuple[str, ...]
    candidates: tuple[tuple[str, ...], ...] | None = None
    gold: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "text", tuple(self.text))
        if not self.text:
            raise BadParam(f"prompt {self.sample_id!r} has empty text")
        if self.candidates is not None:
            cands = tuple(tuple(c) for c in self.candidates)
            if any(not c for c in cands):
                raise BadParam(f"prompt {self.sample_id!r} has an empty candidate")
            if len(set(cands)) != len(cands):
                raise BadParam(f"prompt {self.sample_id!r} has duplicate candidates")
            object.__setattr__(self, "candidates", cands)
        if self.gold is not None:
            object.__setattr__(self, "gold", tuple(self.gold))

    @property
    def gold_index(self) -> int | None:
        if self.gold is None or self.candidates is None:
            return None
        try:
            return self.candidates.index(self.gold)
        except ValueError:
            return None

    def to_dict(self) -> dict:
        return {
            "sample": self.sample_id,
            "text": list(self.text),
            "candidates": None if self.candidates is None else [list(c) for c in self.candidates],
            "gold": None if self.gold is None else list(self.gold),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prompt":
        return cls(
            sample_id=str(d["sample"]),
            text=tuple(d["text"]),
            candidates=None if d.get("candidates") is None else tuple(tuple(c) for c in d["candidates"]),
            gold=None if d.get("gold") is None else tuple(d["gold"]),
        )


class LogitSource:
    """Interface: ``vocab`` plus a deterministic ``query``."""

    vocab: Vocabulary

    def query(self, prompt: Prompt, visual: VisualContext, prefix: Sequence[int] = ()) -> np.ndarray:
        raise NotImplementedError

    def _check_prefix(self, prefix: Sequence[int]) -> tuple[int, ...]:
        prefix = tuple(int(t) for t in prefix)
        for t in prefix:
            if not 0 <= t < self.vocab.size:
                raise BadParam(f"prefix token id {t} out of range for vocabulary of size {self.vocab.size}")
        return prefix


# -- scenario ---------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSample:
    prompt: Prompt
    prior: np.ndarray  # (steps, V)
    real: np.ndarray  # (steps, V)
    degenerate: np.ndarray  # (steps, V)

    @property
    def steps(self) -> int:
        return self.prior.shape[0]


class ScenarioSource(LogitSource):
    """Table-driven model: logits(v) = prior[step] + evidence[step][v].

    Every degenerate variant shares the single ``degenerate`` evidence row.
    Noise adds a seeded jitter of amplitude ``noise_jitter`` on top of it.
    """

    def __init__(self, vocab: Vocabulary, samples: Iterable[ScenarioSample], noise_jitter: float = NOISE_JITTER):
        self.vocab = vocab
        self.noise_jitter = float(noise_jitter)
        self.samples: dict[str, ScenarioSample] = {}
        for s in samples:
            if s.prompt.sample_id in self.samples:
                raise DuplicateRecord(f"duplicate scenario sample {s.prompt.sample_id!r}")
            arrays = []
            for name in ("prior", "real", "degenerate"):
                a = np.array(getattr(s, name), dtype=np.float64)
                if a.ndim != 2 or a.shape[1] != vocab.size:
                    raise VocabMismatch(
                        f"sample {s.prompt.sample_id!r}: {name} rows must have length {vocab.size}, got shape {a.shape}"
                    )
                if not np.isfinite(a).all():
                    raise BadParam(f"sample {s.prompt.sample_id!r}: {name} has non-finite entries")
                a.setflags(write=False)
                arrays.append(a)
            if not arrays[0].shape == arrays[1].shape == arrays[2].shape:
                raise BadParam(f"sample {s.prompt.sample_id!r}: prior/evidence step counts differ")
            self.samples[s.prompt.sample_id] = ScenarioSample(s.prompt, *arrays)

    def prompts(self) -> list[Prompt]:
        return [s.prompt for s in self.samples.values()]

    def steps(self, sample_id: str) -> int:
        return self.samples[sample_id].steps

    def jitter(self, seed: int, step: int) -> np.ndarray:
        state = fnv1a64(u64(seed) + struct.pack("<I", step))
        tails = np.arange(self.vocab.size, dtype="<u4").view(np.uint8).reshape(-1, 4)
        return self.noise_jitter * hash_to_unit(fnv1a64_fan(state, tails))

    def query(self, prompt, visual, prefix=()):
        prefix = self._check_prefix(prefix)
        sample = self.samples.get(prompt.sample_id)
        step = len(prefix)
        if sample is None or step >= sample.steps:
            raise TraceMiss(f"no scenario row for (sample={prompt.sample_id!r}, variant={visual.variant.value!r}, step={step})")
        if visual.variant is Variant.REAL:
            return sample.prior[step] + sample.real[step]
        row = sample.prior[step] + sample.degenerate[step]
        if visual.variant is Variant.NOISE and self.noise_jitter:
            row = row + self.jitter(int(visual.payload or 0), step)
        return row

    def to_dict(self) -> dict:
        return {
            "format": SCENARIO_FORMAT,
            "vocab": list(self.vocab.tokens),
            "noise_jitter": self.noise_jitter,
            "samples": [
                {
                    **s.prompt.to_dict(),
                    "prior": s.prior.tolist(),
                    "evidence": {"real": s.real.tolist(), "degenerate": s.degenerate.tolist()},
                }
                for s in self.samples.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSource":
        if d.get("format") != SCENARIO_FORMAT:
            raise TraceFormatError(f"expected format {SCENARIO_FORMAT!r}, got {d.get('format')!r}")
        vocab = Vocabulary(tuple(d["vocab"]))
        samples = []
        for i, rec in enumerate(d["samples"]):
            try:
                ev = rec["evidence"]
                samples.append(ScenarioSample(Prompt.from_dict(rec), rec["prior"], ev["real"], ev["degenerate"]))
            except KeyError as e:
                raise TraceFormatError(f"scenario sample #{i}: missing key {e.args[0]!r}") from None
        return cls(vocab, samples, d.get("noise_jitter", NOISE_JITTER))


def load_scenario(path) -> ScenarioSource:
    with open(path, encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise TraceFormatError(f"{path}: line {e.lineno}: {e.msg}") from None
    return ScenarioSource.from_dict(d)


def write_scenario(source: ScenarioSource, path) -> None:
    Path(path).write_text(json.dumps(source.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")


# -- procedural -------------------------------------------------------------


@dataclass(frozen=True)
class ProceduralModelSpec:
    vocab_size: int
    prior_strength: float = 1.0
    visual_strength: float = 1.0
    hash_seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 3:
            raise BadParam("procedural vocabulary needs at least 3 tokens")
        if self.prior_strength < 0 or self.visual_strength < 0:
            raise BadParam("strengths must be >= 0")


def procedural_vocab(size: int) -> Vocabulary:
    return Vocabulary((UNK, STOP) + tuple(f"w{i}" for i in range(2, size)))


def _hash_prefix_bytes(hash_seed: int, sample_id: str, tag: str, prefix: Sequence[int]) -> bytes:
    sid = sample_id.encode("utf-8")
    tg = tag.encode("utf-8")
    parts = [u64(hash_seed), struct.pack("<I", len(sid)), sid, struct.pack("<I", len(tg)), tg, struct.pack("<I", len(prefix))]
    parts.extend(struct.pack("<I", t) for t in prefix)
    return b"".join(parts)


def procedural_unit(hash_seed: int, sample_id: str, tag: str, prefix: Sequence[int], token: int) -> float:
    """Scalar reference for one procedural hash value in [-1, 1].

    Byte layout, all little-endian: u64 hash_seed | u32 len | sample_id utf-8 |
    u32 len | tag utf-8 | u32 prefix length | u32 per prefix id | u32 token id.
    """
    data = _hash_prefix_bytes(hash_seed, sample_id, tag, prefix) + struct.pack("<I", token)
    return hash_to_unit(fnv1a64(data))


class ProceduralSource(LogitSource):
    """Hash-defined stand-in for a multimodal model.

    logit = prior_strength * U(sample, "prior") + visual_strength * U(evidence key)

    The evidence key is (sample_id, "real") for real contexts and
    ("", variant tag) for degenerate ones, so degenerate evidence never
    depends on the sample.
    """

    def __init__(self, spec: ProceduralModelSpec):
        self.spec = spec
        self.vocab = procedural_vocab(spec.vocab_size)
        self._tails = np.arange(spec.vocab_size, dtype="<u4").view(np.uint8).reshape(-1, 4)

    def _units(self, sample_id: str, tag: str, prefix: tuple[int, ...]) -> np.ndarray:
        state = fnv1a64(_hash_prefix_bytes(self.spec.hash_seed, sample_id, tag, prefix))
        return hash_to_unit(fnv1a64_fan(state, self._tails))

    def query(self, prompt, visual, prefix=()):
        prefix = self._check_prefix(prefix)
        prior = self._units(prompt.sample_id, "prior", prefix)
        if visual.variant is Variant.REAL:
            evidence = self._units(prompt.sample_id, Variant.REAL.value, prefix)
        else:
            evidence = self._units("", visual.variant.value, prefix)
        return self.spec.prior_strength * prior + self.spec.visual_strength * evidence


# -- trace replay -------------------------------------------------------------


class TraceSource(LogitSource):
    def __init__(self, vocab: Vocabulary, records: dict | None = None):
        self.vocab = vocab
        self.records: dict[tuple[str, str, int], np.ndarray] = {}
        for key, logits in (records or {}).items():
            self.add(*key, logits)

    def add(self, sample_id: str, variant: Variant | str, step: int, logits) -> None:
        key = (str(sample_id), Variant(variant).value, int(step))
        if key in self.records:
            raise DuplicateRecord(f"duplicate trace record {key}")
        arr = as_logits(logits)
        if arr.size != self.vocab.size:
            raise VocabMismatch(f"record {key} has {arr.size} logits, vocabulary has {self.vocab.size}")
        arr.setflags(write=False)
        self.records[key] = arr

    def sample_ids(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.records))

    def query(self, prompt, visual, prefix=()):
        prefix = self._check_prefix(prefix)
        key = (prompt.sample_id, visual.variant.value, len(prefix))
        try:
            return self.records[key].copy()
        except KeyError:
            raise TraceMiss(f"trace has no record for (sample={key[0]!r}, variant={key[1]!r}, step={key[2]})") from None


def _parse_jsonl_line(path, lineno: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"{path}: line {lineno}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise TraceFormatError(f"{path}: line {lineno}: expected a JSON object")
    return obj


def load_trace(path) -> TraceSource:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: line 1: missing header")
    header = _parse_jsonl_line(path, 1, lines[0])
    if header.get("format") != TRACE_FORMAT or not isinstance(header.get("vocab"), list):
        raise TraceFormatError(f"{path}: line 1: header must be {{'format': {TRACE_FORMAT!r}, 'vocab': [...]}}")
    source = TraceSource(Vocabulary(tuple(header["vocab"])))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_jsonl_line(path, lineno, line)
        try:
            sample, variant, step, logits = rec["sample"], rec["variant"], rec["step"], rec["logits"]
        except KeyError as e:
            raise TraceFormatError(f"{path}: line {lineno}: missing key {e.args[0]!r}") from None
        if not isinstance(step, int) or isinstance(step, bool) or step < 0:
            raise TraceFormatError(f"{path}: line {lineno}: step must be a non-negative integer")
        if variant not in {v.value for v in Variant}:
            raise TraceFormatError(f"{path}: line {lineno}: unknown variant {variant!r}")
        if not isinstance(logits, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in logits):
            raise TraceFormatError(f"{path}: line {lineno}: logits must be a list of numbers")
        try:
            source.add(sample, variant, step, logits)
        except (VocabMismatch, DuplicateRecord) as e:
            raise type(e)(f"{path}: line {lineno}: {e}") from None
    return source


def write_trace(source: TraceSource, path) -> None:
    lines = [json.dumps({"format": TRACE_FORMAT, "vocab": list(source.vocab.tokens)})]
    for (sample, variant, step), logits in source.records.items():
        lines.append(json.dumps({"sample": sample, "variant": variant, "step": step, "logits": logits.tolist()}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_prompts(path) -> list[Prompt]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: line 1: missing header")
    header = _parse_jsonl_line(path, 1, lines[0])
    if header.get("format") != PROMPTS_FORMAT:
        raise TraceFormatError(f"{path}: line 1: header must declare format {PROMPTS_FORMAT!r}")
    prompts = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_jsonl_line(path, lineno, line)
        try:
            prompts.append(Prompt.from_dict(rec))
        except (KeyError, BadParam) as e:
            raise TraceFormatError(f"{path}: line {lineno}: {e}") from None
    return prompts


def write_prompts(prompts: Iterable[Prompt], path) -> None:
    lines = [json.dumps({"format": PROMPTS_FORMAT})]
    lines.extend(json.dumps(p.to_dict()) for p in prompts)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
