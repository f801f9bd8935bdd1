"""Deterministic fixture generation.

All randomness comes from numpy's PCG64 seeded with the fixture seed, and
every stored logit is rounded to six decimals, so the emitted files are
byte-identical for a given seed on any platform.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .core import UNK, Vocabulary
from .sources import (
    STOP,
    Prompt,
    ScenarioSample,
    ScenarioSource,
    TraceSource,
    Variant,
    write_prompts,
    write_scenario,
    write_trace,
)
from .sweep import enumerate_configs

COLORS = ("red", "green", "blue", "brown", "white", "black")
SUITE_VOCAB = (UNK, STOP, "yes", "no") + COLORS + tuple(f"f{i:02d}" for i in range(22))
BENCH_VOCAB = (UNK, STOP, "yes", "no", "f0", "f1", "f2", "f3")
TRACE_VOCAB = (UNK, STOP, "yes", "no", "maybe", "red", "blue", "f0")

FILES = (
    "trace.jsonl",
    "trace_prompts.jsonl",
    "scenario_suite.json",
    "prior_vs_evidence.json",
    "grid.json",
    "classify.json",
    "sweep.json",
    "probe.json",
)


def _r(a) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64), 6) + 0.0  # +0.0 folds -0.0


def _stop_row(rng: np.random.Generator, size: int, stop: int) -> np.ndarray:
    row = rng.normal(-3.0, 1.0, size)
    row[stop] = 6.0
    return row


def make_trace(seed: int) -> tuple[TraceSource, list[Prompt]]:
    """Three yes/no samples; every variant at steps 0 and 1."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1,))))
    vocab = Vocabulary(TRACE_VOCAB)
    yes, no, stop = vocab.id("yes"), vocab.id("no"), vocab.id(STOP)
    source = TraceSource(vocab)
    prompts = []
    for n in range(3):
        sid = f"s{n}"
        gold = "yes" if n == 1 else "no"
        prompts.append(Prompt(sid, ("is", "the", "fox", "brown", "?"), (("yes",), ("no",)), (gold,)))
        prior = rng.normal(-2.0, 1.0, vocab.size)
        prior[yes] += 3.0 + rng.uniform(0.5, 1.5)  # language prior leans to "yes"
        prior[no] += 3.0
        evidence = np.zeros(vocab.size)
        evidence[vocab.id(gold)] = rng.uniform(0.8, 1.6)
        rows = {
            Variant.REAL: prior + evidence,
            Variant.NONE: prior,
            Variant.UNK: prior + rng.normal(0.0, 0.2, vocab.size),
            Variant.NOISE: prior + rng.normal(0.0, 0.5, vocab.size),
            Variant.ZEROS: prior + rng.normal(0.0, 0.4, vocab.size),
            Variant.ONES: prior + rng.normal(0.0, 0.4, vocab.size),
        }
        for v in Variant:
            source.add(sid, v, 0, _r(rows[v]))
            source.add(sid, v, 1, _r(_stop_row(rng, vocab.size, stop)))
    return source, prompts


def make_suite(seed: int, n_yesno: int = 16, n_color: int = 8) -> ScenarioSource:
    """Mixed yes/no and colour questions with a language prior and noisy evidence."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2,))))
    vocab = Vocabulary(SUITE_VOCAB)
    stop = vocab.id(STOP)
    samples = []
    for n in range(n_yesno + n_color):
        colour = n >= n_yesno
        labels = COLORS if colour else ("yes", "no")
        biased = ("white", "brown") if colour else ("yes",)
        gold = labels[int(rng.integers(len(labels)))]
        prior0 = rng.normal(-2.0, 1.0, vocab.size)
        for lab in labels:
            prior0[vocab.id(lab)] = rng.normal(1.0, 0.3)
        for lab in biased:
            prior0[vocab.id(lab)] += rng.uniform(0.5, 2.0)
        real0 = rng.normal(0.0, 0.4, vocab.size)
        real0[vocab.id(gold)] += rng.uniform(0.0, 2.0)
        degenerate0 = rng.normal(0.0, 0.05, vocab.size)
        prior1 = _stop_row(rng, vocab.size, stop)
        zeros1 = np.zeros(vocab.size)
        text = ("what", "colour", "is", "the", "car", "?") if colour else ("is", "there", "a", "dog", "?")
        samples.append(
            ScenarioSample(
                Prompt(f"q{n:02d}", text, tuple((lab,) for lab in labels), (gold,)),
                _r([prior0, prior1]),
                _r([real0, zeros1]),
                _r([degenerate0, zeros1]),
            )
        )
    return ScenarioSource(vocab, samples)


def make_prior_vs_evidence(seed: int, n: int = 1000, evidence_margin: float = 1.0) -> ScenarioSource:
    """Scenarios where the prior margin (in (m, 2m)) opposes an evidence margin m.

    Plain decoding follows the prior and is always wrong; removing the prior
    (or amplifying evidence by 1 + alpha with alpha = 1) always recovers the
    gold answer. Degenerate evidence is zero and Noise jitter is disabled.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(3,))))
    vocab = Vocabulary(BENCH_VOCAB)
    yes, no, stop = vocab.id("yes"), vocab.id("no"), vocab.id(STOP)
    samples = []
    for i in range(n):
        gold, other = (yes, no) if rng.random() < 0.5 else (no, yes)
        prior_margin = evidence_margin * rng.uniform(1.05, 1.95)
        base = rng.uniform(-1.0, 1.0)
        prior0 = rng.uniform(-6.0, -4.0, vocab.size)
        prior0[gold] = base
        prior0[other] = base + prior_margin
        real0 = np.zeros(vocab.size)
        shift = round(float(rng.uniform(-0.5, 0.5)), 3)
        real0[other] = shift
        real0[gold] = shift + evidence_margin
        zeros = np.zeros(vocab.size)
        samples.append(
            ScenarioSample(
                Prompt(f"b{i:04d}", ("is", "it", "there", "?"), (("yes",), ("no",)), (vocab.tokens[gold],)),
                _r([prior0, _stop_row(rng, vocab.size, stop)]),
                _r([real0, zeros]),
                _r([zeros, zeros]),
            )
        )
    return ScenarioSource(vocab, samples, noise_jitter=0.0)


def _run_configs(seed: int) -> dict[str, dict]:
    common = {"schema": "vdd-run/1", "seed": seed}
    return {
        "classify.json": {
            **common,
            "task": "classify",
            "source": {"trace": "trace.jsonl"},
            "prompts": "trace_prompts.jsonl",
            "debias_variants": ["none", "unk"],
            "positive_label": "yes",
        },
        "sweep.json": {
            **common,
            "task": "sweep",
            "source": {"scenario": "scenario_suite.json"},
            "debias": "vdd_none",
            "alpha": 1.0,
            "beta": 0.1,
            "max_new_tokens": 2,
            "stop_tokens": [STOP],
            "mode": "oracle",
        },
        "probe.json": {
            **common,
            "task": "probe",
            "source": {"scenario": "scenario_suite.json"},
            "debias_variants": ["none", "unk", "noise", "zeros", "ones"],
            "top_n": 15,
        },
    }


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_fixtures(output_dir, seed: int = 0) -> dict[str, str]:
    """Write every fixture into ``output_dir``; returns ``{file name: sha256}``."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        trace, prompts = make_trace(seed)
        write_trace(trace, out / "trace.jsonl")
        write_prompts(prompts, out / "trace_prompts.jsonl")
        write_scenario(make_suite(seed), out / "scenario_suite.json")
        write_scenario(make_prior_vs_evidence(seed), out / "prior_vs_evidence.json")
        (out / "grid.json").write_text(enumerate_configs().to_json(), encoding="utf-8")
        for name, cfg in _run_configs(seed).items():
            (out / name).write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        hashes = {name: sha256_file(out / name) for name in FILES}
        (out / "manifest.json").write_text(json.dumps({"seed": seed, "sha256": hashes}, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"writing fixtures to {out}: {e}") from e
    return hashes
