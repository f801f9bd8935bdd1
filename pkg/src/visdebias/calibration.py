"""Post-hoc debiasing of candidate-answer distributions.

The answer distribution under a degenerate (image-free) visual input estimates
the language prior ``p'``. The debiased prediction is
``softmax(W p + b)`` with ``W = diag(p')^-1`` and ``b = 0``, so an input that
reproduces the prior exactly maps to the uniform distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import argmax, as_probs, log_softmax, softmax
from .errors import BadCandidate, BadParam, EmptySupport, InvalidDegradation, ShapeMismatch
from .sources import LogitSource, Prompt, Variant, VisualContext, degrade_visual

DEFAULT_EPSILON = 1e-8
DEFAULT_PRIOR_VARIANTS = (Variant.NONE, Variant.UNK)


@dataclass(frozen=True)
class CalibrationParams:
    w: np.ndarray
    b: np.ndarray = None

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 1 or not np.isfinite(w).all() or (w <= 0).any():
            raise BadParam("calibration weights must be finite and positive")
        b = np.zeros_like(w) if self.b is None else np.array(self.b, dtype=np.float64)
        if b.shape != w.shape:
            raise ShapeMismatch(f"bias has shape {b.shape}, weights {w.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class PriorEstimate:
    p_prime: np.ndarray
    variants_used: tuple[Variant, ...]


@dataclass
class ClassifyResult:
    sample_id: str
    label: int
    naive: np.ndarray
    debiased: np.ndarray
    prior: PriorEstimate
    no_evidence: bool = False
    gold: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def naive_label(self) -> int:
        return argmax(self.naive)


def _candidate_ids(source: LogitSource, prompt: Prompt) -> list[tuple[int, ...]]:
    if not prompt.candidates or len(prompt.candidates) < 2:
        raise BadParam(f"prompt {prompt.sample_id!r} needs at least 2 candidate labels")
    out = []
    for cand in prompt.candidates:
        missing = [t for t in cand if t not in source.vocab]
        if missing:
            raise BadCandidate(f"prompt {prompt.sample_id!r}: candidate {list(cand)} has out-of-vocabulary tokens {missing}")
        out.append(source.vocab.ids(cand))
    return out


def candidate_log_scores(source: LogitSource, prompt: Prompt, visual: VisualContext, length_normalize: bool = False) -> np.ndarray:
    """Teacher-forced sequence log-probability of every candidate label."""
    scores = []
    cache: dict[tuple[int, ...], np.ndarray] = {}
    for ids in _candidate_ids(source, prompt):
        total = 0.0
        for t, tok in enumerate(ids):
            prefix = ids[:t]
            if prefix not in cache:
                cache[prefix] = log_softmax(source.query(prompt, visual, prefix))
            total += cache[prefix][tok]
        scores.append(total / len(ids) if length_normalize else total)
    return np.array(scores, dtype=np.float64)


def score_candidates(source: LogitSource, prompt: Prompt, visual: VisualContext, length_normalize: bool = False) -> np.ndarray:
    """Candidate distribution: sequence likelihoods renormalized over the label set."""
    scores = candidate_log_scores(source, prompt, visual, length_normalize)
    if not np.isfinite(scores).any():
        raise EmptySupport(f"prompt {prompt.sample_id!r}: every candidate has zero probability")
    return as_probs(softmax(scores))


def prior_distribution(
    source: LogitSource,
    prompt: Prompt,
    variants: Sequence[VisualContext | Variant | str] = DEFAULT_PRIOR_VARIANTS,
    global_seed: int = 0,
    length_normalize: bool = False,
) -> PriorEstimate:
    """Average candidate distribution over one or more degenerate visual inputs."""
    if not variants:
        raise BadParam("at least one degenerate variant is required")
    contexts = []
    for v in variants:
        if not isinstance(v, VisualContext):
            v = Variant(v)
            if not v.degenerate:
                raise InvalidDegradation("the prior must come from degenerate contexts, got real")
            v = degrade_visual(VisualContext.real(prompt.sample_id), v, global_seed)
        if not v.is_degenerate:
            raise InvalidDegradation("the prior must come from degenerate contexts, got real")
        contexts.append(v)
    dists = [score_candidates(source, prompt, c, length_normalize) for c in contexts]
    if len(dists) == 1:
        p = dists[0]
    else:
        p = np.mean(dists, axis=0)
        p = p / p.sum()
    return PriorEstimate(as_probs(p), tuple(c.variant for c in contexts))


def calibration_params(prior: PriorEstimate | np.ndarray, epsilon: float = DEFAULT_EPSILON) -> CalibrationParams:
    if epsilon <= 0:
        raise BadParam("epsilon must be > 0")
    p = prior.p_prime if isinstance(prior, PriorEstimate) else np.asarray(prior, dtype=np.float64)
    return CalibrationParams(1.0 / np.maximum(p, epsilon))


def apply_posthoc_debias(p, params: CalibrationParams) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != params.w.shape:
        raise ShapeMismatch(f"distribution has shape {p.shape}, calibration expects {params.w.shape}")
    return as_probs(softmax(params.w * p + params.b))


def classify_debiased(
    source: LogitSource,
    prompt: Prompt,
    visual: VisualContext | None = None,
    variants: Sequence[VisualContext | Variant | str] = DEFAULT_PRIOR_VARIANTS,
    epsilon: float = DEFAULT_EPSILON,
    global_seed: int = 0,
    length_normalize: bool = False,
) -> ClassifyResult:
    """Score candidates under the real input, estimate the prior, recalibrate.

    The prior is re-estimated for every prompt, since it is conditioned on the
    question text.
    """
    if visual is None:
        visual = VisualContext.real(prompt.sample_id)
    if visual.variant is not Variant.REAL:
        raise BadParam("classification expects a real visual context")
    naive = score_candidates(source, prompt, visual, length_normalize)
    prior = prior_distribution(source, prompt, variants, global_seed, length_normalize)
    debiased = apply_posthoc_debias(naive, calibration_params(prior, epsilon))
    return ClassifyResult(
        sample_id=prompt.sample_id,
        label=argmax(debiased),
        naive=naive,
        debiased=debiased,
        prior=prior,
        no_evidence=bool(np.allclose(naive, prior.p_prime, rtol=0.0, atol=1e-12)),
        gold=prompt.gold_index,
    )
