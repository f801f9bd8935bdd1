"""Token-level decoding with optional contrastive debiasing.

Per step the sampling distribution is either the plain softmax of the
image-conditioned logits or the contrastive distribution

    softmax[(1 + alpha) * l - alpha * l_ref]

restricted to the plausibility head ``{i : p_i >= beta * max p}`` of the
image-conditioned distribution; tokens outside the head get probability 0.
Temperature / top-k / top-p then act on that distribution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import SeededRng, argmax, as_probs, softmax
from .errors import BadParam, ShapeMismatch
from .sources import LogitSource, Prompt, Variant, VisualContext

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.1


class Strategy(str, enum.Enum):
    GREEDY = "greedy"
    TEMPERATURE = "temperature"
    TOP_K = "top_k"
    TOP_P = "top_p"


class Debias(str, enum.Enum):
    NAIVE = "naive"
    VDD_NONE = "vdd_none"
    VDD_UNK = "vdd_unk"
    VDD_BOTH = "vdd_both"


@dataclass(frozen=True)
class DecodingConfig:
    """Decoding strategy plus debiasing settings.

    ``param`` is an integer: hundredths of the temperature or nucleus mass for
    ``temperature`` / ``top_p`` (``param=5`` means 0.05), ``k`` for ``top_k``,
    and unused for ``greedy``.
    """

    strategy: Strategy = Strategy.GREEDY
    param: int | None = None
    debias: Debias = Debias.NAIVE
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    max_new_tokens: int = 16
    stop_tokens: frozenset[int] = frozenset()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "debias", Debias(self.debias))
        object.__setattr__(self, "stop_tokens", frozenset(int(t) for t in self.stop_tokens))
        if self.strategy is Strategy.GREEDY:
            object.__setattr__(self, "param", None)
        elif not isinstance(self.param, (int, np.integer)) or isinstance(self.param, bool):
            raise BadParam(f"{self.strategy.value} needs an integer param, got {self.param!r}")
        if self.strategy is Strategy.TEMPERATURE and self.param <= 0:
            raise BadParam("temperature must be > 0")
        if self.strategy is Strategy.TOP_K and self.param < 1:
            raise BadParam("top-k needs k >= 1")
        if self.strategy is Strategy.TOP_P and not 0 < self.param <= 100:
            raise BadParam("top-p needs 0 < p <= 1")
        if self.alpha < 0:
            raise BadParam("alpha must be >= 0")
        if not 0 <= self.beta <= 1:
            raise BadParam("beta must lie in [0, 1]")
        if self.max_new_tokens < 0:
            raise BadParam("max_new_tokens must be >= 0")
        if self.seed < 0:
            raise BadParam("seed must be a non-negative 64-bit integer")

    @classmethod
    def greedy(cls, **kw) -> "DecodingConfig":
        return cls(Strategy.GREEDY, None, **kw)

    @classmethod
    def temperature(cls, tau: float, **kw) -> "DecodingConfig":
        return cls(Strategy.TEMPERATURE, _hundredths(tau), **kw)

    @classmethod
    def top_k(cls, k: int, **kw) -> "DecodingConfig":
        return cls(Strategy.TOP_K, int(k), **kw)

    @classmethod
    def top_p(cls, p: float, **kw) -> "DecodingConfig":
        return cls(Strategy.TOP_P, _hundredths(p), **kw)

    @property
    def value(self) -> float | int | None:
        if self.strategy in (Strategy.TEMPERATURE, Strategy.TOP_P):
            return self.param / 100
        return self.param

    @property
    def label(self) -> str:
        if self.strategy is Strategy.GREEDY:
            return "greedy"
        if self.strategy is Strategy.TOP_K:
            return f"top_k={self.param}"
        name = "temp" if self.strategy is Strategy.TEMPERATURE else "top_p"
        return f"{name}={self.param // 100}.{self.param % 100:02d}"

    def with_strategy(self, strategy: Strategy, param: int | None) -> "DecodingConfig":
        return replace(self, strategy=strategy, param=param)


def _hundredths(x: float) -> int:
    h = round(x * 100)
    if abs(h - x * 100) > 1e-6:
        raise BadParam(f"{x!r} is not a multiple of 0.01")
    return int(h)


@dataclass(frozen=True)
class PlausibilityHead:
    allowed: np.ndarray  # sorted token ids
    threshold: float

    def __contains__(self, token: int) -> bool:
        i = np.searchsorted(self.allowed, token)
        return bool(i < self.allowed.size and self.allowed[i] == token)

    def __len__(self) -> int:
        return int(self.allowed.size)


def temperature_scale(l, tau: float) -> np.ndarray:
    if not tau > 0:
        raise BadParam(f"temperature must be > 0, got {tau!r}")
    return np.asarray(l, dtype=np.float64) / tau  # -inf / tau stays -inf


def top_k_filter(l, k: int) -> np.ndarray:
    if k < 1:
        raise BadParam(f"top-k needs k >= 1, got {k!r}")
    l = np.asarray(l, dtype=np.float64)
    if k >= np.isfinite(l).sum():
        return l.copy()
    order = np.argsort(-l, kind="stable")
    out = np.full_like(l, -np.inf)
    keep = order[:k]
    out[keep] = l[keep]
    return out


def top_p_filter(l, p: float) -> np.ndarray:
    """Keep the shortest probability-sorted prefix whose mass reaches ``p``.

    Cumulative sums are compared with a 1e-12 slack so that, say, 0.6 + 0.3
    counts as reaching 0.9.
    """
    if not 0 < p <= 1:
        raise BadParam(f"top-p needs 0 < p <= 1, got {p!r}")
    l = np.asarray(l, dtype=np.float64)
    if p == 1:
        return l.copy()
    probs = softmax(l)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    n = int(np.searchsorted(cum, p - 1e-12, side="left")) + 1
    n = min(n, int(np.isfinite(l).sum()))
    out = np.full_like(l, -np.inf)
    keep = order[:n]
    out[keep] = l[keep]
    return out


def plausibility_head(p_image, beta: float) -> PlausibilityHead:
    if not 0 <= beta <= 1:
        raise BadParam(f"beta must lie in [0, 1], got {beta!r}")
    p = np.asarray(p_image, dtype=np.float64)
    threshold = beta * float(p.max())
    return PlausibilityHead(np.flatnonzero(p >= threshold), threshold)


def contrast_logits(l, l_ref, alpha: float) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    l_ref = np.asarray(l_ref, dtype=np.float64)
    if l.shape != l_ref.shape:
        raise ShapeMismatch(f"logits {l.shape} vs reference {l_ref.shape}")
    if alpha < 0:
        raise BadParam("alpha must be >= 0")
    out = np.full_like(l, -np.inf)
    live = np.isfinite(l)
    if alpha > 0 and np.isneginf(l_ref[live]).any():
        raise BadParam("reference logits are masked where the conditioned logits are not")
    out[live] = (1 + alpha) * l[live] - alpha * l_ref[live]
    return out


def vdd_distribution(l, l_ref, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA, head: PlausibilityHead | None = None) -> np.ndarray:
    """Contrastive next-token distribution, zero outside the plausibility head."""
    l = np.asarray(l, dtype=np.float64)
    if np.shape(l_ref) != l.shape:
        raise ShapeMismatch(f"logits {l.shape} vs reference {np.shape(l_ref)}")
    if head is None:
        head = plausibility_head(softmax(l), beta)
    contrast = contrast_logits(l, l_ref, alpha)
    masked = np.full_like(contrast, -np.inf)
    masked[head.allowed] = contrast[head.allowed]
    return as_probs(softmax(masked))


def build_reference_logits(source: LogitSource, prompt: Prompt, prefix: Sequence[int], mode: Debias | str) -> np.ndarray:
    mode = Debias(mode)
    if mode is Debias.VDD_NONE:
        return source.query(prompt, VisualContext.of(Variant.NONE), prefix)
    if mode is Debias.VDD_UNK:
        return source.query(prompt, VisualContext.of(Variant.UNK), prefix)
    if mode is Debias.VDD_BOTH:
        l_none = source.query(prompt, VisualContext.of(Variant.NONE), prefix)
        l_unk = source.query(prompt, VisualContext.of(Variant.UNK), prefix)
        return (l_none + l_unk) / 2
    raise BadParam(f"{mode.value} has no reference logits")


def sample_token(p, rng: SeededRng | None = None, greedy: bool = False) -> int:
    """Inverse-CDF draw over tokens in index order (or lowest-index argmax)."""
    p = np.asarray(p, dtype=np.float64)
    if greedy or rng is None:
        return argmax(p)
    u = rng.uniform()
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= p.size:
        # u landed above a cumulative sum that rounded below 1
        i = int(np.flatnonzero(p > 0)[-1])
    return i


def apply_strategy(p, config: DecodingConfig) -> np.ndarray:
    """Re-shape a sampling distribution with the configured transform."""
    if config.strategy is Strategy.GREEDY:
        return np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        l = np.log(p)
    if config.strategy is Strategy.TEMPERATURE:
        l = temperature_scale(l, config.param / 100)
    elif config.strategy is Strategy.TOP_K:
        l = top_k_filter(l, config.param)
    else:
        l = top_p_filter(l, config.param / 100)
    return softmax(l)


@dataclass
class StepInfo:
    step: int
    head_size: int
    threshold: float | None
    contrast_argmax: int | None
    chosen: int

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "head_size": self.head_size,
            "threshold": self.threshold,
            "contrast_argmax": self.contrast_argmax,
            "chosen": self.chosen,
        }


@dataclass
class Generation:
    sample_id: str
    tokens: list[int] = field(default_factory=list)
    probs: list[np.ndarray] = field(default_factory=list)
    steps: list[StepInfo] = field(default_factory=list)

    @property
    def confidence(self) -> float:
        """Probability of the emitted sequence under the per-step sampling distributions."""
        return float(np.prod([p[t] for p, t in zip(self.probs, self.tokens)])) if self.tokens else 0.0


def step_distribution(source, prompt, prefix, config: DecodingConfig, visual: VisualContext | None = None):
    """Sampling distribution for one step before the strategy transform, plus debug info."""
    visual = visual or VisualContext.real(prompt.sample_id)
    l = source.query(prompt, visual, prefix)
    if config.debias is Debias.NAIVE:
        p = softmax(l)
        return p, len(p), None, None
    l_ref = build_reference_logits(source, prompt, prefix, config.debias)
    head = plausibility_head(softmax(l), config.beta)
    p = vdd_distribution(l, l_ref, config.alpha, config.beta, head=head)
    return p, len(head), head.threshold, argmax(p)


def generate(
    source: LogitSource,
    prompt: Prompt,
    config: DecodingConfig,
    visual: VisualContext | None = None,
    config_index: int = 0,
    rng: SeededRng | None = None,
) -> Generation:
    """Autoregressive decoding; raises on source errors (e.g. ``TraceMiss``)."""
    visual = visual or VisualContext.real(prompt.sample_id)
    if visual.variant is not Variant.REAL:
        raise BadParam("generation expects a real visual context")
    if rng is None:
        rng = SeededRng.substream(config.seed, prompt.sample_id, config_index)
    greedy = config.strategy is Strategy.GREEDY
    out = Generation(prompt.sample_id)
    for t in range(config.max_new_tokens):
        p, head_size, threshold, c_argmax = step_distribution(source, prompt, out.tokens, config, visual)
        q = apply_strategy(p, config)
        tok = sample_token(q, rng, greedy=greedy)
        out.tokens.append(tok)
        out.probs.append(q)
        out.steps.append(StepInfo(t, head_size, threshold, c_argmax, tok))
        if tok in config.stop_tokens:
            break
    return out
