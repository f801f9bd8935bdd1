"""Run configuration.

A run is described by one JSON object with ``"schema": "vdd-run/1"``.
Precedence, lowest first: built-in defaults, the config file, command-line
flags. The seed falls back to ``$VDD_SEED`` when neither file nor flag sets
it. Relative paths in a config file resolve against the file's directory;
paths given on the command line resolve against the working directory.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .calibration import DEFAULT_PRIOR_VARIANTS
from .decoding import DEFAULT_ALPHA, DEFAULT_BETA, Debias, DecodingConfig, Strategy
from .errors import BadParam, ConfigError
from .sources import (
    ProceduralModelSpec,
    ProceduralSource,
    Prompt,
    Variant,
    load_prompts,
    load_scenario,
    load_trace,
)

SCHEMA = "vdd-run/1"
TASKS = ("probe", "classify", "generate", "sweep", "eval")
SOURCE_KINDS = ("trace", "scenario", "procedural")
PROCEDURAL_KEYS = {"vocab_size", "prior_strength", "visual_strength", "hash_seed"}


@dataclass
class RunConfig:
    task: str = "classify"
    source: dict | None = None
    prompts: str | None = None
    input: str | None = None
    strategy: str = "greedy"
    value: float | None = None
    debias: str = "naive"
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    max_new_tokens: int = 16
    stop_tokens: list[str] = field(default_factory=lambda: ["</s>"])
    debias_variants: list[str] = field(default_factory=lambda: [v.value for v in DEFAULT_PRIOR_VARIANTS])
    length_normalize: bool = False
    epsilon: float = 1e-8
    positive_label: str | None = None
    mode: str = "oracle"
    top_n: int = 15
    bins: int = 10
    output: str = "results"
    seed: int = 0
    parallelism: int = 0
    figures: bool = True
    debug_dump: bool = False
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)


FIELDS = set(RunConfig.__dataclass_fields__)
_PATH_KEYS = ("prompts", "input", "output")


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base / p).resolve())


def _resolve_source(source, base: Path):
    if source is None:
        return None
    if not isinstance(source, dict) or len(source) != 1:
        raise ConfigError("source: exactly one of 'trace', 'scenario', 'procedural' must be given")
    (kind, value), = source.items()
    if kind not in SOURCE_KINDS:
        raise ConfigError(f"source: unknown source kind {kind!r}")
    if kind == "procedural":
        if not isinstance(value, dict):
            raise ConfigError("source.procedural: expected an object")
        unknown = set(value) - PROCEDURAL_KEYS
        if unknown:
            raise ConfigError(f"source.procedural: unknown key {sorted(unknown)[0]!r}")
        return {kind: dict(value)}
    return {kind: _resolve(value, base)}


def read_config_file(path) -> dict:
    """Load a config file, rejecting unknown keys and resolving relative paths."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: {path} line {e.lineno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = sorted(set(raw) - FIELDS)
    if unknown:
        raise ConfigError(f"config: unknown key {unknown[0]!r}")
    if raw.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA!r}, got {raw['schema']!r}")
    base = path.parent.resolve()
    for k in _PATH_KEYS:
        if k in raw:
            raw[k] = _resolve(raw[k], base)
    if "source" in raw:
        raw["source"] = _resolve_source(raw["source"], base)
    return raw


def build_config(file_values: dict, overrides: dict, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    values = dict(file_values)
    cwd = Path.cwd()
    for k, v in overrides.items():
        if v is None:
            continue
        if k in _PATH_KEYS:
            v = _resolve(v, cwd)
        elif k == "source":
            v = _resolve_source(v, cwd)
        values[k] = v
    if "seed" not in values and env.get("VDD_SEED"):
        try:
            values["seed"] = int(env["VDD_SEED"])
        except ValueError:
            raise ConfigError(f"VDD_SEED: not an integer: {env['VDD_SEED']!r}") from None
    cfg = RunConfig(**values)
    if "output" not in values:
        cfg.output = str(cwd / cfg.output)
    validate(cfg)
    return cfg


def _check(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: RunConfig) -> None:
    _check(cfg.task in TASKS, "task", f"expected one of {TASKS}, got {cfg.task!r}")
    if cfg.task == "eval":
        _check(cfg.input is not None, "input", "eval needs an input results file")
        _check(Path(cfg.input).is_file(), "input", f"no such file {cfg.input}")
    else:
        _check(cfg.source is not None, "source", "a logit source is required")
        (kind, value), = cfg.source.items()
        if kind != "procedural":
            _check(Path(value).is_file(), f"source.{kind}", f"no such file {value}")
        if kind != "scenario":
            _check(cfg.prompts is not None, "prompts", f"a prompts file is required with a {kind} source")
        if cfg.prompts is not None:
            _check(Path(cfg.prompts).is_file(), "prompts", f"no such file {cfg.prompts}")
    _check(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    _check(cfg.mode in ("oracle", "fixed"), "mode", f"expected 'oracle' or 'fixed', got {cfg.mode!r}")
    _check(isinstance(cfg.top_n, int) and cfg.top_n >= 1, "top_n", "must be >= 1")
    _check(isinstance(cfg.bins, int) and cfg.bins >= 1, "bins", "must be >= 1")
    _check(isinstance(cfg.parallelism, int) and cfg.parallelism >= 0, "parallelism", "must be >= 0")
    _check(cfg.epsilon > 0, "epsilon", "must be > 0")
    try:
        Debias(cfg.debias)
    except ValueError:
        raise ConfigError(f"debias: unknown mode {cfg.debias!r}") from None
    try:
        variants = [Variant(v) for v in cfg.debias_variants]
    except ValueError as e:
        raise ConfigError(f"debias_variants: {e}") from None
    _check(bool(variants) and all(v.degenerate for v in variants), "debias_variants", "need at least one degenerate variant")
    _check(cfg.strategy in {s.value for s in Strategy}, "strategy", f"unknown strategy {cfg.strategy!r}")
    _check(cfg.alpha >= 0, "alpha", "must be >= 0")
    _check(0 <= cfg.beta <= 1, "beta", "must lie in [0, 1]")
    _check(isinstance(cfg.max_new_tokens, int) and cfg.max_new_tokens >= 0, "max_new_tokens", "must be >= 0")
    try:
        decoding_config(cfg, stop_ids=())
    except (BadParam, ValueError) as e:
        raise ConfigError(f"value: {e}") from None


def parse_debias(text: str, task: str) -> dict:
    """Map a ``--debias`` flag to config values.

    ``none,unk`` means prior variants for classify/probe and ``vdd_both``
    for generate/sweep; ``naive`` and explicit ``vdd_*`` names are accepted.
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if task in ("classify", "probe"):
        return {"debias_variants": parts}
    if parts == ["naive"]:
        return {"debias": "naive"}
    if len(parts) == 1 and parts[0].startswith("vdd_"):
        return {"debias": parts[0]}
    key = tuple(sorted(set(parts)))
    mapping = {("none",): "vdd_none", ("unk",): "vdd_unk", ("none", "unk"): "vdd_both"}
    if key not in mapping:
        raise ConfigError(f"debias: cannot map {text!r} to a decoding mode")
    return {"debias": mapping[key]}


def decoding_config(cfg: RunConfig, stop_ids) -> DecodingConfig:
    strategy = Strategy(cfg.strategy)
    kw = dict(
        debias=cfg.debias,
        alpha=cfg.alpha,
        beta=cfg.beta,
        max_new_tokens=cfg.max_new_tokens,
        stop_tokens=frozenset(stop_ids),
        seed=cfg.seed,
    )
    if strategy is Strategy.GREEDY:
        return DecodingConfig.greedy(**kw)
    if cfg.value is None:
        raise BadParam(f"strategy {strategy.value} needs a value")
    if strategy is Strategy.TOP_K:
        return DecodingConfig.top_k(int(cfg.value), **kw)
    if strategy is Strategy.TEMPERATURE:
        return DecodingConfig.temperature(cfg.value, **kw)
    return DecodingConfig.top_p(cfg.value, **kw)


def load_source(cfg: RunConfig):
    (kind, value), = cfg.source.items()
    if kind == "trace":
        return load_trace(value)
    if kind == "scenario":
        return load_scenario(value)
    return ProceduralSource(ProceduralModelSpec(**value))


def load_run_prompts(cfg: RunConfig, source) -> list[Prompt]:
    if cfg.prompts is not None:
        return load_prompts(cfg.prompts)
    return source.prompts()


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(cfg: RunConfig) -> str:
    """Short content hash of the run: settings plus input file digests, no paths."""
    d = cfg.to_dict()
    d.pop("output")
    d.pop("parallelism")  # results do not depend on it
    d.pop("figures")
    if cfg.source is not None:
        (kind, value), = cfg.source.items()
        d["source"] = {kind: value if kind == "procedural" else _digest(value)}
    for k in ("prompts", "input"):
        if d[k] is not None:
            d[k] = _digest(d[k])
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]
