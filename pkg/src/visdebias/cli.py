"""Command-line entry point.

    visdebias make-fixtures --output fixtures --seed 0
    visdebias classify --config fixtures/classify.json --debias none,unk
    visdebias sweep --config fixtures/sweep.json --mode oracle --parallelism 8
    visdebias probe --config fixtures/probe.json --top-n 15
    visdebias eval --input results/classify-<hash>-s0.jsonl

Exit status: 0 on success, 2 on configuration errors, 1 on runtime errors
(results written so far are kept).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import plotting
from .calibration import classify_debiased
from .config import (
    RunConfig,
    build_config,
    config_hash,
    decoding_config,
    load_run_prompts,
    load_source,
    parse_debias,
    read_config_file,
)
from .decoding import generate
from .errors import ConfigError, DebiasError, NotBinary, error_record
from .evaluation import (
    EvalRecord,
    accuracy,
    classification_metrics,
    confidence_bins,
    match_answer,
    probe_report,
    probe_tsv,
)
from .fixtures import make_fixtures
from .sweep import config_accuracy, run_sweep, summarize

log = logging.getLogger("visdebias")


def _r12(values) -> list[float]:
    return [round(float(v), 12) for v in values]


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class Run:
    """Output naming and bookkeeping shared by every task."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output)
        self.stem = f"{cfg.task}-{config_hash(cfg)}-s{cfg.seed}"

    def path(self, suffix: str) -> Path:
        return self.out / f"{self.stem}{suffix}"

    def start(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.path(".config.json").write_text(_dump(self.cfg.to_dict()), encoding="utf-8")

    def write_summary(self, summary: dict) -> None:
        self.path(".summary.json").write_text(_dump(summary), encoding="utf-8")

    @property
    def parallelism(self) -> int:
        return self.cfg.parallelism or os.cpu_count() or 1


def _stop_ids(cfg: RunConfig, source) -> list[int]:
    missing = [t for t in cfg.stop_tokens if t not in source.vocab]
    if missing:
        raise ConfigError(f"stop_tokens: {missing[0]!r} is not in the source vocabulary")
    return [source.vocab.id(t) for t in cfg.stop_tokens]


# -- eval helpers -------------------------------------------------------------


def _classify_eval_records(rows: list[dict]) -> dict[str, list[EvalRecord]]:
    out = {"naive": [], "debiased": []}
    for row in rows:
        if "error" in row or row.get("gold") is None:
            continue
        answers = row["answers"]
        naive = row["naive"]
        naive_label = max(range(len(naive)), key=lambda i: (naive[i], -i))
        gold = answers[row["gold"]]
        out["naive"].append(EvalRecord(row["sample"], answers[naive_label], gold, min(max(naive), 1.0)))
        out["debiased"].append(EvalRecord(row["sample"], answers[row["label"]], gold, min(max(row["debiased"]), 1.0)))
    return out


def _generation_eval_records(rows: list[dict]) -> dict[str, list[EvalRecord]]:
    recs = [
        EvalRecord(r["sample"], r["text"], r["gold"], min(r["confidence"], 1.0))
        for r in rows
        if "error" not in r and r.get("gold") is not None
    ]
    return {"generated": recs}


def evaluate_sets(sets: dict[str, list[EvalRecord]], positive_label: str | None, bins: int) -> tuple[dict, dict]:
    summary, bin_reports = {}, {}
    for name, recs in sets.items():
        if not recs:
            summary[name] = {"records": 0}
            continue
        entry = {"records": len(recs), "accuracy": accuracy(recs)}
        if positive_label is not None:
            try:
                entry["metrics"] = classification_metrics(recs, positive_label).to_dict()
            except NotBinary as e:
                entry["metrics"] = None
                entry["metrics_note"] = str(e)
        rep = confidence_bins(recs, bins)
        bin_reports[name] = rep
        entry["bins"] = rep.to_dict()
        summary[name] = entry
    return summary, bin_reports


# -- tasks --------------------------------------------------------------------


def task_classify(run: Run) -> int:
    cfg = run.cfg
    source = load_source(cfg)
    prompts = load_run_prompts(cfg, source)
    rows, failures = [], 0
    with open(run.path(".jsonl"), "w", encoding="utf-8") as f:
        for prompt in prompts:
            try:
                res = classify_debiased(
                    source,
                    prompt,
                    variants=cfg.debias_variants,
                    epsilon=cfg.epsilon,
                    global_seed=cfg.seed,
                    length_normalize=cfg.length_normalize,
                )
                row = {
                    "sample": res.sample_id,
                    "naive": _r12(res.naive),
                    "debiased": _r12(res.debiased),
                    "label": res.label,
                    "prior_variants": [v.value for v in res.prior.variants_used],
                    "prior": _r12(res.prior.p_prime),
                    "answers": ["".join(c) for c in prompt.candidates],
                    "gold": res.gold,
                    "no_evidence": res.no_evidence,
                }
            except DebiasError as e:
                failures += 1
                row = {"sample": prompt.sample_id, "error": error_record(e)}
            rows.append(row)
            f.write(json.dumps(row, sort_keys=True) + "\n")
    positive = cfg.positive_label or (prompts[0].candidates and "".join(prompts[0].candidates[0]))
    sets = _classify_eval_records(rows)
    summary, bins = evaluate_sets(sets, positive, cfg.bins)
    summary = {
        "task": "classify",
        "samples": len(rows),
        "errors": failures,
        "prior_variants": list(cfg.debias_variants),
        "no_evidence": sum(bool(r.get("no_evidence")) for r in rows),
        **summary,
    }
    run.write_summary(summary)
    if cfg.figures and bins:
        plotting.plot_confidence_bins(bins, run.path(".png"), title="Accuracy by confidence: naive vs debiased")
    acc = {k: summary[k].get("accuracy") for k in sets}
    print(f"classify: {len(rows)} samples, {failures} errors, naive acc {acc['naive']}, debiased acc {acc['debiased']} -> {run.path('.jsonl')}")
    return 1 if failures else 0


def task_generate(run: Run) -> int:
    cfg = run.cfg
    source = load_source(cfg)
    prompts = load_run_prompts(cfg, source)
    stops = _stop_ids(cfg, source)
    dc = decoding_config(cfg, stops)
    rows, failures = [], 0
    dump = open(run.path(".steps.jsonl"), "w", encoding="utf-8") if cfg.debug_dump else None
    try:
        with open(run.path(".jsonl"), "w", encoding="utf-8") as f:
            for prompt in prompts:
                gold = None if prompt.gold is None else "".join(prompt.gold)
                try:
                    gen = generate(source, prompt, dc)
                    text = source.vocab.decode(gen.tokens, skip=stops)
                    row = {
                        "sample": prompt.sample_id,
                        "tokens": gen.tokens,
                        "text": text,
                        "gold": gold,
                        "correct": gold is not None and match_answer(text, gold),
                        "confidence": round(gen.confidence, 12),
                    }
                    if dump:
                        for s in gen.steps:
                            dump.write(json.dumps({"sample": prompt.sample_id, **s.to_dict()}, sort_keys=True) + "\n")
                except DebiasError as e:
                    failures += 1
                    row = {"sample": prompt.sample_id, "gold": gold, "error": error_record(e)}
                rows.append(row)
                f.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if dump:
            dump.close()
    summary, bins = evaluate_sets(_generation_eval_records(rows), cfg.positive_label, cfg.bins)
    run.write_summary({"task": "generate", "samples": len(rows), "errors": failures, "config": dc.label, "debias": dc.debias.value, **summary})
    if cfg.figures and bins:
        plotting.plot_confidence_bins(bins, run.path(".png"))
    print(f"generate: {len(rows)} samples, {failures} errors, accuracy {summary['generated'].get('accuracy')} -> {run.path('.jsonl')}")
    return 1 if failures else 0


def task_sweep(run: Run) -> int:
    cfg = run.cfg
    source = load_source(cfg)
    prompts = load_run_prompts(cfg, source)
    base = decoding_config(cfg, _stop_ids(cfg, source))
    result = run_sweep(source, prompts, base, parallelism=run.parallelism)
    run.path(".jsonl").write_text(result.to_jsonl(), encoding="utf-8")
    summary = summarize(result, cfg.mode)
    summary["debias"] = base.debias.value
    summary["per_config"] = {k: round(v, 12) for k, v in config_accuracy(result).items()}
    run.write_summary(summary)
    if cfg.figures:
        plotting.plot_sweep(summary["per_config"], summary, run.path(".png"))
    g = summary["groups"]
    print(
        f"sweep ({summary['mode']}): temp {g['temp']} top_k {g['top_k']} top_p {g['top_p']} overall {g['overall']} "
        f"default {summary['default']} ({summary['records']} records, {summary['errors']} errors) -> {run.path('.jsonl')}"
    )
    return 1 if summary["errors"] else 0


def task_probe(run: Run) -> int:
    cfg = run.cfg
    source = load_source(cfg)
    prompts = [p for p in load_run_prompts(cfg, source) if p.candidates]
    report = probe_report(source, prompts, cfg.debias_variants, cfg.top_n, cfg.seed)
    run.path(".tsv").write_text(probe_tsv(report), encoding="utf-8")
    run.write_summary(
        {
            "task": "probe",
            "prompts": len(prompts),
            "top_n": cfg.top_n,
            "top_answer": {v: rows[0].answer for v, rows in report.items()},
        }
    )
    if cfg.figures:
        plotting.plot_probe(report, run.path(".png"))
    print(f"probe: {len(prompts)} prompts, {len(report)} variants -> {run.path('.tsv')}")
    return 0


def task_eval(run: Run) -> int:
    cfg = run.cfg
    rows = [json.loads(line) for line in Path(cfg.input).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not rows:
        raise ConfigError(f"input: {cfg.input} holds no records")
    if any("debiased" in r for r in rows):
        kind, sets = "classify", _classify_eval_records(rows)
    elif any("config_index" in r for r in rows):
        kind = "sweep"
        sets = {"default": _generation_eval_records([r for r in rows if r["group"] == "default"])["generated"]}
    else:
        kind, sets = "generate", _generation_eval_records(rows)
    summary, bins = evaluate_sets(sets, cfg.positive_label, cfg.bins)
    run.write_summary({"task": "eval", "input_kind": kind, **summary})
    for name, rep in bins.items():
        run.path(f".{name}.bins.csv").write_text(rep.to_csv(), encoding="utf-8")
    if cfg.figures and bins:
        plotting.plot_confidence_bins(bins, run.path(".png"))
    accs = ", ".join(f"{k} {v.get('accuracy')}" for k, v in summary.items())
    print(f"eval ({kind}): {accs} -> {run.path('.summary.json')}")
    return 0


TASK_RUNNERS = {
    "classify": task_classify,
    "generate": task_generate,
    "sweep": task_sweep,
    "probe": task_probe,
    "eval": task_eval,
}


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (schema vdd-run/1)")
    common.add_argument("--seed", type=int, help="global seed (fallback: $VDD_SEED)")
    common.add_argument("--parallelism", type=int, help="worker threads (default: logical cores)")
    common.add_argument("--alpha", type=float, help="contrast amplification")
    common.add_argument("--beta", type=float, help="plausibility cut-off")
    common.add_argument("--debias", help="comma list: none,unk,... or naive / vdd_none / vdd_unk / vdd_both")
    common.add_argument("--output", help="output directory")
    common.add_argument("--trace", help="trace file source")
    common.add_argument("--scenario", help="scenario file source")
    common.add_argument("--prompts", help="prompts file (vdd-prompts/1)")
    common.add_argument("--strategy", choices=["greedy", "temperature", "top_k", "top_p"])
    common.add_argument("--value", type=float, help="temperature, k or nucleus mass")
    common.add_argument("--max-new-tokens", type=int, dest="max_new_tokens")
    common.add_argument("--mode", choices=["oracle", "fixed"], help="sweep best-of selection")
    common.add_argument("--top-n", type=int, dest="top_n")
    common.add_argument("--bins", type=int)
    common.add_argument("--positive-label", dest="positive_label")
    common.add_argument("--input", help="results file to evaluate")
    common.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    common.add_argument("--debug-dump", dest="debug_dump", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="visdebias", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("probe", "classify", "generate", "sweep", "eval"):
        sub.add_parser(name, parents=[common])
    mf = sub.add_parser("make-fixtures")
    mf.add_argument("--output", default="fixtures")
    mf.add_argument("--seed", type=int)
    return parser


def _overrides(args, task: str) -> dict:
    keys = (
        "seed", "parallelism", "alpha", "beta", "output", "prompts", "strategy", "value",
        "max_new_tokens", "mode", "top_n", "bins", "positive_label", "input", "figures", "debug_dump",
    )
    ov = {k: getattr(args, k) for k in keys}
    ov["task"] = task
    if args.trace and args.scenario:
        raise ConfigError("source: give only one of --trace / --scenario")
    if args.trace:
        ov["source"] = {"trace": args.trace}
    elif args.scenario:
        ov["source"] = {"scenario": args.scenario}
    if args.debias:
        ov.update(parse_debias(args.debias, task))
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "make-fixtures":
        seed = args.seed if args.seed is not None else int(os.environ.get("VDD_SEED", 0))
        try:
            hashes = make_fixtures(args.output, seed)
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        print(f"make-fixtures: wrote {len(hashes)} files to {args.output} (seed {seed})")
        return 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        file_values.pop("task", None)
        cfg = build_config(file_values, _overrides(args, args.command))
        run = Run(cfg)
        run.start()
        return TASK_RUNNERS[cfg.task](run)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DebiasError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
