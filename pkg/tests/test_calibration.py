import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from oracles import argmax_lowest, chain_rule_scores, close, posthoc, renormalized_candidates
from visdebias.calibration import (
    PriorEstimate,
    apply_posthoc_debias,
    calibration_params,
    classify_debiased,
    prior_distribution,
    score_candidates,
)
from visdebias.core import softmax
from visdebias.errors import BadCandidate, BadParam, InvalidDegradation, ShapeMismatch
from visdebias.sources import Prompt, Variant, VisualContext, load_prompts, load_trace

ORACLE_SCRIPT = Path(__file__).parent / "oracle_classify_script.py"
SOFTMAX_18_02 = [0.83201838513392448184, 0.16798161486607551816]
SOFTMAX_3_06_13 = [0.86191931513859194315, 0.078191556169985199087, 0.05988912869142285776]

TOKENS = ("<unk>", "</s>", "A", "B", "ye", "s", "no")


def real(sid="s0"):
    return VisualContext.real(sid)


def flat_rows(step0, steps=2):
    zero = [0.0] * len(step0)
    return {"prior": [list(step0)] + [zero] * (steps - 1), "real": [zero] * steps, "degenerate": [zero] * steps}


class TestScoreCandidates:
    def test_equal_logits_give_half(self):
        src, p = make_scenario(TOKENS, flat_rows([0.0, 0.0, 1.5, 1.5, 0.0, 0.0, 0.0]), (("A",), ("B",)))
        assert score_candidates(src, p, real()).tolist() == [0.5, 0.5]

    def test_renormalized_against_full_softmax(self):
        logits = [0.3, -1.0, 2.0, 0.75, 0.1, -0.2, 1.1]
        src, p = make_scenario(TOKENS, flat_rows(logits), (("A",), ("B",)))
        got = score_candidates(src, p, real())
        assert close(got, renormalized_candidates(logits, [2, 3]), 1e-12)
        delta = 2.0 - 0.75
        assert abs(got[0] - 1 / (1 + np.exp(-delta))) < 1e-12

    def test_chain_rule_multi_token(self):
        step0 = [0.0, -1.0, 0.2, 0.0, 1.3, -0.5, 0.9]
        step1 = [0.1, 0.4, -0.3, 0.0, 0.0, 2.2, -1.0]
        rows = {"prior": [step0, step1], "real": [[0.0] * 7] * 2, "degenerate": [[0.0] * 7] * 2}
        src, p = make_scenario(TOKENS, rows, (("ye", "s"), ("no",)))
        got = score_candidates(src, p, real())
        # step-1 logits are keyed by step, so the "no" path never reads them
        want = chain_rule_scores([step0, step1], [(4, 5), (6,)])
        assert close(got, want, 1e-12)

    def test_length_normalized_flag(self):
        step0 = [0.0, -1.0, 0.2, 0.0, 1.3, -0.5, 0.9]
        step1 = [0.1, 0.4, -0.3, 0.0, 0.0, 2.2, -1.0]
        rows = {"prior": [step0, step1], "real": [[0.0] * 7] * 2, "degenerate": [[0.0] * 7] * 2}
        src, p = make_scenario(TOKENS, rows, (("ye", "s"), ("no",)))
        ls0, ls1 = np.log(softmax(step0)), np.log(softmax(step1))
        scores = [(ls0[4] + ls1[5]) / 2, ls0[6]]
        np.testing.assert_allclose(score_candidates(src, p, real(), length_normalize=True), softmax(scores), atol=1e-12)

    def test_bad_candidate(self):
        src, p = make_scenario(TOKENS, flat_rows([0.0] * 7), (("A",), ("zebra",)))
        with pytest.raises(BadCandidate, match="zebra"):
            score_candidates(src, p, real())

    def test_needs_two_candidates(self):
        src, p = make_scenario(TOKENS, flat_rows([0.0] * 7), (("A",),))
        with pytest.raises(BadParam):
            score_candidates(src, p, real())


class TestPrior:
    def test_single_variant_identity(self):
        rows = flat_rows([0.0, 0.0, 1.0, 0.2, 0.0, 0.0, 0.0])
        rows["degenerate"] = [[0.0, 0.0, 0.4, -0.3, 0.0, 0.0, 0.0], [0.0] * 7]
        src, p = make_scenario(TOKENS, rows, (("A",), ("B",)))
        est = prior_distribution(src, p, [Variant.NONE])
        assert est.p_prime.tolist() == score_candidates(src, p, VisualContext.of("none")).tolist()
        assert est.variants_used == (Variant.NONE,)

    def test_arithmetic_mean(self):
        mean = np.mean([[0.8, 0.2], [0.6, 0.4]], axis=0)
        np.testing.assert_allclose(mean / mean.sum(), [0.7, 0.3], atol=1e-15)

    def test_fixture_mean_of_two_variants(self, fixtures_dir):
        src = load_trace(fixtures_dir / "trace.jsonl")
        for p in load_prompts(fixtures_dir / "trace_prompts.jsonl"):
            both = prior_distribution(src, p, ["none", "unk"]).p_prime
            n = prior_distribution(src, p, ["none"]).p_prime
            u = prior_distribution(src, p, ["unk"]).p_prime
            assert close(both, [(a + b) / 2 for a, b in zip(n, u)], 1e-15)

    def test_real_rejected(self):
        src, p = make_scenario(TOKENS, flat_rows([0.0] * 7), (("A",), ("B",)))
        with pytest.raises(InvalidDegradation):
            prior_distribution(src, p, [Variant.REAL])
        with pytest.raises(InvalidDegradation):
            prior_distribution(src, p, [real()])
        with pytest.raises(BadParam):
            prior_distribution(src, p, [])


class TestParams:
    def test_uniform(self):
        prm = calibration_params(np.array([0.5, 0.5]))
        assert prm.w.tolist() == [2.0, 2.0] and prm.b.tolist() == [0.0, 0.0]

    def test_clamp(self):
        assert calibration_params(np.array([1.0, 0.0]), 1e-8).w.tolist() == [1.0, 1e8]

    def test_reciprocals(self):
        np.testing.assert_allclose(calibration_params(PriorEstimate(np.array([0.2, 0.5, 0.3]), ())).w, [5, 2, 10 / 3], atol=1e-12, rtol=0)

    def test_epsilon_positive(self):
        with pytest.raises(BadParam):
            calibration_params(np.array([0.5, 0.5]), 0.0)


class TestApply:
    def test_self_cancellation_example(self):
        p = np.array([0.2, 0.5, 0.3])
        assert close(apply_posthoc_debias(p, calibration_params(p)), [1 / 3] * 3, 1e-12)

    def test_two_class_example(self):
        out = apply_posthoc_debias([0.9, 0.1], calibration_params(np.array([0.5, 0.5])))
        assert close(out, SOFTMAX_18_02, 1e-12) and close(out, posthoc([0.9, 0.1], [0.5, 0.5]), 1e-12)
        assert int(np.argmax(out)) == 0

    def test_three_class_example(self):
        out = apply_posthoc_debias([0.6, 0.3, 0.1], calibration_params(np.array([0.2, 0.5, 0.3])))
        assert close(out, SOFTMAX_3_06_13, 1e-12)
        assert int(np.argmax(out)) == 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            apply_posthoc_debias([0.5, 0.5], calibration_params(np.array([0.2, 0.5, 0.3])))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=32))
    def test_self_cancellation_property(self, raw):
        p = np.array(raw) / sum(raw)
        out = apply_posthoc_debias(p, calibration_params(p))
        assert np.abs(out - 1 / p.size).max() <= 1e-12
        assert abs(out.sum() - 1) <= 1e-9

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=32))
    def test_uniform_prior_preserves_argmax(self, raw):
        p = np.array(raw) + 1e-3
        p = p / p.sum()
        out = apply_posthoc_debias(p, calibration_params(np.full(p.size, 1 / p.size)))
        # strict order preserved, so the lowest-index argmax agrees
        assert argmax_lowest(out.tolist()) == argmax_lowest(p.tolist())


class TestClassify:
    def test_no_evidence_is_uniform(self):
        rows = flat_rows([0.0, 0.0, 1.0, 0.2, 0.0, 0.0, 0.0])
        src, p = make_scenario(TOKENS, rows, (("A",), ("B",)))
        res = classify_debiased(src, p, variants=["none"])
        assert close(res.debiased, [0.5, 0.5], 1e-12)
        assert res.label == 0 and res.no_evidence

    def test_prior_b_evidence_a(self):
        step0 = [0.0, -3.0, 0.0, 1.5, -2.0, -2.0, -2.0]
        rows = flat_rows(step0)
        rows["real"] = [[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], [0.0] * 7]
        src, p = make_scenario(TOKENS, rows, (("A",), ("B",)), ("A",))
        res = classify_debiased(src, p, variants=["none"])
        assert res.naive_label == 1 and res.label == 0 and not res.no_evidence
        naive = renormalized_candidates(np.add(step0, rows["real"][0]).tolist(), [2, 3])
        prior = renormalized_candidates(step0, [2, 3])
        assert close(res.debiased, posthoc(naive, prior), 1e-12)

    def test_prior_cancellation_randomized(self, rng):
        for _ in range(200):
            k = int(rng.integers(2, 6))
            vocab = ("<unk>",) + tuple(f"c{i}" for i in range(k)) + ("x",)
            prior = rng.normal(0, 3, len(vocab))
            evidence = rng.normal(0, 1, len(vocab))
            rows = {"prior": [prior.tolist()], "real": [evidence.tolist()], "degenerate": [[0.0] * len(vocab)]}
            src, p = make_scenario(vocab, rows, tuple((f"c{i}",) for i in range(k)))
            res = classify_debiased(src, p, variants=["none"])
            assert res.label == argmax_lowest(evidence[1 : k + 1].tolist())

    def test_requires_real_context(self):
        src, p = make_scenario(TOKENS, flat_rows([0.0] * 7), (("A",), ("B",)))
        with pytest.raises(BadParam):
            classify_debiased(src, p, VisualContext.of("none"))

    @pytest.mark.parametrize("sample", ["s0", "s1", "s2"])
    def test_fixture_matches_oracle_script(self, fixtures_dir, sample):
        out = subprocess.run(
            [sys.executable, str(ORACLE_SCRIPT), str(fixtures_dir / "trace.jsonl"), str(fixtures_dir / "trace_prompts.jsonl"), sample],
            capture_output=True, text=True, check=True,
        )
        want = json.loads(out.stdout)
        src = load_trace(fixtures_dir / "trace.jsonl")
        prompt = next(p for p in load_prompts(fixtures_dir / "trace_prompts.jsonl") if p.sample_id == sample)
        res = classify_debiased(src, prompt)
        assert res.label == want["label"]
        assert close(res.naive, want["naive"], 1e-12)
        assert close(res.debiased, want["debiased"], 1e-12)

    def test_outputs_are_distributions(self, suite):
        for p in suite.prompts():
            res = classify_debiased(suite, p)
            for v in (res.naive, res.debiased, res.prior.p_prime):
                assert abs(v.sum() - 1) <= 1e-9 and (v >= 0).all()


def test_prompt_type_round_trip():
    p = Prompt("a", ("q",), (("x", "y"), ("z",)), ("z",))
    assert Prompt.from_dict(p.to_dict()) == p
