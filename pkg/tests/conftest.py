import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from visdebias.core import Vocabulary  # noqa: E402
from visdebias.sources import Prompt, ScenarioSample, ScenarioSource, load_scenario  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def make_scenario(tokens, rows, candidates=None, gold=None, sample_id="s0", noise_jitter=0.0):
    """One-sample scenario; ``rows`` maps prior/real/degenerate to per-step logit lists."""
    vocab = Vocabulary(tokens)
    prompt = Prompt(sample_id, ("q",), candidates, gold)
    sample = ScenarioSample(prompt, rows["prior"], rows["real"], rows["degenerate"])
    return ScenarioSource(vocab, [sample], noise_jitter=noise_jitter), prompt


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def suite():
    return load_scenario(FIXTURES / "scenario_suite.json")


@pytest.fixture(scope="session")
def bench():
    return load_scenario(FIXTURES / "prior_vs_evidence.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
