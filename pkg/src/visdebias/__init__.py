"""Training-free language-prior debiasing for multimodal decoders.

Post-hoc calibration of candidate-answer distributions, contrastive
("visual debias") decoding, and exhaustive decoding-configuration sweeps,
all over pluggable logit sources.
"""

from .calibration import (
    CalibrationParams,
    PriorEstimate,
    apply_posthoc_debias,
    calibration_params,
    classify_debiased,
    prior_distribution,
    score_candidates,
)
from .core import SeededRng, Vocabulary, log_softmax, softmax
from .decoding import (
    DecodingConfig,
    Debias,
    Strategy,
    build_reference_logits,
    generate,
    plausibility_head,
    sample_token,
    temperature_scale,
    top_k_filter,
    top_p_filter,
    vdd_distribution,
)
from .evaluation import classification_metrics, confidence_bins, match_answer, probe_report
from .sources import (
    ProceduralModelSpec,
    ProceduralSource,
    Prompt,
    ScenarioSource,
    TraceSource,
    Variant,
    VisualContext,
    degrade_visual,
    load_scenario,
    load_trace,
)
from .sweep import enumerate_configs, run_sweep, select_best

__version__ = "0.1.0"
