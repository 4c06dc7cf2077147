"""Two-round factual coherency evaluation harness for language models."""
from .types import TOOL_VERSION as __version__  # noqa: F401
from .corpus import (  # noqa: F401
    AnswerIndex,
    Corpus,
    EntityFilter,
    Relation,
    Triple,
    apply_entity_filter,
    build_answer_index,
    exclusions,
    export_filter,
    load_corpus,
    save_corpus,
)
from .engine import (  # noqa: F401
    CoherencyReport,
    EvalOptions,
    InstanceResult,
    SweepReport,
    evaluate_corpus,
    evaluate_instance,
    paraphrase_sweep,
    partial_match,
)
from .oracle import brute_force_expected_coherency  # noqa: F401
from .prompting import RenderedPrompt, attach_evidence, render, sample_paraphrase  # noqa: F401
from .reporting import RunArtifact, emit_tables, example_gallery, load_artifact, save_artifact  # noqa: F401
