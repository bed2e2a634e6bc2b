"""Instruction-response template construction."""
from .pipeline import DedupResult, dedup_pipeline
from .records import (
    BANNED_ENTITIES,
    MAX_WORDS,
    OPTIONAL,
    REQUIRED,
    TASKS,
    FilterDecision,
    TemplateRecord,
    fill_template,
    filter_response,
    filter_template,
    load_templates,
    placeholders,
    save_templates,
    split_templates,
    word_count,
)
from .rouge import lcs_length, max_rouge_l, rouge_l, tokenize
from .sources import CannedTemplateSource, HttpTemplateSource, TemplateSource, TemplateSourceError
from .traits import DEFAULT_POOLS, OPTION_PROB, SIZE_PROBS, TRAIT_KINDS, TraitSample, sample_traits
