"""Filter, deduplicate and rewrite candidate templates."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from ..errors import ValidationError
from ..numkit.rng import RngStream
from .records import MAX_WORDS, TemplateRecord, filter_response, filter_template
from .rouge import max_rouge_l
from .traits import sample_traits


@dataclass
class DedupResult:
    accepted: list
    counters: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.accepted)


def dedup_pipeline(source, task: str, target_count: int, threshold: float = 0.75, max_rewrites: int = 3,
                   seed: int = 0, max_words: int = MAX_WORDS, pools=None, max_rounds: int | None = None) -> DedupResult:
    """Collect up to ``target_count`` templates whose instructions stay at most
    ``threshold`` ROUGE-L from every earlier acceptance.

    A candidate above the threshold is sent back for rewriting up to
    ``max_rewrites`` times and discarded if still too similar. Rewrites that
    fail the instruction filter are discarded as well.
    """
    if not 0 < threshold <= 1:
        raise ValidationError(f"threshold must lie in (0, 1], got {threshold}")
    if max_rewrites < 0:
        raise ValidationError("max_rewrites must be non-negative")
    rng = RngStream(seed)
    accepted: list = []
    texts: list = []
    c = dict.fromkeys(("proposed", "filtered_instruction", "filtered_response", "rewrites",
                       "discarded_similar", "accepted"), 0)
    rounds = 0
    while len(accepted) < target_count and (max_rounds is None or rounds < max_rounds):
        traits = sample_traits(rng.spawn(rounds), pools, task)
        rounds += 1
        cand = source.propose(task, traits)
        if cand is None:
            break
        c["proposed"] += 1
        if not filter_template(cand.instruction, task, cand.has_options, max_words):
            c["filtered_instruction"] += 1
            continue
        sim = max_rouge_l(cand.instruction, texts)
        tries = 0
        while sim > threshold and tries < max_rewrites:
            tries += 1
            c["rewrites"] += 1
            new = source.rewrite(task, cand, traits)
            if new is None:
                break
            cand = new
            if not filter_template(cand.instruction, task, cand.has_options, max_words):
                break
            sim = max_rouge_l(cand.instruction, texts)
        if sim > threshold or not filter_template(cand.instruction, task, cand.has_options, max_words):
            c["discarded_similar"] += 1
            continue
        if not filter_response(cand.response, task, max_words):
            c["filtered_response"] += 1
            continue
        accepted.append(TemplateRecord(task, cand.instruction, cand.response, cand.traits, cand.has_options))
        texts.append(cand.instruction)
        c["accepted"] += 1
    msgs = []
    if len(accepted) < target_count:
        msgs.append(f"source exhausted after {c['proposed']} candidates: {len(accepted)} of {target_count} accepted")
        warnings.warn(msgs[-1], stacklevel=2)
    return DedupResult(accepted, c, msgs)
