"""Questioner trait sampling for template synthesis prompts."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..numkit.rng import RngStream

TRAIT_KINDS = ("personality", "motivation", "proficiency")
SIZE_PROBS = {3: 0.27, 2: 0.45, 1: 0.18, 0: 0.10}
OPTION_PROB = 0.5
OPTION_TASKS = ("CTA", "DSP")

DEFAULT_POOLS = {
    "personality": ("curious", "impatient", "meticulous", "skeptical", "cheerful", "terse"),
    "motivation": ("validating a clustering result", "preparing a figure", "checking a hypothesis",
                   "teaching a class", "screening candidate cells"),
    "proficiency": ("novice", "intermediate", "expert"),
}


@dataclass(frozen=True)
class TraitSample:
    kinds: tuple
    values: dict = field(default_factory=dict)
    with_options: bool = False

    @property
    def size(self) -> int:
        return len(self.kinds)

    def to_dict(self) -> dict:
        return {k: self.values[k] for k in self.kinds}


def _subsets(k: int) -> list:
    return list(itertools.combinations(TRAIT_KINDS, k))


def sample_traits(rng, pools=None, task: str = "CPCG") -> TraitSample:
    """Draw a trait subset by size mixture, then uniform values; options only for CTA/DSP.

    ``rng`` is an :class:`RngStream` or an integer seed.
    """
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    pools = DEFAULT_POOLS if pools is None else pools
    for kind in TRAIT_KINDS:
        if not pools.get(kind):
            raise ValidationError(f"trait pool {kind!r} is empty")
    sizes = sorted(SIZE_PROBS)
    size = sizes[int(rng.choice(len(sizes), p=np.array([SIZE_PROBS[s] for s in sizes])))]
    options = _subsets(size)
    kinds = options[int(rng.integers(len(options)))]
    values = {k: pools[k][int(rng.integers(len(pools[k])))] for k in kinds}
    with_options = task in OPTION_TASKS and bool(rng.uniform() < OPTION_PROB)
    return TraitSample(kinds, values, with_options)
