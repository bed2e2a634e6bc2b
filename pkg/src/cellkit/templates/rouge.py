"""ROUGE-L F-measure over normalized word tokens."""
from __future__ import annotations

import re
import string

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def tokenize(text: str) -> list:
    """Lowercase, replace ASCII punctuation with spaces, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


def lcs_length(a, b) -> int:
    """Longest common subsequence length of two token sequences.

    Bit-parallel: one bit per position of ``a``, one pass over ``b``.
    """
    if not a or not b:
        return 0
    masks: dict = {}
    for i, tok in enumerate(a):
        masks[tok] = masks.get(tok, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for tok in b:
        m = masks.get(tok, 0)
        u = v & m
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_l(candidate: str, reference: str) -> float:
    """F1 of LCS precision (over the candidate) and recall (over the reference)."""
    c, r = tokenize(candidate), tokenize(reference)
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 2.0 * p * rec / (p + rec)


def max_rouge_l(candidate: str, references) -> float:
    return max((rouge_l(candidate, ref) for ref in references), default=0.0)
