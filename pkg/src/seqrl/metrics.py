"""Smoothed sentence reward, shaped per-step rewards and corpus BLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EOS


class EmptyReference(ValueError):
    pass


class ListMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BleuConfig:
    max_order: int = 4
    multiply_by_ref_len: bool = True

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")


@dataclass
class RewardTrace:
    terminal: float
    shaped: np.ndarray
    returns: np.ndarray
    baselines: np.ndarray | None = None
    advantages: np.ndarray | None = None


def _content(tokens: Sequence[int]) -> list[int]:
    return [t for t in tokens if t != EOS]


def ngram_counts(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_reward(hyp: Sequence[int], ref: Sequence[int], cfg: BleuConfig = BleuConfig()) -> float:
    """Add-one smoothed sentence BLEU, scaled by the reference length.

    EOS ids are ignored on both sides. An empty hypothesis scores 0.
    """
    hyp, ref = _content(hyp), _content(ref)
    if not ref:
        raise EmptyReference("reference is empty")
    if not hyp:
        return 0.0
    log_prec = 0.0
    for n in range(1, cfg.max_order + 1):
        h, r = ngram_counts(hyp, n), ngram_counts(ref, n)
        matches = sum(min(c, r[g]) for g, c in h.items())
        log_prec += math.log((matches + 1) / (sum(h.values()) + 1))
    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    score = bp * math.exp(log_prec / cfg.max_order)
    return score * len(ref) if cfg.multiply_by_ref_len else score


def shaped_rewards(hyp: Sequence[int], ref: Sequence[int], cfg: BleuConfig = BleuConfig()) -> RewardTrace:
    """Per-step reward increments of prefix scores, plus their suffix sums.

    One entry per position of ``hyp``; a trailing EOS gets a zero increment.
    """
    prefix = np.array([0.0] + [sentence_reward(hyp[: t + 1], ref, cfg) for t in range(len(hyp))])
    shaped = np.diff(prefix)
    returns = np.cumsum(shaped[::-1])[::-1].copy()
    terminal = float(prefix[-1])
    return RewardTrace(terminal=terminal, shaped=shaped, returns=returns)


def corpus_bleu(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]], max_order: int = 4) -> float:
    """Standard unsmoothed corpus BLEU in [0, 100] with brevity penalty."""
    if len(hyps) != len(refs):
        raise ListMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp, ref = _content(hyp), _content(ref)
        if not ref:
            raise EmptyReference("reference is empty")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = ngram_counts(hyp, n), ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += sum(h.values())
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec)
