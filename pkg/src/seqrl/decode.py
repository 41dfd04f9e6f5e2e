"""Hypothesis generation: beam search, greedy decoding and ancestral sampling.

Decoders work against any object exposing ``start(srcs)`` and
``step(state, prev_tokens) -> (log_probs, state)`` where the state has a
``select(rows)`` method and an ``s`` attribute (decoder hidden states).

``max_len`` bounds the number of content tokens. A hypothesis that reaches
it without emitting EOS gets EOS appended; that step's log-probability is
added to the score but the step was not sampled, so ``terminated`` is False.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import BOS, EOS


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]  # always ends with EOS
    step_log_probs: np.ndarray
    score: float
    terminated: bool = True
    decoder_states: np.ndarray | None = None

    @property
    def content(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS else self.tokens

    @property
    def forced(self) -> bool:
        return not self.terminated

    def sampled_mask(self) -> np.ndarray:
        """1 for steps that were chosen by the policy, 0 for a forced EOS."""
        m = np.ones(len(self.tokens))
        if not self.terminated:
            m[-1] = 0.0
        return m


@dataclass
class _Entry:
    tokens: tuple[int, ...]
    score: float
    lps: tuple[float, ...]
    states: tuple[np.ndarray, ...]


def _hyp(e: _Entry, terminated: bool) -> Hypothesis:
    lps = np.array(e.lps)
    return Hypothesis(e.tokens, lps, float(lps.sum()), terminated, np.array(e.states))


def beam_search(model, src: Sequence[int], width: int, max_len: int) -> list[Hypothesis]:
    """Beam search over summed log-probabilities, best first.

    Candidates ending in EOS move to the finished set while the live beam
    refills from the rest of the pool. Ties go to the lower token id, then
    to the earlier parent.
    """
    if width < 1 or max_len < 1:
        raise ValueError("width and max_len must be >= 1")
    state = model.start([src])
    live = [_Entry((), 0.0, (), ())]
    finished: list[_Entry] = []
    for _ in range(max_len):
        prev = np.array([e.tokens[-1] if e.tokens else BOS for e in live])
        logp, state = model.step(state, prev)
        parent, tok = np.nonzero(np.isfinite(logp))
        cand = np.array([live[i].score for i in parent]) + logp[parent, tok]
        order = np.lexsort((parent, tok, -cand))
        next_live, rows = [], []
        for k in order:
            i, v = int(parent[k]), int(tok[k])
            e = live[i]
            new = _Entry(e.tokens + (v,), float(cand[k]), e.lps + (float(logp[i, v]),), e.states + (state.s[i],))
            if v == EOS:
                finished.append(new)
                if len(finished) >= width:
                    break
            else:
                next_live.append(new)
                rows.append(i)
                if len(next_live) == width:
                    break
        if len(finished) >= width or not next_live:
            live = []
            break
        live = next_live
        state = state.select(rows)
    if live:
        # force-terminate: EOS appended with its log-probability counted
        prev = np.array([e.tokens[-1] for e in live])
        logp, state = model.step(state, prev)
        forced = [
            _Entry(e.tokens + (EOS,), e.score + float(logp[i, EOS]), e.lps + (float(logp[i, EOS]),), e.states + (state.s[i],))
            for i, e in enumerate(live)
        ]
    else:
        forced = []
    ranked = sorted(
        [(e, True) for e in finished] + [(e, False) for e in forced],
        key=lambda item: -item[0].score,
    )
    return [_hyp(e, term) for e, term in ranked[:width]]


def greedy_decode(model, src: Sequence[int], max_len: int) -> Hypothesis:
    state = model.start([src])
    tokens, lps, states = [], [], []
    prev = BOS
    for _ in range(max_len):
        logp, state = model.step(state, np.array([prev]))
        prev = int(np.argmax(logp[0]))
        tokens.append(prev)
        lps.append(float(logp[0, prev]))
        states.append(state.s[0])
        if prev == EOS:
            return Hypothesis(tuple(tokens), np.array(lps), float(np.sum(lps)), True, np.array(states))
    logp, state = model.step(state, np.array([prev]))
    tokens.append(EOS)
    lps.append(float(logp[0, EOS]))
    states.append(state.s[0])
    return Hypothesis(tuple(tokens), np.array(lps), float(np.sum(lps)), False, np.array(states))


def sample_batch(model, srcs: Sequence[Sequence[int]], max_len: int, rng: np.random.Generator) -> list[Hypothesis]:
    """Draw one temperature-1 sample per source; one uniform per row per step."""
    B = len(srcs)
    state = model.start(srcs)
    prev = np.full(B, BOS)
    active = np.ones(B, dtype=bool)
    tokens = [[] for _ in range(B)]
    lps = [[] for _ in range(B)]
    states = [[] for _ in range(B)]
    terminated = np.zeros(B, dtype=bool)
    for t in range(max_len + 1):
        logp, state = model.step(state, prev)
        if t == max_len:
            draw = np.full(B, EOS)
        else:
            cdf = np.cumsum(np.exp(logp), axis=1)
            u = rng.random(B) * cdf[:, -1]
            draw = np.minimum((cdf <= u[:, None]).sum(axis=1), logp.shape[1] - 1)
        for b in np.nonzero(active)[0]:
            v = int(draw[b])
            tokens[b].append(v)
            lps[b].append(float(logp[b, v]))
            states[b].append(state.s[b])
            if v == EOS:
                active[b] = False
                terminated[b] = t < max_len
        if not active.any():
            break
        prev = draw
    return [
        Hypothesis(tuple(tokens[b]), np.array(lps[b]), float(np.sum(lps[b])), bool(terminated[b]), np.array(states[b]))
        for b in range(B)
    ]


def multinomial_sample(model, src: Sequence[int], max_len: int, rng: np.random.Generator) -> Hypothesis:
    return sample_batch(model, [src], max_len, rng)[0]


def translate(model, srcs: Sequence[Sequence[int]], width: int, max_len: int) -> list[tuple[int, ...]]:
    """Top-1 beam output (content tokens only) for each source."""
    return [beam_search(model, src, width, max_len)[0].content for src in srcs]
