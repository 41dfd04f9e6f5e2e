"""Exhaustive enumeration of the output space for tiny models.

Used as ground truth for beam search, expected rewards and policy
gradients. The traversal here is a breadth-first layer expansion written
independently of :mod:`seqrl.decode`; only the model's ``start``/``step``
interface is shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import BOS, EOS
from .decode import Hypothesis
from .metrics import BleuConfig, sentence_reward
from .model import ModelParams, batch_backward

DEFAULT_BUDGET = 10**6


class SpaceTooLarge(RuntimeError):
    pass


@dataclass
class EnumeratedSpace:
    sequences: list[tuple[tuple[int, ...], float]]  # (EOS-terminated tokens, sampling probability)
    scores: list[float]  # log-score, includes the EOS step of force-terminated sequences
    forced: list[bool]

    @property
    def total_mass(self) -> float:
        return float(sum(p for _, p in self.sequences))

    def __len__(self) -> int:
        return len(self.sequences)


def enumerate_sequences(model, src: Sequence[int], max_len: int, budget: int = DEFAULT_BUDGET) -> EnumeratedSpace:
    """All outcomes of ancestral sampling with at most ``max_len`` content tokens.

    A sequence that has not produced EOS after ``max_len`` tokens is closed
    with EOS; its probability is the prefix probability (the closing step is
    not drawn) while its score adds the EOS log-probability.
    """
    state = model.start([src])
    logp0, _ = model.step(state, np.array([BOS]))
    n_out = int(np.isfinite(logp0[0]).sum())
    if float(n_out) ** max_len > budget:
        raise SpaceTooLarge(f"{n_out}^{max_len} outcomes exceed budget {budget}")

    seqs, scores, forced = [], [], []
    prefixes: list[tuple[int, ...]] = [()]
    logmass = np.zeros(1)
    for depth in range(max_len + 1):
        if not prefixes:
            break
        prev = np.array([pfx[-1] if pfx else BOS for pfx in prefixes])
        logp, state = model.step(state, prev)
        if depth == max_len:
            for i, pfx in enumerate(prefixes):
                seqs.append((pfx + (EOS,), float(np.exp(logmass[i]))))
                scores.append(float(logmass[i] + logp[i, EOS]))
                forced.append(True)
            break
        nxt, rows, nxt_mass = [], [], []
        for i, pfx in enumerate(prefixes):
            for v in range(logp.shape[1]):
                lp = logp[i, v]
                if not np.isfinite(lp):
                    continue
                if v == EOS:
                    seqs.append((pfx + (EOS,), float(np.exp(logmass[i] + lp))))
                    scores.append(float(logmass[i] + lp))
                    forced.append(False)
                else:
                    nxt.append(pfx + (v,))
                    rows.append(i)
                    nxt_mass.append(logmass[i] + lp)
        prefixes, logmass = nxt, np.array(nxt_mass)
        if rows:
            state = state.select(rows)
    return EnumeratedSpace(seqs, scores, forced)


def _reward_fn(cfg: BleuConfig, reward: Callable | None):
    if reward is not None:
        return reward
    return lambda content, ref: sentence_reward(content, ref, cfg)


def expected_reward(
    model, src, ref, max_len: int, cfg: BleuConfig = BleuConfig(), reward: Callable | None = None
) -> float:
    fn = _reward_fn(cfg, reward)
    space = enumerate_sequences(model, src, max_len)
    return float(sum(p * fn(toks[:-1], ref) for toks, p in space.sequences))


def exact_policy_gradient(
    params: ModelParams, src, ref, max_len: int, cfg: BleuConfig = BleuConfig(), reward: Callable | None = None
) -> dict[str, np.ndarray]:
    """``sum_y p(y) R(y) grad log p(y)`` by enumeration (gradient of the expected reward)."""
    fn = _reward_fn(cfg, reward)
    space = enumerate_sequences(params, src, max_len)
    tgts, weights = [], []
    for (toks, p), f in zip(space.sequences, space.forced):
        w = np.full(len(toks), p * fn(toks[:-1], ref))
        if f:
            w[-1] = 0.0
        tgts.append(toks)
        weights.append(w)
    grads, _ = batch_backward(params, [src] * len(tgts), tgts, weights)
    return {k: -g for k, g in grads.items()}


def exact_baseline_term(params: ModelParams, src, baselines: Sequence[float], max_len: int) -> dict[str, np.ndarray]:
    """``sum_y p(y) sum_t b_t grad log p(y_t | ...)`` over sampled steps; zero in exact arithmetic."""
    space = enumerate_sequences(params, src, max_len)
    b = np.asarray(baselines, dtype=float)
    tgts, weights = [], []
    for (toks, p), f in zip(space.sequences, space.forced):
        w = p * b[: len(toks)]
        if f:
            w = w.copy()
            w[-1] = 0.0
        tgts.append(toks)
        weights.append(w)
    grads, _ = batch_backward(params, [src] * len(tgts), tgts, weights)
    return {k: -g for k, g in grads.items()}


def exhaustive_best(model, src, max_len: int) -> Hypothesis:
    """Highest-scoring complete sequence; ties go to the smaller token sequence."""
    space = enumerate_sequences(model, src, max_len)
    best = min(range(len(space)), key=lambda i: (-space.scores[i], space.sequences[i][0]))
    toks = space.sequences[best][0]
    return Hypothesis(toks, np.array([]), space.scores[best], not space.forced[best])
