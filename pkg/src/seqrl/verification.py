"""Self-checks run by ``seqrl verify``: each suite compares a component
against a brute-force or closed-form reference on tiny instances."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .corpus import EOS
from .decode import beam_search, greedy_decode, sample_batch
from .metrics import BleuConfig, sentence_reward, shaped_rewards
from .model import ModelConfig, ModelParams, batch_backward, finite_difference_check, init_model
from .oracle import enumerate_sequences, exact_baseline_term, exact_policy_gradient, exhaustive_best, expected_reward
from .rltrain import Batch, TrainConfig, blend, mle_gradient, rl_gradient
from .corpus import SentencePair


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def random_tiny_model(seed: int, n_out: int = 4, src_vocab: int = 6, dim: int = 3, scale: float = 0.5) -> ModelParams:
    """Random model with ``n_out`` emittable target tokens and non-zero biases."""
    rng = np.random.default_rng(10_000 + seed)
    cfg = ModelConfig(src_vocab_size=src_vocab, tgt_vocab_size=n_out + 2, embed_dim=dim, hidden_dim=dim, seed=seed, param_init_scale=scale)
    p = init_model(cfg)
    for name in ("enc_b", "dec_b", "out_b"):
        p.tensors[name] = rng.uniform(-scale, scale, p.tensors[name].shape)
    return p


def constant_policy_model(probs: dict[int, float], tgt_vocab_size: int = 4) -> ModelParams:
    """A model whose output distribution is the same at every step (all weights zero)."""
    cfg = ModelConfig(src_vocab_size=5, tgt_vocab_size=tgt_vocab_size, embed_dim=2, hidden_dim=2, param_init_scale=0.0)
    p = init_model(cfg)
    b = np.full(tgt_vocab_size, -1e9)
    for tok, pr in probs.items():
        b[tok] = math.log(pr)
    p.tensors["out_b"] = b
    return p


def brute_sentence_reward(hyp, ref, max_order: int = 4, times_ref_len: bool = True) -> float:
    """Symbol-by-symbol add-one smoothed BLEU using list scans only."""
    hyp = [t for t in hyp if t != EOS]
    ref = [t for t in ref if t != EOS]
    if not hyp:
        return 0.0
    total = 0.0
    for n in range(1, max_order + 1):
        hg = [tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1)]
        rg = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
        seen, clipped = [], 0
        for g in hg:
            if g in seen:
                continue
            seen.append(g)
            clipped += min(hg.count(g), rg.count(g))
        total += math.log((clipped + 1.0) / (len(hg) + 1.0))
    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(total / max_order) * (len(ref) if times_ref_len else 1.0)


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> SuiteResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing suite is a failing suite
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return SuiteResult(name, ok, detail, time.perf_counter() - t0)


def suite_gradient(n_models: int = 100) -> tuple[bool, str]:
    worst = 0.0
    for s in range(n_models):
        rng = np.random.default_rng(s)
        p = random_tiny_model(s, n_out=3)
        src = list(rng.integers(4, 6, size=rng.integers(1, 5)))
        tgt = list(rng.integers(2, p.config.tgt_vocab_size, size=rng.integers(1, 5)))
        w = rng.normal(size=len(tgt))
        worst = max(worst, finite_difference_check(p, src, tgt, 1e-5, w))
    return worst <= 1e-4, f"max relative error {worst:.2e} over {n_models} models"


def v2_instance():
    """Two outcomes: content token 3 (p=0.7, reward 1) or immediate EOS (p=0.3, reward 0)."""
    return constant_policy_model({3: 0.7, EOS: 0.3}), [4], (3,)


def suite_policy_gradient(n_samples: int = 100_000, seed: int = 0) -> tuple[bool, str]:
    p, src, ref = v2_instance()
    exact = exact_policy_gradient(p, src, ref, 1)["out_b"]
    closed = np.array([0.21, -0.21])
    got = np.array([exact[3], exact[EOS]])
    ok_closed = np.allclose(got, closed, atol=1e-9)

    rng = np.random.default_rng(seed)
    hyps = sample_batch(p, [src] * n_samples, 1, rng)
    weights = [sentence_reward(h.content, ref) * h.sampled_mask() for h in hyps]
    g, _ = batch_backward(p, [src] * n_samples, [h.tokens for h in hyps], weights)
    mc = -np.array([g["out_b"][3], g["out_b"][EOS]]) / n_samples
    mc_err = float(np.max(np.abs(mc - closed) / np.abs(closed)))

    eps = 1e-5
    fd = []
    for tok in (3, EOS):
        q = p.copy()
        q.tensors["out_b"][tok] += eps
        up = expected_reward(q, src, ref, 1)
        q.tensors["out_b"][tok] -= 2 * eps
        down = expected_reward(q, src, ref, 1)
        fd.append((up - down) / (2 * eps))
    fd_err = float(np.max(np.abs(np.array(fd) - got) / np.maximum(np.abs(got), 1e-8)))
    ok = ok_closed and mc_err <= 0.05 and fd_err <= 1e-4
    return ok, f"oracle {got.round(6).tolist()}, MC rel err {mc_err:.3f}, FD rel err {fd_err:.1e}"


def suite_baseline_unbiased(n_vectors: int = 20, max_len: int = 3) -> tuple[bool, str]:
    worst = 0.0
    for s in range(n_vectors):
        rng = np.random.default_rng(s)
        p = random_tiny_model(s, n_out=3)
        b = rng.normal(scale=3.0, size=max_len + 1)
        term = exact_baseline_term(p, [4, 5], b, max_len)
        worst = max(worst, max(float(np.max(np.abs(v))) for v in term.values()))
    return worst <= 1e-8, f"max |E[sum_t b_t grad log p]| = {worst:.1e} over {n_vectors} baselines"


def suite_reward(n_pairs: int = 1000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = worst_tel = 0.0
    for _ in range(n_pairs):
        hyp = list(rng.integers(4, 8, size=rng.integers(0, 9)))
        ref = list(rng.integers(4, 8, size=rng.integers(1, 9)))
        worst = max(worst, abs(sentence_reward(hyp, ref) - brute_sentence_reward(hyp, ref)))
        tr = shaped_rewards(hyp + [EOS], ref)
        worst_tel = max(worst_tel, abs(tr.shaped.sum() - tr.terminal))
    perfect = sentence_reward([4, 5, 6, 7, 4], [4, 5, 6, 7, 4])
    ok = worst <= 1e-9 and worst_tel <= 1e-9 and perfect == 5.0
    return ok, f"oracle gap {worst:.1e}, telescoping gap {worst_tel:.1e}, perfect match {perfect}"


def suite_beam(n_models: int = 100, max_len: int = 3) -> tuple[bool, str]:
    mismatches = greedy_diff = non_mono = 0
    for s in range(n_models):
        cfg = ModelConfig(src_vocab_size=6, tgt_vocab_size=6, embed_dim=3, hidden_dim=3, seed=s)
        p = init_model(cfg)
        src = [4, 5, 4]
        K = 4**max_len
        if beam_search(p, src, K, max_len)[0].tokens != exhaustive_best(p, src, max_len).tokens:
            mismatches += 1
        if beam_search(p, src, 1, max_len)[0].tokens != greedy_decode(p, src, max_len).tokens:
            greedy_diff += 1
        best = [beam_search(p, src, k, max_len)[0].score for k in range(1, 7)]
        if any(b2 < b1 - 1e-12 for b1, b2 in zip(best, best[1:])):
            non_mono += 1
    ok = mismatches == 0 and greedy_diff == 0 and non_mono == 0
    return ok, f"{mismatches} exhaustive mismatches, {greedy_diff} greedy mismatches, {non_mono} non-monotone of {n_models}"


def suite_mass(n_models: int = 20) -> tuple[bool, str]:
    worst = 0.0
    for s in range(n_models):
        p = random_tiny_model(s, n_out=4)
        worst = max(worst, abs(enumerate_sequences(p, [4, 5], 3).total_mass - 1.0))
    return worst <= 1e-9, f"max |mass - 1| = {worst:.1e}"


def suite_mixed_objective(seed: int = 0) -> tuple[bool, str]:
    p = random_tiny_model(seed, n_out=4)
    rng = np.random.default_rng(seed)
    batch = Batch([SentencePair((4, 5), (3, 4)), SentencePair((5,), (5, 3, 4))])
    hyps = [[h] for h in sample_batch(p, batch.srcs, 4, rng)]
    cfg = TrainConfig(alpha=0.3)
    g_mle, _ = mle_gradient(p, batch, per_token=False)
    g_rl = rl_gradient(p, batch, hyps, cfg).grads
    worst = 0.0
    for alpha, ref in ((1.0, g_mle), (0.0, g_rl)):
        g = blend(g_mle, g_rl, alpha)
        worst = max(worst, max(float(np.max(np.abs(g[k] - ref[k]))) for k in g))
    g = blend(g_mle, g_rl, 0.3)
    worst = max(worst, max(float(np.max(np.abs(g[k] - (0.3 * g_mle[k] + 0.7 * g_rl[k])))) for k in g))
    return worst <= 1e-12, f"max deviation {worst:.1e}"


SUITES: dict[str, Callable[[], tuple[bool, str]]] = {
    "gradient-exactness": suite_gradient,
    "policy-gradient": suite_policy_gradient,
    "baseline-unbiased": suite_baseline_unbiased,
    "reward": suite_reward,
    "beam-optimality": suite_beam,
    "probability-mass": suite_mass,
    "mixed-objective": suite_mixed_objective,
}


def run_all(names: list[str] | None = None) -> list[SuiteResult]:
    return [_timed(n, SUITES[n]) for n in (names or list(SUITES))]
