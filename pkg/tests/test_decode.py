import numpy as np
import pytest
from scipy import stats

from oracles import TableLM, copy_lm
from seqrl.corpus import BOS, EOS
from seqrl.decode import beam_search, greedy_decode, multinomial_sample, sample_batch
from seqrl.model import ModelConfig, decoder_inputs, forward, init_model
from seqrl.oracle import exhaustive_best


def model(seed, V=4, scale=0.1):
    return init_model(ModelConfig(src_vocab_size=6, tgt_vocab_size=V + 2, embed_dim=3, hidden_dim=3, seed=seed, param_init_scale=scale))


def a_then_eos(L):
    """Token 4 with probability 0.9 for L steps (EOS impossible), then EOS with probability 0.9."""

    def table(src, k):
        return np.array([0, 0, 0.9, 0.05, 0.05]) if k >= L else np.array([0, 0, 0.0, 0.1, 0.9])

    return TableLM(table, 5)


class TestBeamSearch:
    def test_width_one_is_greedy(self):
        for s in range(20):
            p = model(s, scale=1.0)
            b = beam_search(p, [4, 5], 1, 4)[0]
            g = greedy_decode(p, [4, 5], 4)
            assert b.tokens == g.tokens
            assert b.score == pytest.approx(g.score, abs=1e-12)

    def test_exhaustive_width_matches_oracle(self):
        for s in range(20):
            p = model(s, scale=1.0)
            assert beam_search(p, [4, 5, 4], 4**3, 3)[0].tokens == exhaustive_best(p, [4, 5, 4], 3).tokens

    def test_hand_table(self):
        best = beam_search(a_then_eos(3), [4], 3, 3)[0]
        assert best.tokens == (4, 4, 4, EOS)
        assert best.score == pytest.approx(4 * np.log(0.9))

    def test_sorted_and_scored(self):
        hyps = beam_search(model(1, scale=1.0), [4, 5], 5, 4)
        scores = [h.score for h in hyps]
        assert scores == sorted(scores, reverse=True)
        for h in hyps:
            assert h.score == pytest.approx(h.step_log_probs.sum(), abs=1e-9)
            assert h.tokens[-1] == EOS
            assert len(h.decoder_states) == len(h.tokens)

    def test_rescoring_reproduces_step_log_probs(self):
        p = model(2, scale=1.0)
        for h in beam_search(p, [5, 5, 4], 3, 4):
            out = forward(p, [5, 5, 4], decoder_inputs(h.tokens))
            np.testing.assert_allclose(out.log_probs[np.arange(len(h.tokens)), h.tokens], h.step_log_probs, atol=1e-9)

    def test_forced_termination_counts_eos(self):
        # EOS is very unlikely at every step, so max_len is always reached
        def table(src, k):
            return np.array([0, 0, 0.01, 0.49, 0.5])

        best = beam_search(TableLM(table, 5), [4], 2, 2)[0]
        assert best.tokens == (4, 4, EOS) and not best.terminated
        assert best.score == pytest.approx(2 * np.log(0.5) + np.log(0.01))

    def test_tie_breaks_to_lower_token(self):
        def table(src, k):
            return np.array([0, 0, 0.2, 0.4, 0.4]) if k == 0 else np.array([0, 0, 1.0, 0, 0])

        assert beam_search(TableLM(table, 5), [4], 1, 3)[0].tokens == (3, EOS)

    def test_copy_model(self):
        lm = copy_lm(7)
        assert beam_search(lm, [4, 6, 5], 4, 6)[0].content == (4, 6, 5)

    def test_monotone_in_width(self):
        # not a theorem for beam search; holds on this family of random models
        failures = 0
        for s in range(100):
            p = model(s)
            best = [beam_search(p, [4, 5, 4], k, 3)[0].score for k in range(1, 7)]
            failures += any(b < a - 1e-12 for a, b in zip(best, best[1:]))
        assert failures == 0

    def test_width_monotonicity_can_fail(self):
        # a known counterexample: wider beam, worse best hypothesis
        p = init_model(ModelConfig(6, 6, embed_dim=3, hidden_dim=3, seed=77, param_init_scale=1.0))
        best = [beam_search(p, [4, 5, 4], k, 3)[0].score for k in (1, 2)]
        assert best[1] < best[0]


class TestSampling:
    def test_deterministic_distribution(self):
        def table(src, k):
            return np.array([0, 0, 0, 0, 1.0]) if k < 3 else np.array([0, 0, 1.0, 0, 0])

        h = multinomial_sample(TableLM(table, 5), [4], 5, np.random.default_rng(0))
        assert h.tokens == (4, 4, 4, EOS) and h.terminated

    def test_same_seed_same_sample(self):
        p = model(3, scale=1.0)
        a = multinomial_sample(p, [4, 5], 6, np.random.default_rng(42))
        b = multinomial_sample(p, [4, 5], 6, np.random.default_rng(42))
        assert a.tokens == b.tokens
        assert np.array_equal(a.step_log_probs, b.step_log_probs)

    def test_first_step_frequencies(self):
        p = model(4, scale=1.5)
        probs = np.exp(forward(p, [4, 5], [BOS]).log_probs[0])
        n = 100_000
        hyps = sample_batch(p, [[4, 5]] * n, 3, np.random.default_rng(1))
        counts = np.bincount([h.tokens[0] for h in hyps], minlength=len(probs))
        support = probs > 0
        assert counts[~support].sum() == 0
        assert stats.chisquare(counts[support], n * probs[support]).pvalue > 0.001

    def test_support_and_rescoring(self):
        p = model(5, scale=1.0)
        rng = np.random.default_rng(2)
        for h in sample_batch(p, [[4, 5, 5]] * 50, 4, rng):
            out = forward(p, [4, 5, 5], decoder_inputs(h.tokens))
            lp = out.log_probs[np.arange(len(h.tokens)), h.tokens]
            assert np.all(np.isfinite(lp))
            np.testing.assert_allclose(lp, h.step_log_probs, atol=1e-9)
            assert h.score == pytest.approx(h.step_log_probs.sum(), abs=1e-9)

    def test_truncation(self):
        def table(src, k):
            return np.array([0, 0, 0.001, 0, 0.999])

        h = multinomial_sample(TableLM(table, 5), [4], 3, np.random.default_rng(0))
        if not h.terminated:
            assert h.tokens == (4, 4, 4, EOS)
            assert h.sampled_mask().tolist() == [1, 1, 1, 0]
