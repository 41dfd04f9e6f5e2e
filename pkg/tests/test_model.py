import json
import math
from pathlib import Path

import numpy as np
import pytest

from seqrl.corpus import BOS, EOS
from seqrl.model import (
    CorruptCheckpoint,
    InvalidToken,
    ModelConfig,
    ModelError,
    WeightMismatch,
    backward,
    batch_backward,
    decoder_inputs,
    encode,
    finite_difference_check,
    forward,
    init_model,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    sequence_log_probs,
)

DATA = Path(__file__).parent / "data"


def tiny(seed=0, V=5, scale=0.5, random_bias=True):
    """``V`` emittable target tokens (tgt vocab = V + 2)."""
    cfg = ModelConfig(src_vocab_size=6, tgt_vocab_size=V + 2, embed_dim=3, hidden_dim=3, seed=seed, param_init_scale=scale)
    p = init_model(cfg)
    if random_bias:
        rng = np.random.default_rng(seed + 99)
        for k in ("enc_b", "dec_b", "out_b"):
            p.tensors[k] = rng.uniform(-scale, scale, p.tensors[k].shape)
    return p


class TestInit:
    def test_zero_scale(self):
        p = init_model(ModelConfig(5, 6, param_init_scale=0.0))
        assert all(not v.any() for v in p.tensors.values())

    def test_same_seed_identical(self):
        a = init_model(ModelConfig(5, 6, seed=3))
        b = init_model(ModelConfig(5, 6, seed=3))
        assert all(np.array_equal(a[k], b[k]) for k in a.tensors)

    def test_seed_changes_params(self):
        a = init_model(ModelConfig(5, 6, seed=1))
        b = init_model(ModelConfig(5, 6, seed=2))
        assert any(not np.array_equal(a[k], b[k]) for k in a.tensors)

    def test_shapes_and_biases(self):
        cfg = ModelConfig(5, 6, embed_dim=4, hidden_dim=7)
        p = init_model(cfg)
        assert {k: v.shape for k, v in p.tensors.items()} == param_shapes(cfg)
        assert not p["out_b"].any() and np.abs(p["enc_W_h"]).max() <= cfg.param_init_scale
        assert all(v.dtype == np.float64 for v in p.tensors.values())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(5, 6, hidden_dim=0)
        with pytest.raises(ValueError):
            ModelConfig(5, 6, max_decode_len=1)


class TestForward:
    def test_normalised(self):
        out = forward(tiny(1), [4, 5, 4], [BOS, 4, 5, 6])
        lse = np.log(np.exp(out.log_probs).sum(axis=1))
        np.testing.assert_allclose(lse, 0.0, atol=1e-12)

    def test_zero_params_uniform(self):
        p = init_model(ModelConfig(6, 6, param_init_scale=0.0))
        out = forward(p, [4, 5], [BOS, 4, 5])
        emittable = out.log_probs[:, 2:]
        np.testing.assert_allclose(emittable, -math.log(4), atol=1e-12)
        assert np.all(np.isneginf(out.log_probs[:, :2]))

    def test_golden(self):
        g = json.loads((DATA / "golden_forward.json").read_text())
        p = init_model(ModelConfig(**g["config"]))
        out = forward(p, g["src"], g["tgt_prefix"])
        expected = np.array([[-np.inf if x is None else x for x in row] for row in g["log_probs"]])
        np.testing.assert_allclose(out.log_probs, expected, rtol=0, atol=1e-12)

    def test_attention_is_distribution(self):
        out = forward(tiny(2), [4, 5, 5, 4], [BOS, 3, 4])
        assert np.all(out.attention >= 0)
        np.testing.assert_allclose(out.attention.sum(axis=1), 1.0, atol=1e-9)
        assert out.decoder_states.shape == (3, 3)

    def test_deterministic(self):
        a = forward(tiny(3), [4, 5], [BOS, 4])
        b = forward(tiny(3), [4, 5], [BOS, 4])
        assert np.array_equal(a.log_probs, b.log_probs)

    def test_invalid_token(self):
        with pytest.raises(InvalidToken):
            forward(tiny(), [4, 99], [BOS])
        with pytest.raises(ModelError):
            forward(tiny(), [4], [4, 5])

    def test_batched_matches_single(self):
        p = tiny(4)
        srcs = [[4], [5, 4, 5, 5], [4, 4]]
        tgts = [(3, 4, EOS), (EOS,), (5, 6, 3, 4, EOS)]
        batched = sequence_log_probs(p, srcs, tgts)
        for src, tgt, lp in zip(srcs, tgts, batched):
            out = forward(p, src, decoder_inputs(tgt))
            np.testing.assert_allclose(lp, out.log_probs[np.arange(len(tgt)), list(tgt)], atol=1e-12)

    def test_incremental_matches_teacher_forcing(self):
        p = tiny(5)
        src, tgt = [5, 4, 4], [4, 6, 3, EOS]
        out = forward(p, src, decoder_inputs(tgt))
        state = encode(p, [src])
        prev = BOS
        for t, tok in enumerate(tgt):
            logp, state = p.step(state, np.array([prev]))
            np.testing.assert_allclose(logp[0], out.log_probs[t], atol=1e-12)
            prev = tok


class TestBackward:
    def test_zero_weights(self):
        g, loss = backward(tiny(), [4, 5], [4, EOS], [0.0, 0.0])
        assert loss == 0.0
        assert all(not v.any() for v in g.values())

    def test_unit_weights_is_nll(self):
        p = tiny(6)
        src, tgt = [4, 5], [5, 3, EOS]
        _, loss = backward(p, src, tgt, [1, 1, 1])
        out = forward(p, src, decoder_inputs(tgt))
        assert loss == pytest.approx(-out.log_probs[np.arange(3), tgt].sum(), abs=1e-12)

    def test_weight_mismatch(self):
        with pytest.raises(WeightMismatch):
            backward(tiny(), [4], [4, EOS], [1.0])

    def test_finite_differences_random_weights(self):
        rng = np.random.default_rng(0)
        p = tiny(7)
        err = finite_difference_check(p, [4, 5, 4], [6, 3, EOS], 1e-5, rng.normal(size=3))
        assert err <= 1e-4

    def test_batch_is_sum_of_singles(self):
        p = tiny(8)
        srcs = [[4, 5], [5], [4, 4, 5, 5]]
        tgts = [[3, EOS], [4, 5, 6, EOS], [EOS]]
        ws = [[0.5, -1.0], [1.0, 2.0, 0.0, 1.0], [3.0]]
        g_batch, l_batch = batch_backward(p, srcs, tgts, ws)
        total = {k: np.zeros_like(v) for k, v in p.tensors.items()}
        l_sum = 0.0
        for s, t, w in zip(srcs, tgts, ws):
            g, l = backward(p, s, t, w)
            l_sum += l
            for k in total:
                total[k] += g[k]
        assert l_batch == pytest.approx(l_sum, abs=1e-12)
        for k in total:
            np.testing.assert_allclose(g_batch[k], total[k], atol=1e-12)


class TestFiniteDifferenceCheck:
    def test_zero_weight_objective(self):
        assert finite_difference_check(tiny(), [4], [4, EOS], 1e-5, [0.0, 0.0]) == 0.0

    def test_subset_of_coordinates(self):
        cfg = ModelConfig(8, 10, embed_dim=6, hidden_dim=8, seed=2, param_init_scale=0.3)
        p = init_model(cfg)
        assert finite_difference_check(p, [4, 5, 6], [7, 8, EOS], max_coords=200, seed=1) <= 1e-4

    def test_detects_corrupted_gradient(self):
        p = tiny(9)
        src, tgt = [4, 5], [5, 3, EOS]
        g, _ = backward(p, src, tgt, [1, 1, 1])
        g["dec_W_h"] = 2 * g["dec_W_h"]
        assert finite_difference_check(p, src, tgt, grads=g) > 0.5

    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            finite_difference_check(tiny(), [4], [EOS], epsilon=0.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = tiny(10)
        save_checkpoint(p, tmp_path / "m.ckpt")
        q = load_checkpoint(tmp_path / "m.ckpt")
        assert q.config == p.config
        for k in p.tensors:
            assert np.array_equal(p[k], q[k])
            assert p[k].tobytes() == q[k].tobytes()

    def test_header(self, tmp_path):
        save_checkpoint(tiny(), tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        assert raw[:4] == b"SQRL" and raw[4:6] == (1).to_bytes(2, "little")

    def test_truncated(self, tmp_path):
        save_checkpoint(tiny(), tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(raw[:-13])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_wrong_version(self, tmp_path):
        save_checkpoint(tiny(), tmp_path / "m.ckpt")
        raw = bytearray((tmp_path / "m.ckpt").read_bytes())
        raw[4] = 9
        (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"NOPE\x01\x00")
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "bad.ckpt")
