"""Tanh-recurrent attention encoder-decoder with hand-written gradients.

Encoder: ``z_i = tanh(W_xe e(x_i) + W_he z_{i-1} + b_e)``.
Decoder step ``t`` attends with ``s_{t-1}`` over ``z`` (scaled dot product),
then ``s_t = tanh(W_xd e(y_{t-1}) + W_hd s_{t-1} + W_cd c_t + b_d)`` and
``logits_t = W_o s_t + b_o``. The decoder starts from the last encoder state.

PAD and BOS can never be emitted: their logits are fixed at ``-inf``, so
the output distribution ranges over ``tgt_vocab_size - 2`` tokens.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import BOS, EOS, PAD

MAGIC = b"SQRL"
FORMAT_VERSION = 1
NEVER_EMITTED = (PAD, BOS)


class ModelError(ValueError):
    pass


class InvalidToken(ModelError):
    pass


class WeightMismatch(ModelError):
    pass


class CorruptCheckpoint(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 16
    hidden_dim: int = 32
    max_decode_len: int = 10
    param_init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("src_vocab_size", "tgt_vocab_size", "embed_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tgt_vocab_size <= EOS:
            raise ValueError("tgt_vocab_size must include EOS")
        if self.max_decode_len < 2:
            raise ValueError("max_decode_len must be >= 2")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.embed_dim, cfg.hidden_dim
    return {
        "src_embed": (cfg.src_vocab_size, d),
        "tgt_embed": (cfg.tgt_vocab_size, d),
        "enc_W_x": (h, d),
        "enc_W_h": (h, h),
        "enc_b": (h,),
        "dec_W_x": (h, d),
        "dec_W_h": (h, h),
        "dec_W_c": (h, h),
        "dec_b": (h,),
        "out_W": (cfg.tgt_vocab_size, h),
        "out_b": (cfg.tgt_vocab_size,),
    }


BIASES = ("enc_b", "dec_b", "out_b")


@dataclass
class DecoderState:
    """Batched incremental decoding state."""

    enc: np.ndarray  # (B, N, h)
    mask: np.ndarray  # (B, N) bool
    s: np.ndarray  # (B, h)

    def select(self, idx) -> "DecoderState":
        idx = np.asarray(idx, dtype=np.int64)
        return DecoderState(self.enc[idx], self.mask[idx], self.s[idx])


@dataclass
class StepOutputs:
    encoder_states: np.ndarray
    decoder_states: np.ndarray
    logits: np.ndarray
    log_probs: np.ndarray
    attention: np.ndarray


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    @property
    def num_outputs(self) -> int:
        return self.config.tgt_vocab_size - len(NEVER_EMITTED)

    # conditional-LM interface used by decode and oracle
    def start(self, srcs: Sequence[Sequence[int]]) -> DecoderState:
        return encode(self, srcs)

    def step(self, state: DecoderState, prev: np.ndarray) -> tuple[np.ndarray, DecoderState]:
        return decoder_step(self, state, prev)


def init_model(cfg: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name in BIASES:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-cfg.param_init_scale, cfg.param_init_scale, size=shape)
    return ModelParams(cfg, tensors)


def _check_ids(seqs: Sequence[Sequence[int]], vocab_size: int, what: str) -> None:
    for seq in seqs:
        if len(seq) == 0:
            raise ModelError(f"empty {what} sequence")
        for tok in seq:
            if not 0 <= tok < vocab_size:
                raise InvalidToken(f"{what} token {tok} outside [0, {vocab_size})")


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for b, seq in enumerate(seqs):
        ids[b, : len(seq)] = seq
        mask[b, : len(seq)] = True
    return ids, mask


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax_masked(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def _encode_cache(p: ModelParams, srcs):
    _check_ids(srcs, p.config.src_vocab_size, "source")
    ids, mask = _pad(srcs)
    B, N = ids.shape
    h = p.config.hidden_dim
    x = p["src_embed"][ids]
    cand = np.zeros((B, N, h))
    z = np.zeros((B, N, h))
    prev = np.zeros((B, h))
    for i in range(N):
        c = np.tanh(x[:, i] @ p["enc_W_x"].T + prev @ p["enc_W_h"].T + p["enc_b"])
        m = mask[:, i, None]
        prev = np.where(m, c, prev)
        cand[:, i] = c
        z[:, i] = prev
    return ids, mask, x, cand, z


def encode(p: ModelParams, srcs: Sequence[Sequence[int]]) -> DecoderState:
    _, mask, _, _, z = _encode_cache(p, srcs)
    return DecoderState(z, mask, z[:, -1].copy())


def _attend(enc, mask, s_prev, scale):
    scores = np.einsum("bnh,bh->bn", enc, s_prev) * scale
    attn = _softmax_masked(scores, mask)
    ctx = np.einsum("bn,bnh->bh", attn, enc)
    return attn, ctx


def _output(p: ModelParams, s: np.ndarray) -> np.ndarray:
    logits = s @ p["out_W"].T + p["out_b"]
    logits[:, NEVER_EMITTED] = -np.inf
    return logits


def decoder_step(p: ModelParams, state: DecoderState, prev: np.ndarray) -> tuple[np.ndarray, DecoderState]:
    """Advance every row of ``state`` by one token; returns ``(log_probs, new_state)``."""
    prev = np.asarray(prev, dtype=np.int64)
    scale = 1.0 / math.sqrt(p.config.hidden_dim)
    _, ctx = _attend(state.enc, state.mask, state.s, scale)
    s = np.tanh(p["tgt_embed"][prev] @ p["dec_W_x"].T + state.s @ p["dec_W_h"].T + ctx @ p["dec_W_c"].T + p["dec_b"])
    return _log_softmax(_output(p, s)), DecoderState(state.enc, state.mask, s)


@dataclass
class _Cache:
    src_ids: np.ndarray
    src_mask: np.ndarray
    src_x: np.ndarray
    enc_cand: np.ndarray
    enc: np.ndarray
    dec_in: np.ndarray
    dec_out: np.ndarray
    dec_x: np.ndarray
    s: np.ndarray  # (B, T+1, h), s[:, 0] is the initial state
    attn: np.ndarray
    ctx: np.ndarray
    logits: np.ndarray
    log_probs: np.ndarray


def _forward_cache(p: ModelParams, srcs, dec_inputs, dec_targets=None) -> _Cache:
    src_ids, src_mask, src_x, cand, enc = _encode_cache(p, srcs)
    _check_ids(dec_inputs, p.config.tgt_vocab_size, "target")
    dec_in, _ = _pad(dec_inputs)
    if dec_targets is not None:
        _check_ids(dec_targets, p.config.tgt_vocab_size, "target")
        for seq in dec_targets:
            if any(t in NEVER_EMITTED for t in seq):
                raise InvalidToken("targets may not contain PAD or BOS")
        dec_out, _ = _pad(dec_targets)
        dec_out[dec_out == PAD] = EOS
    else:
        dec_out = np.full_like(dec_in, EOS)
    B, T = dec_in.shape
    N, h = enc.shape[1], p.config.hidden_dim
    V = p.config.tgt_vocab_size
    scale = 1.0 / math.sqrt(h)
    dec_x = p["tgt_embed"][dec_in]
    s = np.zeros((B, T + 1, h))
    s[:, 0] = enc[:, -1]
    attn = np.zeros((B, T, N))
    ctx = np.zeros((B, T, h))
    logits = np.zeros((B, T, V))
    for t in range(T):
        a, c = _attend(enc, src_mask, s[:, t], scale)
        s[:, t + 1] = np.tanh(
            dec_x[:, t] @ p["dec_W_x"].T + s[:, t] @ p["dec_W_h"].T + c @ p["dec_W_c"].T + p["dec_b"]
        )
        attn[:, t], ctx[:, t] = a, c
        logits[:, t] = _output(p, s[:, t + 1])
    return _Cache(src_ids, src_mask, src_x, cand, enc, dec_in, dec_out, dec_x, s, attn, ctx, logits, _log_softmax(logits))


def forward(p: ModelParams, src: Sequence[int], tgt_prefix: Sequence[int]) -> StepOutputs:
    """Teacher-forced pass; one prediction per token of ``tgt_prefix`` (which starts with BOS)."""
    if len(tgt_prefix) == 0 or tgt_prefix[0] != BOS:
        raise ModelError("tgt_prefix must begin with BOS")
    c = _forward_cache(p, [src], [tgt_prefix])
    return StepOutputs(c.enc[0], c.s[0, 1:], c.logits[0], c.log_probs[0], c.attn[0])


def decoder_inputs(tgt: Sequence[int]) -> list[int]:
    return [BOS, *tgt[:-1]]


def batch_backward(
    p: ModelParams,
    srcs: Sequence[Sequence[int]],
    tgts: Sequence[Sequence[int]],
    weights: Sequence[Sequence[float]],
) -> tuple[dict[str, np.ndarray], float]:
    """Gradient of ``-sum_b sum_t w[b][t] log p(tgt[b][t] | ...)``.

    ``tgts`` hold the predicted tokens (usually EOS-terminated); decoder
    inputs are BOS followed by all but the last token.
    """
    for tgt, w in zip(tgts, weights):
        if len(w) != len(tgt):
            raise WeightMismatch(f"{len(w)} weights for {len(tgt)} prediction steps")
    c = _forward_cache(p, srcs, [decoder_inputs(t) for t in tgts], tgts)
    B, T = c.dec_in.shape
    W = np.zeros((B, T))
    for b, w in enumerate(weights):
        W[b, : len(w)] = w
    return _backward(p, c, W)


def _backward(p: ModelParams, c: _Cache, W: np.ndarray) -> tuple[dict[str, np.ndarray], float]:
    B, T = c.dec_in.shape
    h = p.config.hidden_dim
    scale = 1.0 / math.sqrt(h)
    rows = np.arange(B)
    tgt_lp = c.log_probs[rows[:, None], np.arange(T)[None, :], c.dec_out]
    loss = -float(np.sum(np.where(W != 0, W * tgt_lp, 0.0)))

    g = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    d_enc = np.zeros_like(c.enc)
    d_dec_x = np.zeros_like(c.dec_x)
    ds_next = np.zeros((B, h))
    for t in reversed(range(T)):
        prob = np.exp(c.log_probs[:, t])
        dlogits = prob * W[:, t, None]
        dlogits[rows, c.dec_out[:, t]] -= W[:, t]
        s_t, s_prev = c.s[:, t + 1], c.s[:, t]
        g["out_W"] += dlogits.T @ s_t
        g["out_b"] += dlogits.sum(0)
        ds = dlogits @ p["out_W"] + ds_next
        dpre = ds * (1.0 - s_t**2)
        g["dec_W_x"] += dpre.T @ c.dec_x[:, t]
        d_dec_x[:, t] = dpre @ p["dec_W_x"]
        g["dec_W_h"] += dpre.T @ s_prev
        g["dec_W_c"] += dpre.T @ c.ctx[:, t]
        g["dec_b"] += dpre.sum(0)
        ds_prev = dpre @ p["dec_W_h"]
        dctx = dpre @ p["dec_W_c"]
        a = c.attn[:, t]
        d_enc += a[:, :, None] * dctx[:, None, :]
        da = np.einsum("bnh,bh->bn", c.enc, dctx)
        dscore = a * (da - (a * da).sum(1, keepdims=True)) * scale
        ds_prev += np.einsum("bn,bnh->bh", dscore, c.enc)
        d_enc += dscore[:, :, None] * s_prev[:, None, :]
        ds_next = ds_prev
    d_enc[:, -1] += ds_next
    np.add.at(g["tgt_embed"], c.dec_in, d_dec_x)

    N = c.enc.shape[1]
    d_src_x = np.zeros_like(c.src_x)
    dz_carry = np.zeros((B, h))
    for i in reversed(range(N)):
        dz = d_enc[:, i] + dz_carry
        m = c.src_mask[:, i, None]
        dpre = np.where(m, dz, 0.0) * (1.0 - c.enc_cand[:, i] ** 2)
        z_prev = c.enc[:, i - 1] if i > 0 else np.zeros((B, h))
        g["enc_W_x"] += dpre.T @ c.src_x[:, i]
        g["enc_W_h"] += dpre.T @ z_prev
        g["enc_b"] += dpre.sum(0)
        d_src_x[:, i] = dpre @ p["enc_W_x"]
        dz_carry = np.where(m, 0.0, dz) + dpre @ p["enc_W_h"]
    np.add.at(g["src_embed"], c.src_ids, d_src_x)
    return g, loss


def backward(
    p: ModelParams, src: Sequence[int], tgt: Sequence[int], step_weights: Sequence[float]
) -> tuple[dict[str, np.ndarray], float]:
    """Exact gradient of the weighted NLL ``-sum_t w_t log p(tgt_t | src, tgt_<t)``."""
    return batch_backward(p, [src], [tgt], [step_weights])


def sequence_log_probs(p: ModelParams, srcs, tgts) -> list[np.ndarray]:
    """Per-step log-probabilities of each EOS-terminated target under teacher forcing."""
    c = _forward_cache(p, srcs, [decoder_inputs(t) for t in tgts], tgts)
    return [c.log_probs[b, np.arange(len(t)), c.dec_out[b, : len(t)]] for b, t in enumerate(tgts)]


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def finite_difference_check(
    p: ModelParams,
    src: Sequence[int],
    tgt: Sequence[int],
    epsilon: float = 1e-5,
    step_weights: Sequence[float] | None = None,
    max_coords: int | None = None,
    seed: int = 0,
    grads: dict[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between ``backward`` and central differences.

    Every coordinate is probed unless ``max_coords`` is given, in which case
    a seeded subset of that many coordinates (at least 200) is drawn. Pass
    ``grads`` to check a gradient other than the one ``backward`` returns.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    w = list(step_weights) if step_weights is not None else [1.0] * len(tgt)
    if grads is None:
        grads, _ = backward(p, src, tgt, w)
    coords = [(name, idx) for name, arr in p.tensors.items() for idx in np.ndindex(arr.shape)]
    if max_coords is not None and max_coords < len(coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max(200, max_coords), replace=False)
        coords = [coords[i] for i in sorted(pick)]
    work = p.copy()
    worst = 0.0
    for name, idx in coords:
        arr = work.tensors[name]
        orig = arr[idx]
        arr[idx] = orig + epsilon
        _, f_plus = backward(work, src, tgt, w)
        arr[idx] = orig - epsilon
        _, f_minus = backward(work, src, tgt, w)
        arr[idx] = orig
        numeric = (f_plus - f_minus) / (2 * epsilon)
        analytic = grads[name][idx]
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, err)
    return worst


def save_tensors(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_tensors(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CorruptCheckpoint(f"{path}: truncated")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    (version,) = struct.unpack("<H", take(2))
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    (n,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable config block") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise CorruptCheckpoint(f"{path}: trailing bytes")
    return meta, tensors


def save_checkpoint(p: ModelParams, path: str | Path, extra: dict | None = None) -> None:
    meta = {"kind": "seq2seq", "config": asdict(p.config)}
    if extra:
        meta["extra"] = extra
    save_tensors(path, meta, p.tensors)


def load_checkpoint(path: str | Path) -> ModelParams:
    meta, tensors = load_tensors(path)
    if meta.get("kind") != "seq2seq":
        raise CorruptCheckpoint(f"{path}: not a translation model checkpoint")
    cfg = ModelConfig(**meta["config"])
    expected = param_shapes(cfg)
    if set(tensors) != set(expected) or any(tensors[k].shape != s for k, s in expected.items()):
        raise CorruptCheckpoint(f"{path}: tensor layout does not match config")
    return ModelParams(cfg, tensors)
