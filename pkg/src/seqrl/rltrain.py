"""MLE and REINFORCE training with reward shaping, a learned baseline and
the MLE/RL mixed objective.

All gradients here are gradients of quantities being *minimised*: the
negative log-likelihood and the negated REINFORCE surrogate.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EOS, Batch, Dataset, make_batches
from .decode import Hypothesis, beam_search, sample_batch, translate
from .metrics import BleuConfig, RewardTrace, corpus_bleu, shaped_rewards
from .model import ModelConfig, ModelParams, WeightMismatch, batch_backward, grad_norm, init_model

log = logging.getLogger(__name__)


class DivergedTraining(RuntimeError):
    pass


class MissingInitModel(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # objective
    alpha: float = 0.3
    sampling: str = "multinomial"  # or "beam"
    beam_width: int = 4
    beam_all_k: bool = False
    shaping: bool = True
    baseline: bool = False
    baseline_hidden: int = 0  # 0 -> decoder hidden size
    baseline_pretrain_steps: int = 2000
    lr_mle: float = 1e-3
    lr_rl: float = 1e-4
    lr_baseline: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    # reward
    bleu_max_order: int = 4
    reward_times_ref_len: bool = True
    # loop
    max_epochs: int = 10
    max_steps: int = 0  # 0 -> unlimited
    max_tokens: int = 256
    eval_every: int = 100
    eval_beam_width: int = 6
    dev_limit: int = 0  # 0 -> whole dev set
    seed: int = 0
    # model (used when training from scratch)
    embed_dim: int = 16
    hidden_dim: int = 32
    max_decode_len: int = 10
    param_init_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if min(self.lr_mle, self.lr_rl, self.lr_baseline) < 0:
            raise ValueError("learning rates must be non-negative")
        if self.sampling not in ("multinomial", "beam"):
            raise ValueError(f"sampling must be 'multinomial' or 'beam', got {self.sampling!r}")

    @property
    def bleu(self) -> BleuConfig:
        return BleuConfig(self.bleu_max_order, self.reward_times_ref_len)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, lr: float, cfg: TrainConfig) -> "Adam":
        return cls(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def update(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class BaselineParams:
    """Two-layer ReLU regressor from a decoder state to a scalar."""

    tensors: dict[str, np.ndarray]

    @classmethod
    def init(cls, input_dim: int, hidden: int = 0, scale: float = 0.1, seed: int = 0) -> "BaselineParams":
        hidden = hidden or input_dim
        rng = np.random.default_rng(seed)
        return cls(
            {
                "W1": rng.uniform(-scale, scale, (hidden, input_dim)),
                "b1": np.zeros(hidden),
                "w2": rng.uniform(-scale, scale, hidden),
                "b2": np.zeros(()),
            }
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden: int = 0) -> "BaselineParams":
        return cls.init(input_dim, hidden, scale=0.0)

    def copy(self) -> "BaselineParams":
        return BaselineParams({k: v.copy() for k, v in self.tensors.items()})


def baseline_predict(bp: BaselineParams, states: np.ndarray) -> np.ndarray:
    t = bp.tensors
    hidden = np.maximum(0.0, np.asarray(states) @ t["W1"].T + t["b1"])
    return hidden @ t["w2"] + t["b2"]


def baseline_gradient(bp: BaselineParams, states: np.ndarray, targets: np.ndarray) -> tuple[dict, float]:
    t = bp.tensors
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(states) != len(targets):
        raise WeightMismatch(f"{len(states)} states for {len(targets)} targets")
    pre = states @ t["W1"].T + t["b1"]
    hidden = np.maximum(0.0, pre)
    err = hidden @ t["w2"] + t["b2"] - targets
    mse = float(np.mean(err**2))
    dpred = 2.0 * err / len(err)
    dhidden = np.outer(dpred, t["w2"]) * (pre > 0)
    grads = {
        "W1": dhidden.T @ states,
        "b1": dhidden.sum(0),
        "w2": hidden.T @ dpred,
        "b2": np.asarray(dpred.sum()),
    }
    return grads, mse


def baseline_update(bp: BaselineParams, opt: Adam, states: np.ndarray, targets: np.ndarray) -> float:
    """One Adam step on the mean squared error; returns the pre-update MSE."""
    grads, mse = baseline_gradient(bp, states, targets)
    if not math.isfinite(mse):
        raise DivergedTraining("baseline loss is not finite")
    opt.update(bp.tensors, grads)
    return mse


def reward_trace(hyp: Hypothesis | Sequence[int], ref: Sequence[int], cfg: TrainConfig) -> RewardTrace:
    tokens = hyp.tokens if isinstance(hyp, Hypothesis) else tuple(hyp)
    return shaped_rewards(tokens, ref, cfg.bleu)


def reinforce_advantages(
    hyp: Hypothesis | Sequence[int],
    ref: Sequence[int],
    cfg: TrainConfig,
    baselines: Sequence[float] | None = None,
    trace: RewardTrace | None = None,
) -> np.ndarray:
    """Per-step REINFORCE weights.

    With shaping the weight at step t is the return from t onwards,
    otherwise every step gets the terminal reward; a baseline is subtracted
    when given.
    """
    if trace is None:
        trace = reward_trace(hyp, ref, cfg)
    if (baselines is not None) != cfg.baseline:
        raise ValueError("baselines must be given exactly when the baseline is enabled")
    adv = trace.returns.copy() if cfg.shaping else np.full(len(trace.shaped), trace.terminal)
    if baselines is not None:
        b = np.asarray(baselines, dtype=float)
        if len(b) != len(adv):
            raise WeightMismatch(f"{len(b)} baselines for {len(adv)} steps")
        adv = adv - b
        trace.baselines = b
    trace.advantages = adv
    return adv


def _scale(grads: dict[str, np.ndarray], c: float) -> dict[str, np.ndarray]:
    return {k: c * g for k, g in grads.items()}


def mle_gradient(params: ModelParams, batch: Batch, per_token: bool = True) -> tuple[dict, float]:
    tgts = [tuple(t) + (EOS,) for t in batch.tgts]
    grads, nll = batch_backward(params, batch.srcs, tgts, [np.ones(len(t)) for t in tgts])
    denom = sum(len(t) for t in tgts) if per_token else len(tgts)
    return _scale(grads, 1.0 / denom), nll / denom


def mle_step(params: ModelParams, optimizer: Adam, batch: Batch) -> float:
    """One Adam step on the per-token mean NLL; returns the loss before the update."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    grads, loss = mle_gradient(params, batch)
    if not math.isfinite(loss):
        raise DivergedTraining(f"non-finite MLE loss {loss}")
    optimizer.update(params.tensors, grads)
    return loss


def generate_for_rl(
    params: ModelParams, srcs: Sequence[Sequence[int]], cfg: TrainConfig, rng: np.random.Generator
) -> list[list[Hypothesis]]:
    """Hypotheses used for the RL term: one sample, or the beam top-1 (all K with ``beam_all_k``)."""
    max_len = params.config.max_decode_len
    if cfg.sampling == "multinomial":
        return [[h] for h in sample_batch(params, srcs, max_len, rng)]
    out = []
    for src in srcs:
        beam = beam_search(params, src, cfg.beam_width, max_len)
        out.append(beam if cfg.beam_all_k else beam[:1])
    return out


@dataclass
class RLTerm:
    grads: dict[str, np.ndarray]
    surrogate: float
    mean_reward: float
    states: list[np.ndarray]
    targets: list[np.ndarray]


def rl_gradient(
    params: ModelParams,
    batch: Batch,
    hyps: Sequence[Sequence[Hypothesis]],
    cfg: TrainConfig,
    bp: BaselineParams | None = None,
) -> RLTerm:
    """Negated REINFORCE gradient, per-sentence sums averaged over the batch."""
    srcs, tgts, weights, rewards, states, targets = [], [], [], [], [], []
    for pair, group in zip(batch.pairs, hyps):
        for h in group:
            trace = reward_trace(h, pair.tgt, cfg)
            base = baseline_predict(bp, h.decoder_states) if cfg.baseline else None
            adv = reinforce_advantages(h, pair.tgt, cfg, base, trace)
            srcs.append(pair.src)
            tgts.append(h.tokens)
            weights.append(adv * h.sampled_mask() / len(group))
            rewards.append(trace.terminal)
            states.append(h.decoder_states)
            targets.append(trace.returns if cfg.shaping else np.full(len(h.tokens), trace.terminal))
    grads, surrogate = batch_backward(params, srcs, tgts, weights)
    B = len(batch)
    return RLTerm(_scale(grads, 1.0 / B), surrogate / B, float(np.mean(rewards)), states, targets)


def blend(g_mle: dict, g_rl: dict, alpha: float) -> dict[str, np.ndarray]:
    return {k: alpha * g_mle[k] + (1.0 - alpha) * g_rl[k] for k in g_mle}


@dataclass
class StepStats:
    l_mle: float
    l_rl: float
    l_com: float
    mean_reward: float
    grad_norm: float


def combined_step(
    params: ModelParams,
    bp: BaselineParams | None,
    optimizers: dict[str, Adam],
    batch: Batch,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> StepStats:
    """One update on ``alpha * MLE + (1 - alpha) * RL`` followed by a baseline update.

    Reported losses use the minimisation sign: ``l_mle`` is the mean
    sentence NLL and ``l_rl`` the negated mean terminal reward.
    """
    hyps = generate_for_rl(params, batch.srcs, cfg, rng)
    g_mle, nll = mle_gradient(params, batch, per_token=False)
    rl = rl_gradient(params, batch, hyps, cfg, bp)
    grads = blend(g_mle, rl.grads, cfg.alpha)
    l_rl = -rl.mean_reward
    l_com = cfg.alpha * nll + (1.0 - cfg.alpha) * l_rl
    if not all(math.isfinite(x) for x in (nll, l_rl, rl.surrogate)):
        raise DivergedTraining("non-finite combined objective")
    optimizers["model"].update(params.tensors, grads)
    if cfg.baseline and bp is not None:
        baseline_update(bp, optimizers["baseline"], np.concatenate(rl.states), np.concatenate(rl.targets))
    return StepStats(nll, l_rl, l_com, rl.mean_reward, grad_norm(grads))


@dataclass
class EvalRecord:
    step: int
    l_mle: float
    l_rl: float
    l_com: float
    dev_bleu: float
    mean_reward: float
    grad_norm: float


CSV_HEADER = ["step", "l_mle", "l_rl", "l_com", "dev_bleu", "mean_reward", "grad_norm"]


@dataclass
class TrainingReport:
    records: list[EvalRecord] = field(default_factory=list)
    step_rewards: list[float] = field(default_factory=list)
    best_bleu: float = float("-inf")
    best_params: ModelParams | None = None
    final_params: ModelParams | None = None
    baseline_params: BaselineParams | None = None
    phase: str = ""

    def extend(self, other: "TrainingReport") -> "TrainingReport":
        """Append ``other`` with its steps shifted past ours."""
        offset = self.records[-1].step if self.records else 0
        recs = self.records + [EvalRecord(**{**r.__dict__, "step": r.step + offset}) for r in other.records]
        return TrainingReport(
            recs,
            self.step_rewards + other.step_rewards,
            other.best_bleu,
            other.best_params,
            other.final_params,
            other.baseline_params,
            "+".join(x for x in (self.phase, other.phase) if x),
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.records:
                w.writerow([r.step] + [repr(float(getattr(r, k))) for k in CSV_HEADER[1:]])


def evaluate_bleu(params: ModelParams, dataset: Dataset, beam_width: int = 6, limit: int = 0) -> float:
    pairs = dataset.pairs[:limit] if limit else dataset.pairs
    if not pairs:
        return float("nan")
    hyps = translate(params, [p.src for p in pairs], beam_width, params.config.max_decode_len)
    return corpus_bleu(hyps, [p.tgt for p in pairs])


def model_config_for(cfg: TrainConfig, data: Dataset) -> ModelConfig:
    return ModelConfig(
        src_vocab_size=len(data.src_vocab),
        tgt_vocab_size=len(data.tgt_vocab),
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
        max_decode_len=cfg.max_decode_len,
        param_init_scale=cfg.param_init_scale,
        seed=cfg.seed,
    )


class _Window:
    def __init__(self):
        self.vals: dict[str, list[float]] = {}

    def add(self, **kw):
        for k, v in kw.items():
            self.vals.setdefault(k, []).append(v)

    def mean(self, k: str) -> float:
        v = self.vals.get(k)
        return float(np.mean(v)) if v else float("nan")

    def clear(self):
        self.vals = {}


def _batches_forever(data: Dataset, max_tokens: int, seed: int):
    epoch = 0
    while True:
        yield from make_batches(data, max_tokens, seed + epoch)
        epoch += 1


def pretrain_baseline(params: ModelParams, bp: BaselineParams, opt: Adam, data: Dataset, cfg: TrainConfig, rng) -> list[float]:
    """Fit the baseline with the translation model frozen."""
    losses = []
    if cfg.baseline_pretrain_steps <= 0 or len(data) == 0:
        return losses
    for step, batch in enumerate(_batches_forever(data, cfg.max_tokens, cfg.seed + 7919), start=1):
        hyps = generate_for_rl(params, batch.srcs, cfg, rng)
        states, targets = [], []
        for pair, group in zip(batch.pairs, hyps):
            for h in group:
                tr = reward_trace(h, pair.tgt, cfg)
                states.append(h.decoder_states)
                targets.append(tr.returns if cfg.shaping else np.full(len(h.tokens), tr.terminal))
        losses.append(baseline_update(bp, opt, np.concatenate(states), np.concatenate(targets)))
        if step >= cfg.baseline_pretrain_steps:
            break
    return losses


def train(
    cfg: TrainConfig,
    train_data: Dataset,
    dev_data: Dataset | None = None,
    mode: str = "mle",
    init: ModelParams | None = None,
) -> TrainingReport:
    """Run MLE or RL (mixed-objective) training.

    Dev BLEU is measured every ``eval_every`` updates and at the end; the
    parameters with the best dev BLEU are kept in the report.
    """
    if mode not in ("mle", "rl"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "rl" and init is None:
        raise MissingInitModel("RL training must start from a trained MLE model")
    params = init.copy() if init is not None else init_model(model_config_for(cfg, train_data))
    report = TrainingReport(phase=mode)
    rng = np.random.default_rng(cfg.seed)
    model_opt = Adam.from_config(cfg.lr_mle if mode == "mle" else cfg.lr_rl, cfg)
    bp = None
    optimizers = {"model": model_opt}
    if mode == "rl" and cfg.baseline:
        bp = BaselineParams.init(params.config.hidden_dim, cfg.baseline_hidden, seed=cfg.seed)
        optimizers["baseline"] = Adam.from_config(cfg.lr_baseline, cfg)
        pretrain_baseline(params, bp, optimizers["baseline"], train_data, cfg, rng)

    window = _Window()
    step = 0

    def evaluate():
        bleu = evaluate_bleu(params, dev_data, cfg.eval_beam_width, cfg.dev_limit) if dev_data is not None else float("nan")
        rec = EvalRecord(
            step,
            window.mean("l_mle"),
            window.mean("l_rl"),
            window.mean("l_com"),
            bleu,
            window.mean("reward"),
            window.mean("gnorm"),
        )
        report.records.append(rec)
        window.clear()
        if dev_data is None or bleu > report.best_bleu or report.best_params is None:
            report.best_bleu = bleu
            report.best_params = params.copy()
        log.info("%s step %d: dev BLEU %.2f, l_com %.4f, reward %.4f", mode, step, bleu, rec.l_com, rec.mean_reward)

    done = False
    for epoch in range(cfg.max_epochs):
        for batch in make_batches(train_data, cfg.max_tokens, cfg.seed + epoch):
            step += 1
            if mode == "mle":
                grads, loss = mle_gradient(params, batch)
                if not math.isfinite(loss):
                    raise DivergedTraining(f"non-finite MLE loss at step {step}")
                model_opt.update(params.tensors, grads)
                window.add(l_mle=loss, l_com=loss, gnorm=grad_norm(grads))
            else:
                st = combined_step(params, bp, optimizers, batch, cfg, rng)
                window.add(l_mle=st.l_mle, l_rl=st.l_rl, l_com=st.l_com, reward=st.mean_reward, gnorm=st.grad_norm)
                report.step_rewards.append(st.mean_reward)
            if cfg.eval_every and step % cfg.eval_every == 0:
                evaluate()
            if cfg.max_steps and step >= cfg.max_steps:
                done = True
                break
        if done:
            break
    if step and (not report.records or report.records[-1].step != step):
        evaluate()
    report.final_params = params
    report.baseline_params = bp
    if report.best_params is None:
        report.best_params = params.copy()
    return report


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    """Trailing moving average (first entries average over what is available)."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
