"""Pseudo-parallel data from monolingual text and the two combination recipes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import Dataset, Origin, SentencePair, VocabMismatch, Vocabulary
from .decode import beam_search
from .rltrain import TrainConfig, TrainingReport, evaluate_bleu, train
from .model import ModelParams

log = logging.getLogger(__name__)

PSEUDO_BEAM_WIDTH = 4


def _top1(model, src, beam_width: int, max_len: int) -> tuple[int, ...]:
    return beam_search(model, src, beam_width, max_len)[0].content


def generate_pseudo_targets(
    model,
    mono_src: Sequence[Sequence[int]],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    beam_width: int = PSEUDO_BEAM_WIDTH,
    max_len: int | None = None,
) -> Dataset:
    """Pair each source sentence with the model's top beam output."""
    max_len = max_len or model.config.max_decode_len
    pairs = []
    for src in mono_src:
        hyp = _top1(model, src, beam_width, max_len)
        if hyp:
            pairs.append(SentencePair(tuple(src), hyp, Origin.PSEUDO_FROM_SOURCE_MONO))
    return Dataset(pairs, src_vocab, tgt_vocab)


def back_translate(
    reverse_model,
    mono_tgt: Sequence[Sequence[int]],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    beam_width: int = PSEUDO_BEAM_WIDTH,
    max_len: int | None = None,
) -> Dataset:
    """Pair each genuine target sentence with a source produced by a target-to-source model."""
    max_len = max_len or reverse_model.config.max_decode_len
    pairs = []
    for tgt in mono_tgt:
        src = _top1(reverse_model, tgt, beam_width, max_len)
        if src:
            pairs.append(SentencePair(src, tuple(tgt), Origin.PSEUDO_FROM_TARGET_MONO))
    return Dataset(pairs, src_vocab, tgt_vocab)


def _check_vocabs(*datasets: Dataset) -> None:
    ref = datasets[0]
    for d in datasets[1:]:
        if d.src_vocab != ref.src_vocab or d.tgt_vocab != ref.tgt_vocab:
            raise VocabMismatch("datasets use different vocabularies")


def concat(*datasets: Dataset) -> Dataset:
    _check_vocabs(*datasets)
    return Dataset([p for d in datasets for p in d.pairs], datasets[0].src_vocab, datasets[0].tgt_vocab)


def build_unified_dataset(bilingual: Dataset, pseudo_src: Dataset, pseudo_tgt: Dataset, seed: int) -> Dataset:
    data = concat(bilingual, pseudo_src, pseudo_tgt)
    order = np.random.default_rng(seed).permutation(len(data))
    return Dataset([data.pairs[i] for i in order], data.src_vocab, data.tgt_vocab)


def reverse_dataset(data: Dataset) -> Dataset:
    return Dataset([SentencePair(p.tgt, p.src, p.origin) for p in data.pairs], data.tgt_vocab, data.src_vocab)


def empty_like(data: Dataset) -> Dataset:
    return Dataset([], data.src_vocab, data.tgt_vocab)


@dataclass
class RecipeResult:
    report: TrainingReport
    mle_report: TrainingReport
    rl_report: TrainingReport | None
    baseline_bleu: float  # bilingual-only MLE on dev
    reverse_bleu: float | None = None


def _pseudo_data(
    side: str,
    mono: Sequence[Sequence[int]],
    bilingual: Dataset,
    forward_model: ModelParams,
    reverse_model: ModelParams | None,
) -> Dataset:
    if not mono:
        return empty_like(bilingual)
    if side == "src":
        return generate_pseudo_targets(forward_model, mono, bilingual.src_vocab, bilingual.tgt_vocab)
    if side == "tgt":
        if reverse_model is None:
            raise ValueError("target-side monolingual data needs a reverse model")
        return back_translate(reverse_model, mono, bilingual.src_vocab, bilingual.tgt_vocab)
    raise ValueError(f"side must be 'src' or 'tgt', got {side!r}")


def train_reverse(cfg: TrainConfig, bilingual: Dataset, dev: Dataset | None) -> tuple[ModelParams, float]:
    rev = train(cfg, reverse_dataset(bilingual), reverse_dataset(dev) if dev is not None else None, "mle")
    log.info("reverse model dev BLEU %.2f", rev.best_bleu)
    return rev.best_params, rev.best_bleu


def sequential_recipe(
    cfg: TrainConfig,
    bilingual: Dataset,
    mono_a: Sequence[Sequence[int]],
    mono_b: Sequence[Sequence[int]],
    dev: Dataset | None = None,
    first_side: str = "src",
    rl_cfg: TrainConfig | None = None,
    rl_on: str = "mono",
) -> RecipeResult:
    """Phase 1: MLE on bilingual plus pseudo data from ``mono_a``.
    Phase 2: RL on pseudo data from ``mono_b``, started from phase 1's best model.

    ``rl_on="combined"`` runs phase 2 on the phase-1 data plus the new pseudo
    pairs instead. With no ``mono_b`` data phase 2 falls back to the phase-1
    training data.
    """
    second_side = "tgt" if first_side == "src" else "src"
    rl_cfg = rl_cfg or cfg
    base = train(cfg, bilingual, dev, "mle")
    reverse, reverse_bleu = (None, None)
    if (first_side == "tgt" and mono_a) or (second_side == "tgt" and mono_b):
        reverse, reverse_bleu = train_reverse(cfg, bilingual, dev)

    if mono_a:
        phase1_data = concat(bilingual, _pseudo_data(first_side, mono_a, bilingual, base.best_params, reverse))
        phase1 = train(cfg, phase1_data, dev, "mle")
    else:
        phase1_data, phase1 = bilingual, base

    pseudo_b = _pseudo_data(second_side, mono_b, bilingual, phase1.best_params, reverse)
    if len(pseudo_b) == 0:
        rl_data = phase1_data
    elif rl_on == "combined":
        rl_data = concat(phase1_data, pseudo_b)
    else:
        rl_data = pseudo_b
    phase2 = train(rl_cfg, rl_data, dev, "rl", init=phase1.best_params)
    return RecipeResult(phase1.extend(phase2), phase1, phase2, base.best_bleu, reverse_bleu)


def unified_recipe(
    cfg: TrainConfig,
    bilingual: Dataset,
    mono_src: Sequence[Sequence[int]],
    mono_tgt: Sequence[Sequence[int]],
    dev: Dataset | None = None,
    rl_cfg: TrainConfig | None = None,
    with_rl: bool = True,
) -> RecipeResult:
    """MLE on bilingual + both pseudo domains packed together, then RL on the same data."""
    rl_cfg = rl_cfg or cfg
    base = train(cfg, bilingual, dev, "mle")
    reverse, reverse_bleu = (None, None)
    if mono_tgt:
        reverse, reverse_bleu = train_reverse(cfg, bilingual, dev)
    ms = _pseudo_data("src", mono_src, bilingual, base.best_params, None)
    mt = _pseudo_data("tgt", mono_tgt, bilingual, base.best_params, reverse)
    unified = build_unified_dataset(bilingual, ms, mt, cfg.seed)
    mle = train(cfg, unified, dev, "mle")
    if not with_rl:
        return RecipeResult(mle, mle, None, base.best_bleu, reverse_bleu)
    rl = train(rl_cfg, unified, dev, "rl", init=mle.best_params)
    return RecipeResult(mle.extend(rl), mle, rl, base.best_bleu, reverse_bleu)


def rl_config(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **overrides)
