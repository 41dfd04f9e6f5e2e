"""Synthetic translation tasks small enough to train in minutes on a CPU."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, SentencePair, Vocabulary, build_vocab, encode_sentence


@dataclass
class ToyTask:
    """Token-wise substitution cipher; ``cipher=False`` gives a plain copy task."""

    n_symbols: int = 10
    min_len: int = 3
    max_len: int = 8
    cipher: bool = True
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.src_words = [f"s{i}" for i in range(self.n_symbols)]
        perm = rng.permutation(self.n_symbols) if self.cipher else np.arange(self.n_symbols)
        prefix = "t" if self.cipher else "s"
        self.mapping = {f"s{i}": f"{prefix}{perm[i]}" for i in range(self.n_symbols)}

    def source_sentences(self, n: int, seed: int) -> list[str]:
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            k = int(rng.integers(self.min_len, self.max_len + 1))
            out.append(" ".join(self.src_words[j] for j in rng.integers(0, self.n_symbols, size=k)))
        return out

    def translate(self, line: str) -> str:
        return " ".join(self.mapping[w] for w in line.split())

    def parallel(self, n: int, seed: int) -> tuple[list[str], list[str]]:
        src = self.source_sentences(n, seed)
        return src, [self.translate(s) for s in src]

    def vocabs(self) -> tuple[Vocabulary, Vocabulary]:
        return build_vocab(self.src_words), build_vocab(sorted(set(self.mapping.values())))

    def dataset(self, n: int, seed: int, reverse: bool = False) -> Dataset:
        sv, tv = self.vocabs()
        src, tgt = self.parallel(n, seed)
        if reverse:
            src, tgt, sv, tv = tgt, src, tv, sv
        pairs = [SentencePair(encode_sentence(sv, s), encode_sentence(tv, t)) for s, t in zip(src, tgt)]
        return Dataset(pairs, sv, tv)

    def write(self, out_dir: str | Path, splits: dict[str, tuple[int, int]], mono: dict[str, tuple[int, int]] = {}) -> None:
        """Write ``<split>.src/.tgt`` files and ``<name>.mono.src/.tgt`` monolingual files.

        ``splits`` maps a split name to ``(size, seed)``; ``mono`` does the same
        for monolingual corpora, keyed by ``"src"`` or ``"tgt"``.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (n, seed) in splits.items():
            src, tgt = self.parallel(n, seed)
            (out / f"{name}.src").write_text("".join(s + "\n" for s in src), encoding="utf-8")
            (out / f"{name}.tgt").write_text("".join(t + "\n" for t in tgt), encoding="utf-8")
        for side, (n, seed) in mono.items():
            src, tgt = self.parallel(n, seed)
            lines = src if side == "src" else tgt
            (out / f"mono.{side}").write_text("".join(s + "\n" for s in lines), encoding="utf-8")
