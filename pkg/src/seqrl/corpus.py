"""Vocabularies, encoded sentence pairs and token-budgeted batching."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")
NUM_SPECIALS = len(SPECIAL_TOKENS)


class CorpusError(ValueError):
    pass


class EmptySentence(CorpusError):
    pass


class LineCountMismatch(CorpusError):
    pass


class OversizedPair(CorpusError):
    pass


class VocabMismatch(CorpusError):
    pass


class Origin(enum.Enum):
    BILINGUAL = "B"
    PSEUDO_FROM_SOURCE_MONO = "MS"
    PSEUDO_FROM_TARGET_MONO = "MT"


class Vocabulary:
    """Bidirectional token/id map. Ids 0-3 are always PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        for tok in tokens:
            if tok in self.token_to_id:
                raise CorpusError(f"duplicate token {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    @property
    def specials(self) -> dict[str, int]:
        return {"PAD": PAD, "BOS": BOS, "EOS": EOS, "UNK": UNK}

    @property
    def content_tokens(self) -> list[str]:
        return self.id_to_token[NUM_SPECIALS:]

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS))

    def save(self, path: str | Path) -> None:
        """One content token per line; line index + 4 is the id."""
        Path(path).write_text("".join(t + "\n" for t in self.content_tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def build_vocab(lines: Iterable[str], min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Frequency-ordered vocabulary; ties resolved lexicographically.

    ``max_size`` bounds the total size including the four reserved ids.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(line.split())
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[: max(0, max_size - NUM_SPECIALS)]
    return Vocabulary(kept)


@dataclass(frozen=True)
class SentencePair:
    src: tuple[int, ...]
    tgt: tuple[int, ...]
    origin: Origin = Origin.BILINGUAL

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise EmptySentence("both sides of a pair must be non-empty")


@dataclass
class Dataset:
    pairs: list[SentencePair]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def origin_counts(self) -> Counter:
        return Counter(p.origin for p in self.pairs)

    def save(self, prefix: str | Path) -> tuple[Path, Path, Path]:
        """Write ``prefix.src``, ``prefix.tgt`` and the ``prefix.origin`` sidecar."""
        prefix = Path(prefix)
        paths = tuple(prefix.with_name(prefix.name + ext) for ext in (".src", ".tgt", ".origin"))
        paths[0].write_text("".join(self.src_vocab.decode(p.src) + "\n" for p in self.pairs), encoding="utf-8")
        paths[1].write_text("".join(self.tgt_vocab.decode(p.tgt) + "\n" for p in self.pairs), encoding="utf-8")
        paths[2].write_text("".join(p.origin.value + "\n" for p in self.pairs), encoding="utf-8")
        return paths


def encode_sentence(vocab: Vocabulary, text: str) -> tuple[int, ...]:
    toks = text.split()
    if not toks:
        raise EmptySentence("empty sentence")
    return tuple(vocab.lookup(t) for t in toks)


def _read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def load_parallel(
    src_path: str | Path,
    tgt_path: str | Path,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    max_len: int,
    origin_path: str | Path | None = None,
) -> Dataset:
    """Read two aligned files, dropping pairs where either side exceeds ``max_len``.

    Pairs with an empty side are dropped as well. When ``origin_path`` is
    given the sidecar tags are attached to the pairs.
    """
    src_lines, tgt_lines = _read_lines(src_path), _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise LineCountMismatch(f"{src_path}: {len(src_lines)} lines, {tgt_path}: {len(tgt_lines)} lines")
    origins = [Origin.BILINGUAL] * len(src_lines)
    if origin_path is not None:
        tags = _read_lines(origin_path)
        if len(tags) != len(src_lines):
            raise LineCountMismatch(f"{origin_path}: {len(tags)} tags for {len(src_lines)} pairs")
        origins = [Origin(t.strip()) for t in tags]
    pairs = []
    for s, t, o in zip(src_lines, tgt_lines, origins):
        ss, tt = s.split(), t.split()
        if not ss or not tt or len(ss) > max_len or len(tt) > max_len:
            continue
        pairs.append(SentencePair(encode_sentence(src_vocab, s), encode_sentence(tgt_vocab, t), o))
    return Dataset(pairs, src_vocab, tgt_vocab)


def load_mono(path: str | Path, vocab: Vocabulary, max_len: int) -> list[tuple[int, ...]]:
    out = []
    for line in _read_lines(path):
        toks = line.split()
        if toks and len(toks) <= max_len:
            out.append(encode_sentence(vocab, line))
    return out


@dataclass
class Batch:
    pairs: list[SentencePair]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def srcs(self) -> list[tuple[int, ...]]:
        return [p.src for p in self.pairs]

    @property
    def tgts(self) -> list[tuple[int, ...]]:
        return [p.tgt for p in self.pairs]


def make_batches(dataset: Dataset | Sequence[SentencePair], max_tokens: int, seed: int) -> Iterator[Batch]:
    """Seeded shuffle, then greedy fill under a per-side token budget."""
    pairs = list(dataset.pairs if isinstance(dataset, Dataset) else dataset)
    for p in pairs:
        if len(p.src) > max_tokens or len(p.tgt) > max_tokens:
            raise OversizedPair(f"pair of lengths ({len(p.src)}, {len(p.tgt)}) exceeds budget {max_tokens}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    current: list[SentencePair] = []
    n_src = n_tgt = 0
    for i in order:
        p = pairs[i]
        if current and (n_src + len(p.src) > max_tokens or n_tgt + len(p.tgt) > max_tokens):
            yield Batch(current)
            current, n_src, n_tgt = [], 0, 0
        current.append(p)
        n_src += len(p.src)
        n_tgt += len(p.tgt)
    if current:
        yield Batch(current)
