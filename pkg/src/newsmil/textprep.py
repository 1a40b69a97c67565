"""Raw headline text to token-id sequences, plus word-vector loading.

Tokenizer rule set (frozen for determinism):
  1. lowercase the whole string;
  2. delete apostrophes (' and the typographic variants), so "china's"
     becomes "chinas";
  3. split on whitespace;
  4. strip leading/trailing non-alphanumeric characters from each piece,
     keeping internal punctuation such as the hyphen in "crude-oil" and
     the period in "u.s";
  5. drop pieces that end up empty.

Digits are preserved.  The stopword list is external; a default English
list ships with the package (data/stopwords.txt).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ParseError
from .tensor import DTYPE

UNK_TOKEN = "<unk>"

_DROP_APOSTROPHES = str.maketrans("", "", "'’‘")


def tokenize(text: str) -> list[str]:
    """Split a headline into normalized tokens; may return an empty list."""
    out = []
    for piece in text.lower().translate(_DROP_APOSTROPHES).split():
        start, end = 0, len(piece)
        while start < end and not piece[start].isalnum():
            start += 1
        while end > start and not piece[end - 1].isalnum():
            end -= 1
        if end > start:
            out.append(piece[start:end])
    return out


def load_stopwords(path) -> frozenset[str]:
    """One token per line; blank lines and '#' comment lines are ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word and not word.startswith("#"):
                words.add(word)
    return frozenset(words)


def default_stopwords() -> frozenset[str]:
    """The English list bundled with the package."""
    text = resources.files("newsmil").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(
        w for w in (line.strip() for line in text.splitlines())
        if w and not w.startswith("#")
    )


@dataclass(frozen=True)
class Vocabulary:
    """Dense token<->id mapping.  Id 0 is always the unknown token; the
    remaining ids are assigned by descending training frequency with ties
    broken lexicographically, so construction is order-independent."""

    tokens: tuple[str, ...]
    index: dict[str, int]
    min_count: int

    unk_id = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocab(
    corpus: Iterable[Sequence[str]],
    stopwords: frozenset[str] = frozenset(),
    min_count: int = 5,
) -> Vocabulary:
    """Build a vocabulary from tokenized training titles only.

    Tokens seen fewer than min_count times and stopwords are excluded;
    the unknown token always occupies id 0.
    """
    counts: Counter[str] = Counter()
    n_titles = 0
    for tokens in corpus:
        n_titles += 1
        counts.update(tokens)
    if n_titles == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [
        tok for tok, c in counts.items()
        if c >= min_count and tok not in stopwords and tok != UNK_TOKEN
    ]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    tokens = (UNK_TOKEN, *kept)
    return Vocabulary(tokens=tokens, index={t: i for i, t in enumerate(tokens)}, min_count=min_count)


def encode_title(tokens: Sequence[str], vocab: Vocabulary) -> tuple[int, ...]:
    """Map tokens to ids; out-of-vocabulary tokens map to the unknown id."""
    return tuple(vocab.id_of(t) for t in tokens)


@dataclass
class EmbeddingMatrix:
    """|V| x d word-vector table; row 0 (the unknown token) is zero."""

    vectors: np.ndarray
    trainable: bool = False

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]


def init_embeddings(vocab: Vocabulary, dim: int, rng: np.random.Generator,
                    trainable: bool = False, scale: float = 0.05) -> EmbeddingMatrix:
    """Random uniform(-scale, scale) vectors for every token; unknown row
    zero.  Pretrained vectors have component magnitudes around 0.3-0.6, so
    runs without an embedding file may want a larger scale."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    vec = rng.uniform(-scale, scale, size=(len(vocab), dim)).astype(DTYPE)
    vec[vocab.unk_id] = 0.0
    return EmbeddingMatrix(vectors=vec, trainable=trainable)


def load_pretrained(path, vocab: Vocabulary, dim: int, rng: np.random.Generator,
                    trainable: bool = False) -> EmbeddingMatrix:
    """Load GloVe-style text vectors (token v1 ... vd per line).

    Vocabulary tokens found in the file take the file's vector; missing
    tokens are initialized uniform(-0.05, 0.05) in vocabulary id order so
    reloading with the same seed reproduces the matrix exactly.  The
    unknown-token row stays zero.
    """
    found: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split(" ")
            if len(fields) < 2:
                raise ParseError("empty or token-only line", path=path, line=lineno)
            if lineno == 1 and len(fields) - 1 != dim:
                raise FormatError(
                    f"file has {len(fields) - 1}-dimensional vectors, expected {dim}",
                    path=path,
                )
            if len(fields) - 1 != dim:
                raise ParseError(
                    f"expected {dim + 1} fields, got {len(fields)}", path=path, line=lineno
                )
            token = fields[0]
            if token in vocab and token not in found:
                try:
                    found[token] = np.array([float(v) for v in fields[1:]], dtype=DTYPE)
                except ValueError as exc:
                    raise ParseError(f"non-numeric vector component: {exc}",
                                     path=path, line=lineno) from None
    vec = np.zeros((len(vocab), dim), dtype=DTYPE)
    for idx, token in enumerate(vocab.tokens):
        if idx == vocab.unk_id:
            continue
        row = found.get(token)
        vec[idx] = row if row is not None else rng.uniform(-0.05, 0.05, size=dim)
    return EmbeddingMatrix(vectors=vec, trainable=trainable)
