"""Text normalization plus the whitespace vocabulary used for id encoding."""

from __future__ import annotations

import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

DEFAULT_MAX_LEN = 20
REPLACEMENT_CHAR = "�"


class TextWarning(UserWarning):
    """Raised through ``warnings`` when input text had undecodable bytes."""


@dataclass(frozen=True)
class NormalizeConfig:
    lowercase: bool = True
    fold_accents: bool = True
    stem: bool = False
    collapse_whitespace: bool = True


@lru_cache(maxsize=1)
def _stemmer():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


@lru_cache(maxsize=65536)
def stem_word(word: str) -> str:
    """Porter stem, iterated to a fixed point so that stemming is idempotent."""
    stemmer = _stemmer()
    for _ in range(8):
        nxt = stemmer.stem(word, to_lowercase=False)
        if nxt == word:
            break
        word = nxt
    return word


def _fold(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def _clean_surrogates(text: str) -> str:
    if not any(0xD800 <= ord(ch) <= 0xDFFF for ch in text):
        return text
    warnings.warn("text contained unpaired surrogates; replaced", TextWarning, stacklevel=3)
    return "".join(REPLACEMENT_CHAR if 0xD800 <= ord(ch) <= 0xDFFF else ch for ch in text)


def _normalize_once(text: str, cfg: NormalizeConfig) -> str:
    if cfg.fold_accents:
        text = _fold(text)
    if cfg.lowercase:
        text = text.lower()
        if cfg.fold_accents:
            # lowercasing can reintroduce combining marks (e.g. U+0130)
            text = _fold(text)
    words = text.split() if cfg.collapse_whitespace else text.split(" ")
    if cfg.stem:
        words = [stem_word(w) for w in words]
    return " ".join(words)


def normalize(text: str | bytes, cfg: NormalizeConfig = NormalizeConfig()) -> str:
    """Normalize raw text: accent folding, lowercasing, stemming, whitespace collapse.

    Bytes are decoded as UTF-8; undecodable sequences become U+FFFD and a
    ``TextWarning`` is emitted. The result is a fixed point of ``normalize``.
    """
    if isinstance(text, bytes):
        decoded = text.decode("utf-8", errors="replace")
        if REPLACEMENT_CHAR in decoded and REPLACEMENT_CHAR.encode() not in text:
            warnings.warn("undecodable bytes replaced", TextWarning, stacklevel=2)
        text = decoded
    text = _clean_surrogates(text)
    out = _normalize_once(text, cfg)
    # a handful of compatibility characters need a second pass to settle
    for _ in range(4):
        nxt = _normalize_once(out, cfg)
        if nxt == out:
            break
        out = nxt
    return out


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass(frozen=True)
class Vocab:
    itos: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.itos[:4]) != SPECIALS:
            raise ValueError(f"first four vocab entries must be {SPECIALS}, got {self.itos[:4]}")
        mapping = {tok: i for i, tok in enumerate(self.itos)}
        if len(mapping) != len(self.itos):
            raise ValueError("vocab contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def size(self) -> int:
        return len(self.itos)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str], size: int = 2000) -> Vocab:
    """Keep the ``size - 4`` most frequent whitespace tokens (ties: lexicographic)."""
    if size < 5:
        raise ValueError(f"vocab size must be >= 5, got {size}")
    counts = Counter(tok for text in corpus for tok in text.split() if tok not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(SPECIALS + tuple(tok for tok, _ in ranked[: size - 4]))


@dataclass(frozen=True)
class TokenSeq:
    """Token surfaces and their vocab ids. OOV surfaces are kept; their id is UNK."""

    tokens: tuple[str, ...]
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.ids):
            raise ValueError("tokens and ids must have equal length")

    @property
    def m(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content(self) -> tuple[str, ...]:
        return tuple(t for t in self.tokens if t not in (CLS, SEP, PAD))


def encode(
    text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN, *, add_cls: bool = True
) -> TokenSeq:
    """Truncate to ``max_len`` word tokens, then wrap as [CLS] ... [SEP].

    With ``add_cls=False`` the result is a decoder target: words + [SEP].
    """
    words = text.split()[:max_len]
    tokens = ([CLS] if add_cls else []) + words + [SEP]
    ids = [vocab.id(t) for t in tokens]
    return TokenSeq(tuple(tokens), tuple(ids))


def encode_target(text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> TokenSeq:
    return encode(text, vocab, max_len, add_cls=False)


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    words = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= vocab.size:
            raise ValueError(f"token id {i} out of range for vocab of size {vocab.size}")
        if i >= len(SPECIALS):
            words.append(vocab.itos[i])
    return " ".join(words)
