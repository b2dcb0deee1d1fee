"""Paraphrase-pair corpora and their train/valid/test splits.

Also home to the synthetic synonym-substitution corpus used at desk scale."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .text_prep import NormalizeConfig, normalize

log = logging.getLogger(__name__)

# (train, valid, test)
PRESETS = {
    "quora": (100_000, 4_000, 20_000),
    "twitter": (110_000, 1_000, 5_000),
    "desk": (5_000, 500, 500),
}


@dataclass(frozen=True)
class ParaphrasePair:
    source: str
    target: str
    pair_id: str = ""


@dataclass(frozen=True)
class SyntheticPair(ParaphrasePair):
    # word positions in ``source`` that were rewritten in ``target``
    substituted: tuple[int, ...] = ()


class SplitError(ValueError):
    pass


def read_pairs(
    path: str | Path, cfg: NormalizeConfig = NormalizeConfig()
) -> tuple[list[ParaphrasePair], int]:
    """Parse ``source<TAB>target`` lines; returns (pairs, malformed line count)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pair file not found: {path}")
    raw = path.read_bytes().decode("utf-8", errors="replace")
    pairs, malformed = [], 0
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2 or not normalize(parts[0], cfg) or not normalize(parts[1], cfg):
            malformed += 1
            continue
        pairs.append(ParaphrasePair(parts[0], parts[1], f"{path.stem}:{lineno}"))
    return pairs, malformed


def load_pairs(path: str | Path, cfg: NormalizeConfig = NormalizeConfig()) -> list[ParaphrasePair]:
    """Like :func:`read_pairs`, but logs malformed lines and rejects empty files."""
    pairs, malformed = read_pairs(path, cfg)
    if malformed:
        log.warning("%s: skipped %d malformed line(s)", path, malformed)
    if not pairs:
        raise ValueError(f"{path}: no valid source<TAB>target lines ({malformed} malformed)")
    return pairs


def write_pairs(pairs: Sequence[ParaphrasePair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(f"{p.source}\t{p.target}\n")


@dataclass
class DatasetSplit:
    train: list[ParaphrasePair]
    valid: list[ParaphrasePair]
    test: list[ParaphrasePair]
    provenance: dict = field(default_factory=dict)

    def write(self, outdir: str | Path) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            write_pairs(getattr(self, name), outdir / f"{name}.tsv")
        (outdir / "manifest.json").write_text(
            json.dumps(self.provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return outdir

    @classmethod
    def read(cls, indir: str | Path) -> "DatasetSplit":
        indir = Path(indir)
        manifest = indir / "manifest.json"
        prov = json.loads(manifest.read_text()) if manifest.exists() else {}
        return cls(
            load_pairs(indir / "train.tsv"),
            load_pairs(indir / "valid.tsv"),
            load_pairs(indir / "test.tsv"),
            prov,
        )


def source_overlap(split: DatasetSplit, cfg: NormalizeConfig = NormalizeConfig()) -> dict[str, int]:
    """Number of normalized source strings shared by each pair of subsets."""
    keys = {
        name: {normalize(p.source, cfg) for p in getattr(split, name)}
        for name in ("train", "valid", "test")
    }
    return {
        "train&valid": len(keys["train"] & keys["valid"]),
        "train&test": len(keys["train"] & keys["test"]),
        "valid&test": len(keys["valid"] & keys["test"]),
    }


def _check_sizes(sizes) -> tuple[int, int, int]:
    if len(sizes) != 3 or any(int(s) < 0 for s in sizes):
        raise SplitError(f"sizes must be three non-negative counts, got {sizes}")
    return tuple(int(s) for s in sizes)


def split_standard(pairs: Sequence[ParaphrasePair], sizes, seed: int = 0) -> DatasetSplit:
    """Shuffle under ``seed`` and slice contiguously; sources may repeat across subsets."""
    n_train, n_valid, n_test = _check_sizes(sizes)
    if n_train + n_valid + n_test > len(pairs):
        raise SplitError(f"requested {n_train + n_valid + n_test} pairs but only {len(pairs)} available")
    order = np.random.default_rng(seed).permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    train = shuffled[:n_train]
    valid = shuffled[n_train : n_train + n_valid]
    test = shuffled[n_train + n_valid : n_train + n_valid + n_test]
    prov = {"procedure": "standard", "seed": seed, "sizes": [n_train, n_valid, n_test], "overlap_checked": False}
    return DatasetSplit(train, valid, test, prov)


def split_overlap_free(
    pairs: Sequence[ParaphrasePair], sizes, seed: int = 0, cfg: NormalizeConfig = NormalizeConfig()
) -> DatasetSplit:
    """Valid/test come only from sources that occur once; train from everything else.

    Raises :class:`SplitError` if the one-to-one group cannot fill valid + test
    or the remaining pool cannot fill train.
    """
    n_train, n_valid, n_test = _check_sizes(sizes)
    keys = [normalize(p.source, cfg) for p in pairs]
    counts = Counter(keys)
    one_to_one = [i for i, k in enumerate(keys) if counts[k] == 1]
    many = [i for i, k in enumerate(keys) if counts[k] > 1]
    if len(one_to_one) < n_valid + n_test:
        raise SplitError(
            f"one-to-one group has {len(one_to_one)} pairs, need {n_valid + n_test} for valid+test"
        )
    rng = np.random.default_rng(seed)
    held = rng.permutation(one_to_one)
    valid_idx = held[:n_valid]
    test_idx = held[n_valid : n_valid + n_test]
    pool = sorted(many + [int(i) for i in held[n_valid + n_test :]])
    if len(pool) < n_train:
        raise SplitError(f"training pool has {len(pool)} pairs, need {n_train}")
    train_idx = rng.permutation(pool)[:n_train]
    split = DatasetSplit(
        [pairs[i] for i in train_idx],
        [pairs[i] for i in valid_idx],
        [pairs[i] for i in test_idx],
        {"procedure": "overlap_free", "seed": seed, "sizes": [n_train, n_valid, n_test]},
    )
    overlap = source_overlap(split, cfg)
    if any(overlap.values()):
        raise SplitError(f"overlap check failed: {overlap}")
    split.provenance["overlap_checked"] = True
    return split


# ---------------------------------------------------------------------------
# synthetic corpus

_ONSETS = "b c d f g h j k l m n p r s t v w z".split()
_VOWELS = "a e i o u".split()


def _pseudo_words(n: int, rng: np.random.Generator, exclude: set[str]) -> list[str]:
    words: list[str] = []
    seen = set(exclude)
    while len(words) < n:
        syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class SyntheticGrammar:
    """Sentences are random draws from ``base_vocab``; targets swap mapped words
    for synonyms. ``anchor`` words are never rewritten, so every pair shares at
    least one content word."""

    base_vocab: tuple[str, ...]
    synonym_map: dict[str, tuple[str, ...]]
    template_swaps: tuple[tuple[str, str], ...] = ()
    substitution_rate: float = 0.3
    prefix_rate: float = 0.0
    swap_rate: float = 0.0
    min_words: int = 5
    max_words: int = 12
    anchor_rate: float = 0.35

    @property
    def anchors(self) -> tuple[str, ...]:
        return tuple(w for w in self.base_vocab if w not in self.synonym_map)

    @property
    def mapped(self) -> tuple[str, ...]:
        return tuple(w for w in self.base_vocab if w in self.synonym_map)

    def validate(self) -> None:
        if self.anchor_rate > 0 and not self.anchors:
            raise ValueError("grammar needs at least one unmapped anchor word")
        for w, syns in self.synonym_map.items():
            if not syns or w in syns:
                raise ValueError(f"synonym set for {w!r} must be non-empty and exclude the word")
        for lhs, rhs in self.template_swaps:
            if not set(lhs.split()) & set(rhs.split()):
                raise ValueError(f"template swap {lhs!r} -> {rhs!r} shares no word")
        for r in (self.substitution_rate, self.prefix_rate, self.swap_rate, self.anchor_rate):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"rate {r} outside [0, 1]")

    @classmethod
    def default(
        cls,
        n_anchor: int = 30,
        n_mapped: int = 200,
        substitution_rate: float = 0.3,
        prefix_rate: float = 0.3,
        swap_rate: float = 0.9,
        seed: int = 1234,
    ) -> "SyntheticGrammar":
        if n_anchor < 7:
            raise ValueError("the default template swaps need at least 7 anchor words")
        rng = np.random.default_rng(seed)
        words = _pseudo_words(n_anchor + 2 * n_mapped + 12, rng, set())
        anchors = words[:n_anchor]
        mapped = words[n_anchor : n_anchor + n_mapped]
        syns = words[n_anchor + n_mapped : n_anchor + 2 * n_mapped]
        extra = words[n_anchor + 2 * n_mapped :]
        swaps = (
            (f"{anchors[0]} {anchors[1]}", f"{extra[0]} {anchors[1]} {extra[1]}"),
            (f"{anchors[2]} {anchors[3]} {anchors[4]}", f"{extra[2]} {anchors[4]}"),
            (f"{anchors[5]}", f"{extra[3]} {anchors[5]}"),
            (f"{extra[4]} {anchors[6]}", f"{anchors[6]} {extra[5]}"),
        )
        return cls(
            base_vocab=tuple(anchors + mapped),
            synonym_map={w: (s,) for w, s in zip(mapped, syns)},
            template_swaps=swaps,
            substitution_rate=substitution_rate,
            prefix_rate=prefix_rate,
            swap_rate=swap_rate,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synonym_map"] = {k: list(v) for k, v in self.synonym_map.items()}
        return d


def gen_synthetic(grammar: SyntheticGrammar, n: int, seed: int = 0) -> list[SyntheticPair]:
    """Generate ``n`` (source, target) pairs with recorded rewrite positions."""
    grammar.validate()
    rng = np.random.default_rng(seed)
    anchors, mapped = grammar.anchors, grammar.mapped
    out = []
    for k in range(n):
        length = int(rng.integers(grammar.min_words, grammar.max_words + 1))
        words = [
            anchors[rng.integers(len(anchors))]
            if (not mapped or rng.random() < grammar.anchor_rate)
            else mapped[rng.integers(len(mapped))]
            for _ in range(length)
        ]
        if grammar.anchor_rate > 0 and not any(w in anchors for w in words):
            words[int(rng.integers(length))] = anchors[rng.integers(len(anchors))]
        prefix: list[str] = []
        swap = None
        if grammar.template_swaps and rng.random() < grammar.prefix_rate:
            swap = grammar.template_swaps[rng.integers(len(grammar.template_swaps))]
            prefix = swap[0].split()
        apply_swap = swap is not None and rng.random() < grammar.swap_rate
        source = prefix + words
        target: list[str] = []
        substituted: list[int] = []
        if apply_swap:
            lhs, rhs = swap[0].split(), swap[1].split()
            target.extend(rhs)
            substituted.extend(i for i, w in enumerate(lhs) if w not in rhs)
        else:
            target.extend(prefix)
        for j, w in enumerate(words):
            syns = grammar.synonym_map.get(w)
            if syns and rng.random() < grammar.substitution_rate:
                target.append(syns[rng.integers(len(syns))])
                substituted.append(len(prefix) + j)
            else:
                target.append(w)
        out.append(SyntheticPair(" ".join(source), " ".join(target), f"syn:{seed}:{k}", tuple(substituted)))
    return out
