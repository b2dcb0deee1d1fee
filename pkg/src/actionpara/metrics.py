"""Corpus metrics on a 0-100 scale. METEOR here matches exact words first, then stems."""

from __future__ import annotations

import json
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .text_prep import stem_word

Tokens = Sequence[str]


def _tok(s: str | Tokens) -> list[str]:
    return s.split() if isinstance(s, str) else list(s)


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    smoothing: str = "add_one_on_zero"  # or "none"
    corpus_level: bool = True

    def validate(self) -> None:
        if not 1 <= self.max_n <= 4:
            raise ValueError(f"max_n must be in 1..4, got {self.max_n}")
        if self.smoothing not in ("none", "add_one_on_zero"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")


@dataclass(frozen=True)
class IBleuConfig:
    alpha: float = 0.8
    base: BleuConfig = BleuConfig()


def _check_lengths(*lists) -> None:
    n = len(lists[0])
    if n == 0:
        raise ValueError("empty corpus")
    if any(len(x) != n for x in lists):
        raise ValueError(f"corpus lists differ in length: {[len(x) for x in lists]}")


def _bleu_from_stats(matches, totals, cand_len, ref_len, cfg: BleuConfig) -> float:
    log_sum, orders = 0.0, 0
    for n in range(cfg.max_n):
        num, den = matches[n], totals[n]
        if den == 0:
            # no candidate n-grams of this order anywhere: the order is skipped
            continue
        if num == 0:
            if cfg.smoothing == "none":
                return 0.0
            num, den = 1, den + 1
        log_sum += math.log(num / den)
        orders += 1
    if orders == 0 or cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_sum / orders)


def _sentence_stats(cand: Tokens, ref: Tokens, max_n: int):
    matches, totals = [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        c, r = ngrams(cand, n), ngrams(ref, n)
        matches[n - 1] = sum(min(k, r[g]) for g, k in c.items())
        totals[n - 1] = max(len(cand) - n + 1, 0)
    return matches, totals


def bleu(candidates: Sequence[str | Tokens], references: Sequence[str | Tokens], cfg: BleuConfig = BleuConfig()) -> float:
    """Corpus BLEU (or mean sentence BLEU when ``corpus_level`` is off), single reference."""
    cfg.validate()
    _check_lengths(candidates, references)
    cands, refs = [_tok(c) for c in candidates], [_tok(r) for r in references]
    if not cfg.corpus_level:
        return float(np.mean([
            _bleu_from_stats(*_sentence_stats(c, r, cfg.max_n), len(c), len(r), cfg) for c, r in zip(cands, refs)
        ]))
    matches, totals = [0] * cfg.max_n, [0] * cfg.max_n
    for c, r in zip(cands, refs):
        m, t = _sentence_stats(c, r, cfg.max_n)
        for n in range(cfg.max_n):
            matches[n] += m[n]
            totals[n] += t[n]
    return _bleu_from_stats(matches, totals, sum(map(len, cands)), sum(map(len, refs)), cfg)


def ibleu(candidates, references, sources, cfg: IBleuConfig = IBleuConfig()) -> float:
    """alpha * BLEU(cand, ref) - (1 - alpha) * BLEU(cand, source)."""
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {cfg.alpha}")
    _check_lengths(candidates, references, sources)
    return cfg.alpha * bleu(candidates, references, cfg.base) - (1.0 - cfg.alpha) * bleu(candidates, sources, cfg.base)


def _f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_sentence(cand: Tokens, ref: Tokens, variant: str) -> float:
    if variant == "RL":
        return _f1(lcs_length(cand, ref), len(cand), len(ref))
    n = {"R1": 1, "R2": 2}.get(variant)
    if n is None:
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    c, r = ngrams(cand, n), ngrams(ref, n)
    if not c and not r:
        # both too short for this order: agree only if identical
        return 1.0 if list(cand) == list(ref) else 0.0
    return _f1(sum((c & r).values()), sum(c.values()), sum(r.values()))


def rouge(candidates, references, variant: str = "RL") -> float:
    """Sentence-averaged ROUGE F1 (``R1``, ``R2`` or ``RL``)."""
    _check_lengths(candidates, references)
    return 100.0 * float(np.mean([rouge_sentence(_tok(c), _tok(r), variant) for c, r in zip(candidates, references)]))


def _align(cand: Tokens, ref: Tokens) -> list[tuple[int, int]]:
    """Exact matches, then stem matches among the leftovers. Candidate words are
    visited right to left and take the last unused reference position with the
    same key (the usual METEOR tie-break for repeated words)."""
    match: dict[int, int] = {}
    free_c, free_r = list(range(len(cand))), list(range(len(ref)))
    for key in (str, stem_word):
        positions: dict[str, list[int]] = defaultdict(list)
        for j in free_r:
            positions[key(ref[j])].append(j)
        for i in reversed(free_c):
            js = positions.get(key(cand[i]))
            if js:
                match[i] = js.pop()
        used = set(match.values())
        free_c = [i for i in free_c if i not in match]
        free_r = [j for j in free_r if j not in used]
    return sorted(match.items())


def meteor_sentence(cand: Tokens, ref: Tokens) -> float:
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    chunks = 1 + sum(
        1 for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1)
    )
    return f * (1.0 - 0.5 * (chunks / m) ** 3)


def meteor_lite(candidates, references) -> float:
    """METEOR without synonym tables: exact then stem matching, fragmentation penalty."""
    _check_lengths(candidates, references)
    return 100.0 * float(np.mean([meteor_sentence(_tok(c), _tok(r)) for c, r in zip(candidates, references)]))


# -- reports -------------------------------------------------------------------

# column order of the result tables; self-BLEU is appended for the control analysis
COLUMNS = (
    "iBLEU-0.8", "iBLEU-0.9", "BLEU-2", "BLEU-3", "BLEU-4",
    "METEOR", "ROUGE-1", "ROUGE-2", "ROUGE-L", "self-BLEU-4",
)


def score_all(candidates, references, sources, smoothing: str = "add_one_on_zero") -> dict[str, float]:
    base4 = BleuConfig(4, smoothing)
    bleu4 = bleu(candidates, references, base4)
    self4 = bleu(candidates, sources, base4)
    return {
        "iBLEU-0.8": 0.8 * bleu4 - 0.2 * self4,
        "iBLEU-0.9": 0.9 * bleu4 - 0.1 * self4,
        "BLEU-2": bleu(candidates, references, BleuConfig(2, smoothing)),
        "BLEU-3": bleu(candidates, references, BleuConfig(3, smoothing)),
        "BLEU-4": bleu4,
        "METEOR": meteor_lite(candidates, references),
        "ROUGE-1": rouge(candidates, references, "R1"),
        "ROUGE-2": rouge(candidates, references, "R2"),
        "ROUGE-L": rouge(candidates, references, "RL"),
        "self-BLEU-4": self4,
    }


@dataclass
class MetricReport:
    mean: dict[str, float]
    std: dict[str, float]
    runs: int = 1
    per_run: list[dict[str, float]] = field(default_factory=list)

    @classmethod
    def aggregate(cls, runs: Sequence[dict[str, float]]) -> "MetricReport":
        if not runs:
            raise ValueError("no runs to aggregate")
        keys = list(runs[0])
        if any(list(r) != keys for r in runs):
            raise ValueError("runs report different metrics")
        # statistics is exact for constant data, where numpy leaves rounding residue
        mean = {k: float(statistics.mean([r[k] for r in runs])) for k in keys}
        std = {k: float(statistics.stdev([r[k] for r in runs])) if len(runs) > 1 else 0.0 for k in keys}
        return cls(mean, std, len(runs), [dict(r) for r in runs])

    def to_dict(self) -> dict:
        return {"runs": self.runs, "mean": self.mean, "std": self.std, "per_run": self.per_run}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(dict(d["mean"]), dict(d["std"]), int(d["runs"]), list(d.get("per_run", [])))


def evaluate_corpus(
    candidate_runs: Sequence[Sequence[str]], references: Sequence[str], sources: Sequence[str], smoothing="add_one_on_zero"
) -> MetricReport:
    """Score each run's candidates and aggregate mean and sample std across runs."""
    if not candidate_runs:
        raise ValueError("no runs")
    for i, run in enumerate(candidate_runs):
        if len(run) != len(references):
            raise ValueError(f"run {i} has {len(run)} candidates for {len(references)} references")
    return MetricReport.aggregate([score_all(run, references, sources, smoothing) for run in candidate_runs])


def format_table(rows: dict[str, MetricReport], columns: Iterable[str] = COLUMNS, label: str = "Mode") -> str:
    """Plain-text table: one row per entry, ``mean±std`` cells."""
    columns = [c for c in columns if any(c in r.mean for r in rows.values())]
    header = [label] + columns
    body = [
        [name] + [f"{r.mean[c]:.2f}±{r.std[c]:.2f}" if c in r.mean else "-" for c in columns]
        for name, r in rows.items()
    ]
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(str(cell).rjust(w) if j else str(cell).ljust(w) for j, (cell, w) in enumerate(zip(row, widths)))
             for row in [header] + body]
    return "\n".join(lines) + "\n"
