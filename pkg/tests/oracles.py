"""Independent reference computations used as test oracles.

Nothing here imports the metric or gradient code under test.
"""

from __future__ import annotations

import math

import numpy as np
import torch

# -- n-gram metrics, written with plain loops ----------------------------------


def count_ngrams(words, n):
    table = {}
    for start in range(0, len(words) - n + 1):
        g = " ".join(words[start : start + n])
        table[g] = table.get(g, 0) + 1
    return table


def brute_bleu(cands, refs, max_n=4, smoothing=True):
    num = [0] * max_n
    den = [0] * max_n
    clen = rlen = 0
    for c, r in zip(cands, refs):
        c, r = c.split(), r.split()
        clen += len(c)
        rlen += len(r)
        for n in range(1, max_n + 1):
            cc, rc = count_ngrams(c, n), count_ngrams(r, n)
            for g in cc:
                num[n - 1] += min(cc[g], rc.get(g, 0))
            den[n - 1] += sum(cc.values())
    logs = []
    for a, b in zip(num, den):
        if b == 0:
            continue
        if a == 0:
            if not smoothing:
                return 0.0
            a, b = 1, b + 1
        logs.append(math.log(a) - math.log(b))
    if not logs or clen == 0:
        return 0.0
    bp = 1.0 if clen >= rlen else math.exp(1 - rlen / clen)
    return 100 * bp * math.exp(sum(logs) / len(logs))


def _lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            table[i][j] = table[i + 1][j + 1] + 1 if a[i] == b[j] else max(table[i + 1][j], table[i][j + 1])
    return table[0][0]


def brute_rouge_sentence(c, r, variant):
    c, r = c.split(), r.split()
    if variant == "RL":
        hit, nc, nr = _lcs(c, r), len(c), len(r)
    else:
        n = 1 if variant == "R1" else 2
        cc, rc = count_ngrams(c, n), count_ngrams(r, n)
        if not cc and not rc:
            return 1.0 if c == r else 0.0
        hit = sum(min(v, rc.get(g, 0)) for g, v in cc.items())
        nc, nr = sum(cc.values()), sum(rc.values())
    if hit == 0:
        return 0.0
    p, q = hit / nc, hit / nr
    return 2 * p * q / (p + q)


def brute_rouge(cands, refs, variant):
    return 100 * sum(brute_rouge_sentence(c, r, variant) for c, r in zip(cands, refs)) / len(cands)


class _NoSynonyms:
    def synsets(self, *args, **kwargs):
        return []


def nltk_meteor(cands, refs):
    """nltk's METEOR with an empty synonym table: exact + Porter-stem matching."""
    from nltk.translate.meteor_score import single_meteor_score

    scores = [single_meteor_score(r.split(), c.split(), wordnet=_NoSynonyms()) for c, r in zip(cands, refs)]
    return 100 * sum(scores) / len(scores)


# -- finite differences ----------------------------------------------------------


def central_difference(loss_fn, param: torch.Tensor, index, h: float) -> float:
    """(f(p + h) - f(p - h)) / 2h for one coordinate; restores the value."""
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + h
        up = loss_fn()
        param[index] = orig - h
        down = loss_fn()
        param[index] = orig
    return (up - down) / (2 * h)


def sample_coords(shape, k, rng: np.random.Generator):
    """``k`` distinct flat coordinates (all of them if the array is smaller)."""
    size = int(np.prod(shape))
    flat = np.arange(size) if size <= k else rng.choice(size, size=k, replace=False)
    return [tuple(int(v) for v in np.unravel_index(f, shape)) for f in flat]


def vector_rel_error(a, b, zero_tol: float = 1e-7) -> float:
    """||a - b|| / max(||a||, ||b||). When both vectors are below ``zero_tol``
    the true gradient is zero (e.g. attention key biases) and they agree."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < zero_tol:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
