"""Attack loss and evaluation metrics over LaTeX OCR outputs.

The loss is cosine similarity between TF-IDF vectors of the clean and
adversarial token sequences. The corpus for each comparison is exactly the
two documents being compared (n = 2), with smoothed idf
ln((1+n)/(1+df)) + 1 and Euclidean normalization, so the loss is
self-contained per query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EPS_SIM = 1e-9  # floating-point guard on the "similarity dropped below 1" predicate


@dataclass(frozen=True)
class TfidfVector:
    weights: dict[str, float]
    norm: float


@dataclass(frozen=True)
class MetricsRow:
    cosine_similarity: float
    success: bool
    accuracy: float
    psnr: float


def tokenize(latex: str) -> list[str]:
    """Greedy LaTeX-aware split.

    A backslash plus a maximal ASCII-letter run is one token (``\\frac``);
    a backslash plus a single non-letter is one token; every other
    non-whitespace character stands alone. Whitespace is dropped.
    """
    tokens = []
    i, n = 0, len(latex)
    while i < n:
        ch = latex[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "\\":
            j = i + 1
            while j < n and latex[j].isascii() and latex[j].isalpha():
                j += 1
            if j == i + 1 and j < n:  # backslash + one non-letter
                j += 1
            tokens.append(latex[i:j])
            i = j
        else:
            tokens.append(ch)
            i += 1
    return tokens


def _counts(tokens: list[str]) -> dict[str, int]:
    c: dict[str, int] = {}
    for t in tokens:
        c[t] = c.get(t, 0) + 1
    return c


def tfidf_pair(y: list[str], y_adv: list[str]) -> tuple[TfidfVector, TfidfVector]:
    """TF-IDF vectors over the two-document corpus {y, y_adv}.

    Tokens are processed in sorted order so every float reduction has one
    canonical summation order: results are bit-identical across runs and
    symmetric in the argument order.
    """
    ca, cb = _counts(y), _counts(y_adv)
    vocab = sorted(set(ca) | set(cb))
    n_docs = 2

    def vec(counts: dict[str, int]) -> TfidfVector:
        weights = {}
        for t in vocab:
            tf = counts.get(t, 0)
            if tf == 0:
                continue
            df = (t in ca) + (t in cb)
            idf = math.log((1 + n_docs) / (1 + df)) + 1.0
            weights[t] = tf * idf
        norm = math.sqrt(sum(w * w for w in weights.values()))
        if norm > 0:
            weights = {t: w / norm for t, w in weights.items()}
            norm = 1.0
        return TfidfVector(weights, norm)

    return vec(ca), vec(cb)


def cosine_similarity(y: list[str], y_adv: list[str]) -> float:
    """The attack loss C_sim in [0, 1].

    Defined as 1 when both sequences are empty and 0 when exactly one is.
    """
    if not y and not y_adv:
        return 1.0
    if not y or not y_adv:
        return 0.0
    va, vb = tfidf_pair(y, y_adv)
    dot = sum(va.weights[t] * vb.weights[t]
              for t in sorted(va.weights.keys() & vb.weights.keys()))
    return min(1.0, max(0.0, dot))


def _lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def char_accuracy(y: str, y_adv: str) -> float:
    """LCS character overlap of the raw LaTeX strings, whitespace stripped,
    normalized by the clean-output length."""
    a = "".join(y.split())
    b = "".join(y_adv.split())
    return _lcs_length(a, b) / max(len(a), 1)


def success(cos_sim: float) -> bool:
    """Attack counted as successful iff similarity dropped measurably below 1."""
    return cos_sim < 1.0 - EPS_SIM
