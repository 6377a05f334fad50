"""Corpus BLEU-1..4 and ROUGE-L.

Tokenization follows the mteval-v13a rules (punctuation split off words,
periods and commas kept inside numbers) followed by lowercasing.

BLEU conventions:

* clipped n-gram counts pooled over the corpus, single reference per candidate;
* brevity penalty ``min(1, exp(1 - r / c))`` on total lengths (0 when ``c == 0``);
* for ``n >= 2`` a zero match count is replaced by ``k = 0.1`` (add-k floor);
* an order with no candidate n-grams at all is left out of the geometric mean
  (so a perfect match of a 2-token sentence still scores 1.0).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

SMOOTHING_K = 0.1

_PUNCT = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PERIOD_COMMA_AFTER = re.compile(r"([^0-9])([\.,])")
_PERIOD_COMMA_BEFORE = re.compile(r"([\.,])([^0-9])")
_DIGIT_DASH = re.compile(r"([0-9])(-)")


def tokenize(text: str) -> list[str]:
    norm = text.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    norm = norm.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    norm = f" {norm} "
    norm = _PUNCT.sub(r" \1 ", norm)
    norm = _PERIOD_COMMA_AFTER.sub(r"\1 \2 ", norm)
    norm = _PERIOD_COMMA_BEFORE.sub(r" \1 \2", norm)
    norm = _DIGIT_DASH.sub(r"\1 \2 ", norm)
    return norm.lower().split()


@dataclass(frozen=True)
class ScoreReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    n_sentences: int

    def as_row(self) -> list[float]:
        return [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_statistics(candidates, references, max_n: int = 4):
    """Pooled ``(correct, total, cand_len, ref_len)`` over the corpus."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    correct = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cc = _ngrams(cand, n)
            rc = _ngrams(ref, n)
            correct[n - 1] += sum(min(c, rc[g]) for g, c in cc.items())
            total[n - 1] += max(0, len(cand) - n + 1)
    return correct, total, c_len, r_len


def bleu(candidates, references, max_n: int = 4, smoothing_k: float = SMOOTHING_K) -> list[float]:
    """Corpus BLEU-1..BLEU-``max_n`` for pre-tokenized sentences."""
    correct, total, c_len, r_len = bleu_statistics(candidates, references, max_n)
    if c_len == 0 or correct[0] == 0:
        return [0.0] * max_n
    bp = min(1.0, math.exp(1.0 - r_len / c_len))
    scores = []
    logs = []
    for n in range(max_n):
        if total[n] > 0:
            hits = correct[n] if (correct[n] > 0 or n == 0) else smoothing_k
            logs.append(math.log(hits / total[n]))
        scores.append(bp * math.exp(sum(logs) / len(logs)))
    return scores


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(cand: Sequence[str], ref: Sequence[str]) -> float:
    lcs = lcs_length(cand, ref)
    p = lcs / len(cand) if cand else 0.0
    r = lcs / len(ref) if ref else 0.0
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def rouge_l(candidates, references) -> float:
    """Mean sentence-level ROUGE-L F1 (beta = 1)."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        return 0.0
    return sum(rouge_l_sentence(c, r) for c, r in zip(candidates, references)) / len(candidates)


def score_corpus(hypotheses: Sequence[str], references: Sequence[str]) -> ScoreReport:
    """Tokenize raw strings and compute the full report."""
    cands = [tokenize(h) for h in hypotheses]
    refs = [tokenize(r) for r in references]
    b = bleu(cands, refs)
    return ScoreReport(*b, rouge_l=rouge_l(cands, refs), n_sentences=len(cands))
