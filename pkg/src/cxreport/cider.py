"""Consensus-based caption scoring: TF-IDF n-gram vectors and their cosine means.

Scores live in [0, 1] as the formulas are written; an optional x10 display
scale matches the common reporting convention and is clearly labeled when
used.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

__all__ = ["CiderCorpusStats", "corpus_stats", "tfidf", "cider_n", "cider", "corpus_cider"]


def _ngrams(tokens, n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


@dataclass(frozen=True)
class CiderCorpusStats:
    """Per-n document frequencies over the reference corpus."""

    doc_freq: dict[int, dict[tuple[str, ...], int]]
    n_images: int
    max_n: int

    def df(self, gram: tuple[str, ...]) -> int:
        # novel candidate grams are treated as occurring in one document,
        # otherwise the idf denominator would be zero
        return self.doc_freq.get(len(gram), {}).get(gram, 1)


def corpus_stats(references, max_n: int = 4) -> CiderCorpusStats:
    """Document frequencies; each image counts at most once per gram.

    references: one entry per image, each a list of tokenized reference
    sentences for that image.
    """
    if not references:
        raise ValueError("corpus_stats requires at least one image")
    doc_freq: dict[int, dict[tuple[str, ...], int]] = {n: {} for n in range(1, max_n + 1)}
    for refs in references:
        for n in range(1, max_n + 1):
            grams = set()
            for ref in refs:
                grams.update(_ngrams(ref, n))
            table = doc_freq[n]
            for gram in grams:
                table[gram] = table.get(gram, 0) + 1
    return CiderCorpusStats(doc_freq=doc_freq, n_images=len(references), max_n=max_n)


def tfidf(sentence, stats: CiderCorpusStats, n: int) -> dict[tuple[str, ...], float]:
    """Sparse TF-IDF vector over the sentence's n-grams; zero weights omitted."""
    if n > stats.max_n:
        raise ValueError(f"stats were built for n up to {stats.max_n}, requested {n}")
    grams = _ngrams(sentence, n)
    if not grams:
        return {}
    counts = Counter(grams)
    total = len(grams)
    vec = {}
    for gram, h in counts.items():
        weight = (h / total) * math.log(stats.n_images / stats.df(gram))
        if weight != 0.0:
            vec[gram] = weight
    return vec


def _cosine(u: dict, v: dict) -> float:
    norm_u = math.sqrt(sum(w * w for w in u.values()))
    norm_v = math.sqrt(sum(w * w for w in v.values()))
    if norm_u == 0.0 or norm_v == 0.0:
        return 0.0
    return sum(w * v.get(g, 0.0) for g, w in u.items()) / (norm_u * norm_v)


def cider_n(candidate, refs_for_image, stats: CiderCorpusStats, n: int) -> float:
    """Mean cosine similarity of TF-IDF vectors at one n-gram length."""
    if not refs_for_image:
        raise ValueError("cider_n requires at least one reference")
    cand_vec = tfidf(candidate, stats, n)
    return sum(_cosine(cand_vec, tfidf(ref, stats, n)) for ref in refs_for_image) / len(refs_for_image)


def cider(candidate, refs_for_image, stats: CiderCorpusStats, max_n: int = 4) -> float:
    """Arithmetic mean of the per-length scores for n = 1..max_n."""
    return sum(cider_n(candidate, refs_for_image, stats, n) for n in range(1, max_n + 1)) / max_n


def corpus_cider(candidates, references, stats: CiderCorpusStats, max_n: int = 4):
    """Per-image scores plus their mean over aligned candidate/reference lists."""
    if len(candidates) != len(references):
        raise ValueError(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}"
        )
    per_image = [cider(c, refs, stats, max_n) for c, refs in zip(candidates, references)]
    return per_image, sum(per_image) / len(per_image)
