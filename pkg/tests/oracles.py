"""Independent oracles used across the test suite.

Everything here is deliberately written from first principles (loops, direct
formula evaluation) and must stay independent of the library code it checks.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np


def fd_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function around x (mutated in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# --- box-filter / bilinear resize oracles -----------------------------------


def box_downsample(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Integer-factor box average, rounded half away from zero."""
    h, w = pixels.shape
    out = np.empty((h // factor, w // factor))
    for y in range(h // factor):
        for x in range(w // factor):
            out[y, x] = pixels[y * factor : (y + 1) * factor, x * factor : (x + 1) * factor].mean()
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def hist_eq_reference(pixels: np.ndarray) -> np.ndarray:
    """Direct evaluation of the classical CDF remap."""
    n = pixels.size
    counts = Counter(int(v) for v in pixels.ravel())
    cdf = {}
    running = 0
    for v in range(256):
        running += counts.get(v, 0)
        cdf[v] = running
    cdf_min = min(cdf[v] for v in counts)
    if n == cdf_min:
        return pixels.copy()
    out = np.empty_like(pixels)
    for idx, v in np.ndenumerate(pixels):
        out[idx] = int(math.floor(255.0 * (cdf[int(v)] - cdf_min) / (n - cdf_min) + 0.5))
    return out


# --- CIDEr brute force (direct evaluation of the tf-idf / cosine formulas) ---


def _grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bf_tfidf(sentence, refs_per_image, n):
    """TF-IDF weights for one sentence's n-grams against a reference corpus."""
    grams = _grams(sentence, n)
    if not grams:
        return {}
    counts = Counter(grams)
    total = len(grams)
    n_images = len(refs_per_image)
    vec = {}
    for gram, h in counts.items():
        df = 0
        for refs in refs_per_image:
            if any(gram in _grams(ref, n) for ref in refs):
                df += 1
        df = max(df, 1)
        weight = (h / total) * math.log(n_images / df)
        if weight != 0.0:
            vec[gram] = weight
    return vec


def _cosine(u, v):
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(u[g] * v.get(g, 0.0) for g in u)
    return dot / (nu * nv)


def bf_cider_n(candidate, refs, refs_per_image, n):
    cvec = bf_tfidf(candidate, refs_per_image, n)
    return sum(_cosine(cvec, bf_tfidf(r, refs_per_image, n)) for r in refs) / len(refs)


def bf_cider(candidate, refs, refs_per_image, max_n=4):
    return sum(bf_cider_n(candidate, refs, refs_per_image, n) for n in range(1, max_n + 1)) / max_n


def bf_corpus_cider(candidates, references, max_n=4):
    scores = [bf_cider(c, refs, references, max_n) for c, refs in zip(candidates, references)]
    return scores, sum(scores) / len(scores)


# --- exhaustive sequence enumeration (beam-search ground truth) --------------


def enumerate_best_sequences(step_logprobs, end_index, max_len, n_best):
    """Rank all sequences of up to max_len tokens by exact cumulative log-probability.

    step_logprobs(prefix) -> 1-d array of next-token log-probs given the prefix
    (prefix excludes the start token).  Sequences either end with end_index or
    are cut off at max_len; ranking matches raw preference probability with
    ties broken by token index, earlier-divergence first.
    """
    results = []

    def walk(prefix, lp):
        if prefix and prefix[-1] == end_index:
            results.append((tuple(prefix), lp))
            return
        if len(prefix) == max_len:
            results.append((tuple(prefix), lp))
            return
        logp = step_logprobs(prefix)
        for tok in range(len(logp)):
            walk(prefix + [tok], lp + float(logp[tok]))

    walk([], 0.0)
    results.sort(key=lambda r: (-r[1], r[0]))
    return results[:n_best]
