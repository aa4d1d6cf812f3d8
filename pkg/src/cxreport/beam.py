"""Width-k beam decoding with a retired pool of finished hypotheses.

Ranking uses raw cumulative log-probability (the preference probability);
an optional length-normalized score is available for experimentation but is
off by default.  <start> is never emitted, matching greedy decoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .decoder import Decoder, DecoderState
from .encoder import FeatureMap
from .text import END_INDEX, START_INDEX, TokenizedReport

__all__ = ["BeamHypothesis", "ScoredReport", "beam_search", "beam_search_hypotheses"]


@dataclass
class BeamHypothesis:
    indices: tuple[int, ...]
    log_prob: float
    state: DecoderState
    alphas: list[np.ndarray]
    finished: bool
    age: int

    @property
    def report(self) -> TokenizedReport:
        idx = self.indices if self.finished else self.indices + (END_INDEX,)
        return TokenizedReport(idx)

    def score(self, length_normalize: bool) -> float:
        if not length_normalize:
            return self.log_prob
        return self.log_prob / max(1, len(self.indices) - 1)


class ScoredReport(NamedTuple):
    report: TokenizedReport
    log_prob: float


def _rank_key(hyp: BeamHypothesis, length_normalize: bool):
    return (-hyp.score(length_normalize), hyp.indices[1:])


def beam_search_hypotheses(
    decoder: Decoder,
    features: FeatureMap,
    beam_width: int = 3,
    max_len: int = 24,
    n_best: int = 3,
    length_normalize: bool = False,
) -> list[BeamHypothesis]:
    """Best-first expansion; returns up to n_best hypotheses, best score first.

    Finished hypotheses retire to a completed pool; the search stops once the
    pool's n_best best scores dominate every live hypothesis, or at max_len.
    Unfinished survivors at the cap fill remaining slots.  Ties break by token
    index, then by hypothesis age.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be at least 1")
    if not (1 <= n_best <= beam_width):
        raise ValueError(f"n_best must be in [1, beam_width], got {n_best} with width {beam_width}")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")

    live = [
        BeamHypothesis(
            indices=(START_INDEX,),
            log_prob=0.0,
            state=DecoderState.zeros(decoder.cfg.hidden_size),
            alphas=[],
            finished=False,
            age=0,
        )
    ]
    completed: list[BeamHypothesis] = []
    age = 1

    with ad.no_grad():
        for _ in range(max_len):
            candidates = []
            for hyp in live:
                out = decoder.step(hyp.indices[-1], features, hyp.state)
                with np.errstate(divide="ignore"):
                    logp = np.log(out.word_dist.data)
                for tok in range(decoder.cfg.vocab_size):
                    if tok == START_INDEX:
                        continue
                    candidates.append((hyp.log_prob + float(logp[tok]), tok, hyp, out))
            candidates.sort(key=lambda cand: (-cand[0], cand[1], cand[2].age))

            live = []
            for score, tok, parent, out in candidates[:beam_width]:
                child = BeamHypothesis(
                    indices=parent.indices + (tok,),
                    log_prob=score,
                    state=out.state,
                    alphas=parent.alphas + [out.alpha.data.copy()],
                    finished=tok == END_INDEX,
                    age=age,
                )
                age += 1
                (completed if child.finished else live).append(child)

            if not live:
                break
            completed.sort(key=lambda h: _rank_key(h, length_normalize))
            if len(completed) >= n_best:
                best_live = max(h.score(length_normalize) for h in live)
                if completed[n_best - 1].score(length_normalize) >= best_live:
                    live = []  # dominated; drop so only completed can be returned
                    break

    pool = completed + live  # live survivors are the unfinished-at-cap padding
    pool.sort(key=lambda h: _rank_key(h, length_normalize))
    return pool[:n_best]


def beam_search(
    decoder: Decoder,
    features: FeatureMap,
    beam_width: int = 3,
    max_len: int = 24,
    n_best: int = 3,
    length_normalize: bool = False,
) -> list[ScoredReport]:
    hyps = beam_search_hypotheses(decoder, features, beam_width, max_len, n_best, length_normalize)
    return [ScoredReport(report=h.report, log_prob=h.log_prob) for h in hyps]
