"""Attention-gated LSTM decoder and its teacher-forced training loss.

One step embeds the previous word, stacks it with the global image feature and
the previous hidden state, runs the four-gate recurrence, attends over the
spatial feature columns, and emits a word distribution from the new hidden
state plus the attention-weighted context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import FeatureMap
from .text import END_INDEX, START_INDEX, TokenizedReport

__all__ = [
    "DecoderConfig",
    "DecoderState",
    "StepOutput",
    "Decoder",
    "sequence_loss",
    "loss_clamps",
    "LOG_FLOOR",
]

LOG_FLOOR = 1e-12


class _ClampCounter:
    """Counts loss evaluations that hit the log floor (degenerate predictions)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


loss_clamps = _ClampCounter()


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    feat_channels: int
    n_positions: int
    hidden_size: int = 512
    embed_size: int = 256
    gate_bias: bool = True


@dataclass(frozen=True)
class DecoderState:
    h: Tensor
    c: Tensor

    def __post_init__(self):
        if not (np.all(np.isfinite(self.h.data)) and np.all(np.isfinite(self.c.data))):
            raise ValueError("decoder state must be finite")

    @classmethod
    def zeros(cls, hidden_size: int) -> "DecoderState":
        return cls(h=Tensor(np.zeros(hidden_size)), c=Tensor(np.zeros(hidden_size)))


@dataclass(frozen=True)
class StepOutput:
    state: DecoderState
    alpha: Tensor
    word_dist: Tensor


class Decoder:
    def __init__(self, cfg: DecoderConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: DecoderConfig, seed: int) -> "Decoder":
        rng = np.random.default_rng(seed)
        h, e = cfg.hidden_size, cfg.vocab_size
        emb, c, p = cfg.embed_size, cfg.feat_channels, cfg.n_positions

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        b_gates = np.zeros(4 * h)
        b_gates[h : 2 * h] = 1.0  # forget-gate bias keeps early memory open
        params = {
            "W_gates": uniform((4 * h, emb + c + h), emb + c + h),
            "b_gates": Tensor(b_gates, requires_grad=True),
            "E": uniform((emb, e), e),
            "W_att_h": uniform((p, h), h),
            "W_att_v": uniform((1, c), c),
            "W_out_h": uniform((e, h), h),
            "W_out_c": uniform((e, c), c),
        }
        return cls(cfg, params)

    def step(self, y_prev: int, features: FeatureMap, state: DecoderState) -> StepOutput:
        """One decode step: gates, memory update, attention, word distribution."""
        cfg = self.cfg
        if not (0 <= y_prev < cfg.vocab_size):
            raise ValueError(f"token index {y_prev} out of range for vocabulary of size {cfg.vocab_size}")
        h = cfg.hidden_size
        prm = self.params

        x = ad.concat([ad.column(prm["E"], y_prev), features.V_gav, state.h])
        pre = ad.matmul(prm["W_gates"], x)
        if cfg.gate_bias:
            pre = ad.add(pre, prm["b_gates"])
        gate_i = ad.sigmoid(ad.narrow(pre, 0, h))
        gate_f = ad.sigmoid(ad.narrow(pre, h, 2 * h))
        gate_o = ad.sigmoid(ad.narrow(pre, 2 * h, 3 * h))
        gate_g = ad.tanh(ad.narrow(pre, 3 * h, 4 * h))

        c_t = ad.add(ad.mul(gate_f, state.c), ad.mul(gate_i, gate_g))
        h_t = ad.mul(gate_o, ad.tanh(c_t))

        att_logits = ad.add(
            ad.matmul(prm["W_att_h"], h_t),
            ad.reshape(ad.matmul(prm["W_att_v"], features.V), (cfg.n_positions,)),
        )
        alpha = ad.softmax(att_logits)
        context = ad.matmul(features.V, alpha)

        word_logits = ad.add(ad.matmul(prm["W_out_h"], h_t), ad.matmul(prm["W_out_c"], context))
        return StepOutput(state=DecoderState(h=h_t, c=c_t), alpha=alpha, word_dist=ad.softmax(word_logits))

    def teacher_forced_rollout(self, features: FeatureMap, truth: TokenizedReport):
        """Feed ground-truth prefixes; return (loss, attention trace)."""
        state = DecoderState.zeros(self.cfg.hidden_size)
        word_dists, alphas = [], []
        for y_prev in truth.indices[:-1]:
            out = self.step(y_prev, features, state)
            state = out.state
            word_dists.append(out.word_dist)
            alphas.append(out.alpha.data.copy())
        return sequence_loss(word_dists, truth), alphas

    def generate_greedy(self, features: FeatureMap, max_len: int, return_alphas: bool = False):
        """Argmax decoding until <end> or the cap; ties go to the lowest index.

        <start> is never emitted: it is not a word, only the sequence anchor.
        """
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        with ad.no_grad():
            state = DecoderState.zeros(self.cfg.hidden_size)
            indices = [START_INDEX]
            alphas = []
            prev = START_INDEX
            for _ in range(max_len):
                out = self.step(prev, features, state)
                state = out.state
                masked = out.word_dist.data.copy()
                masked[START_INDEX] = -1.0
                prev = int(np.argmax(masked))
                indices.append(prev)
                alphas.append(out.alpha.data.copy())
                if prev == END_INDEX:
                    break
            if indices[-1] != END_INDEX:
                indices.append(END_INDEX)  # cap reached; close the report
        report = TokenizedReport(tuple(indices))
        return (report, alphas) if return_alphas else report


def sequence_loss(word_dists, truth: TokenizedReport) -> Tensor:
    """Mean negative log-probability of the truth tokens (positions after <start>)."""
    targets = truth.indices[1:]
    if len(word_dists) != len(targets):
        raise ValueError(
            f"got {len(word_dists)} distributions for a report of length {len(targets)}"
        )
    total = None
    for dist, target in zip(word_dists, targets):
        prob = ad.pick(dist, target)
        if prob.data <= LOG_FLOOR:
            loss_clamps.count += 1
        term = ad.log(ad.clamp_min(prob, LOG_FLOOR))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, -1.0 / len(targets))
