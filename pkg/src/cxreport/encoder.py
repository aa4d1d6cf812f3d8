"""Densely-connected convolutional encoder producing spatial features V and V_gav.

Each block layer runs norm -> relu -> 3x3 conv and concatenates its output
onto everything before it; blocks are joined by 1x1-conv + 2x average-pool
transitions.  Normalization uses per-channel running statistics: the forward
pass normalizes with the stored buffers (constants in the graph) and, in
training mode, folds the current sample's statistics into the buffers
afterwards.  Buffers of frozen blocks never update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["EncoderConfig", "FeatureMap", "Encoder", "set_trainable", "output_shape"]

_NORM_EPS = 1e-5
_NORM_MOMENTUM = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int = 4
    layers_per_block: int = 6
    growth_rate: int = 12
    input_size: int = 256
    frozen_blocks: int = 2

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be at least 1")
        if self.frozen_blocks > self.n_blocks:
            raise ValueError(
                f"frozen_blocks ({self.frozen_blocks}) exceeds n_blocks ({self.n_blocks})"
            )

    @classmethod
    def desk(cls) -> "EncoderConfig":
        """Small configuration that trains in minutes on a CPU."""
        return cls(n_blocks=3, layers_per_block=2, growth_rate=8, input_size=64, frozen_blocks=2)


@dataclass(frozen=True)
class FeatureMap:
    """Spatial features V (channels x positions) and their global average."""

    V: Tensor
    V_gav: Tensor
    grid: tuple[int, int]


def output_shape(cfg: EncoderConfig) -> tuple[int, int, tuple[int, int]]:
    """(channels, positions, grid) of the encoder output, from the stride arithmetic."""
    side = (cfg.input_size + 2 - 3) // 2 + 1  # 3x3 stem conv, stride 2, padding 1
    channels = 2 * cfg.growth_rate
    for b in range(1, cfg.n_blocks + 1):
        channels += cfg.layers_per_block * cfg.growth_rate
        if b < cfg.n_blocks:
            channels //= 2
            side //= 2
    return channels, side * side, (side, side)


def _frozen_prefixes(cfg: EncoderConfig) -> tuple[str, ...]:
    if cfg.frozen_blocks == 0:
        return ()
    prefixes = ["stem."]
    for b in range(1, cfg.frozen_blocks + 1):
        prefixes.append(f"block{b}.")
        if b < cfg.n_blocks:
            prefixes.append(f"trans{b}.")
    return tuple(prefixes)


def set_trainable(params: dict[str, Tensor], frozen_blocks: int, n_blocks: int) -> dict[str, list[str]]:
    """Split parameter names into frozen and trainable sets (exhaustive, disjoint)."""
    if frozen_blocks > n_blocks:
        raise ValueError(f"frozen_blocks ({frozen_blocks}) exceeds n_blocks ({n_blocks})")
    cfg = EncoderConfig(n_blocks=n_blocks, frozen_blocks=frozen_blocks)
    prefixes = _frozen_prefixes(cfg)
    frozen = [n for n in params if any(n.startswith(p) for p in prefixes)]
    trainable = [n for n in params if n not in set(frozen)]
    return {"frozen": frozen, "trainable": trainable}


class Encoder:
    def __init__(self, cfg: EncoderConfig, params: dict[str, Tensor], buffers: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.buffers = buffers
        self._frozen = _frozen_prefixes(cfg)

    @classmethod
    def init(cls, cfg: EncoderConfig, seed: int) -> "Encoder":
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        buffers: dict[str, np.ndarray] = {}

        def conv(name, c_out, c_in, k):
            bound = 1.0 / np.sqrt(c_in * k * k)
            params[name] = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)), requires_grad=True)

        def norm(name, c):
            params[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
            params[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
            buffers[f"{name}.mean"] = np.zeros(c)
            buffers[f"{name}.var"] = np.ones(c)

        g = cfg.growth_rate
        channels = 2 * g
        conv("stem.conv", channels, 1, 3)
        for b in range(1, cfg.n_blocks + 1):
            for l in range(cfg.layers_per_block):
                norm(f"block{b}.layer{l}.norm", channels)
                conv(f"block{b}.layer{l}.conv", g, channels, 3)
                channels += g
            if b < cfg.n_blocks:
                norm(f"trans{b}.norm", channels)
                c_out = channels // 2
                conv(f"trans{b}.conv", c_out, channels, 1)
                channels = c_out
        norm("final_norm", channels)
        return cls(cfg, params, buffers)

    def _norm(self, x: Tensor, name: str, training: bool) -> Tensor:
        mean = self.buffers[f"{name}.mean"]
        var = self.buffers[f"{name}.var"]
        inv = 1.0 / np.sqrt(var + _NORM_EPS)
        standardized = ad.channel_affine(x, Tensor(inv), Tensor(-mean * inv))
        out = ad.channel_affine(standardized, self.params[f"{name}.gamma"], self.params[f"{name}.beta"])
        if training and not any(name.startswith(p) for p in self._frozen):
            flat = x.data.reshape(x.shape[0], -1)
            mean += _NORM_MOMENTUM * (flat.mean(axis=1) - mean)
            var += _NORM_MOMENTUM * (flat.var(axis=1) - var)
        return out

    def forward(self, image: np.ndarray, training: bool = False) -> FeatureMap:
        """Encode a preprocessed (input_size, input_size) image scaled to [0, 1]."""
        image = np.asarray(image, dtype=np.float64)
        expected = (self.cfg.input_size, self.cfg.input_size)
        if image.shape != expected:
            raise ValueError(f"encoder expects input of shape {expected}, got {image.shape}")
        x = ad.conv2d(Tensor(image[None]), self.params["stem.conv"], stride=2, padding=1)
        for b in range(1, self.cfg.n_blocks + 1):
            for l in range(self.cfg.layers_per_block):
                h = self._norm(x, f"block{b}.layer{l}.norm", training)
                h = ad.conv2d(ad.relu(h), self.params[f"block{b}.layer{l}.conv"], padding=1)
                x = ad.concat([x, h], axis=0)
            if b < self.cfg.n_blocks:
                h = self._norm(x, f"trans{b}.norm", training)
                h = ad.conv2d(ad.relu(h), self.params[f"trans{b}.conv"])
                x = ad.avg_pool2d(h, 2)
        x = ad.relu(self._norm(x, "final_norm", training))
        c, h, w = x.shape
        v = ad.reshape(x, (c, h * w))
        return FeatureMap(V=v, V_gav=ad.reduce_mean(v, axis=1), grid=(h, w))

    def trainable_partition(self) -> dict[str, list[str]]:
        return set_trainable(self.params, self.cfg.frozen_blocks, self.cfg.n_blocks)
