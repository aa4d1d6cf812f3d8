"""Word-aligned attention heatmaps: one overlay image per generated word."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .beam import beam_search_hypotheses
from .decoder import Decoder
from .encoder import FeatureMap
from .images import GrayImage, _axis_weights
from .text import Vocabulary

__all__ = ["AttentionTrace", "capture_trace", "render_heatmaps", "bilinear_upsample"]


@dataclass(frozen=True)
class AttentionTrace:
    words: list[str]
    alphas: list[np.ndarray]
    grid: tuple[int, int]

    def __post_init__(self):
        if len(self.words) != len(self.alphas):
            raise ValueError("one attention vector per emitted word")
        rows, cols = self.grid
        for alpha in self.alphas:
            if alpha.size != rows * cols:
                raise ValueError(f"alpha size {alpha.size} does not fill grid {self.grid}")


def capture_trace(
    decoder: Decoder,
    vocab: Vocabulary,
    features: FeatureMap,
    decode_mode: str = "greedy",
    max_len: int = 24,
) -> AttentionTrace:
    """Decode and record the attention weights at every emission, <end> included."""
    if decode_mode == "greedy":
        report, alphas = decoder.generate_greedy(features, max_len, return_alphas=True)
        emitted = list(report.indices[1 : 1 + len(alphas)])
    elif decode_mode == "beam":
        hyp = beam_search_hypotheses(decoder, features, beam_width=3, max_len=max_len, n_best=1)[0]
        alphas = hyp.alphas
        emitted = list(hyp.indices[1:])
    else:
        raise ValueError(f"unknown decode mode {decode_mode!r}")
    words = [vocab.index_to_token[i] for i in emitted]
    return AttentionTrace(words=words, alphas=[np.asarray(a) for a in alphas], grid=features.grid)


def bilinear_upsample(grid_vals: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear interpolation of a small grid onto (out_h, out_w)."""
    wy = _axis_weights(grid_vals.shape[0], out_h)
    wx = _axis_weights(grid_vals.shape[1], out_w)
    return wy @ grid_vals @ wx.T


def _safe_word(word: str) -> str:
    cleaned = re.sub(r"[^a-z0-9]+", "_", word.lower()).strip("_")
    return cleaned or "tok"


def _heat_rgb(norm: np.ndarray) -> np.ndarray:
    # red-to-yellow ramp; zero attention stays black
    heat = np.zeros(norm.shape + (3,))
    heat[..., 0] = 255.0 * norm
    heat[..., 1] = 180.0 * norm * norm
    return heat


def render_heatmaps(trace: AttentionTrace, base_image: GrayImage, out_dir) -> list[Path]:
    """Write NNN_<word>.png overlays plus an attention.json sidecar with raw weights."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as err:
        raise ValueError(f"output directory {out} is not writable: {err}") from err

    h, w = base_image.height, base_image.width
    base = np.repeat(base_image.pixels.astype(np.float64)[:, :, None], 3, axis=2)
    paths = []
    for i, (word, alpha) in enumerate(zip(trace.words, trace.alphas)):
        grid_vals = np.asarray(alpha, dtype=np.float64).reshape(trace.grid)
        up = bilinear_upsample(grid_vals, h, w)
        peak = up.max()
        norm = up / peak if peak > 0 else np.zeros_like(up)
        blended = 0.5 * base + 0.5 * _heat_rgb(norm)
        pixels = np.floor(blended + 0.5).clip(0, 255).astype(np.uint8)
        path = out / f"{i:03d}_{_safe_word(word)}.png"
        Image.fromarray(pixels, mode="RGB").save(path, format="PNG")
        paths.append(path)

    sidecar = {
        "grid": list(trace.grid),
        "words": trace.words,
        "alphas": [np.asarray(a).tolist() for a in trace.alphas],
    }
    with open(out / "attention.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
    return paths
