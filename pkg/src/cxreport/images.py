"""Grayscale image handling and the synthetic desk-scale corpus.

All rounding of pixel values uses a single rule — half away from zero — so
golden outputs stay bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "GrayImage",
    "SynthConfig",
    "SynthSample",
    "resize",
    "hist_equalize",
    "synth_dataset",
    "render_report",
    "findings_from_report",
    "write_dataset",
    "load_dataset",
    "FINDING_SENTENCES",
    "NO_FINDING_SENTENCE",
]


def _round_half_away(values: np.ndarray) -> np.ndarray:
    # values are non-negative pixel intensities
    return np.floor(values + 0.5)


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image; pixels stored row-major as (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.uint8)
        if p.ndim != 2 or p.size == 0:
            raise ValueError(f"GrayImage expects a non-empty 2-d array, got shape {p.shape}")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def save_png(self, path) -> None:
        Image.fromarray(self.pixels, mode="L").save(path, format="PNG")

    @classmethod
    def load_png(cls, path) -> "GrayImage":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("L"), dtype=np.uint8))


def _axis_weights(in_len: int, out_len: int) -> np.ndarray:
    """Row-stochastic (out_len, in_len) resampling matrix for one axis."""
    w = np.zeros((out_len, in_len))
    if out_len <= in_len:
        # box average: output cell i covers input interval [i*s, (i+1)*s)
        s = in_len / out_len
        for i in range(out_len):
            lo, hi = i * s, (i + 1) * s
            j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
            for j in range(j0, min(j1, in_len)):
                w[i, j] = (min(hi, j + 1) - max(lo, j)) / s
    else:
        # bilinear with half-pixel centers, edges clamped
        s = in_len / out_len
        for i in range(out_len):
            c = (i + 0.5) * s - 0.5
            c = min(max(c, 0.0), in_len - 1.0)
            j = int(np.floor(c))
            f = c - j
            w[i, j] += 1.0 - f
            if f > 0.0:
                w[i, j + 1] += f
    return w


def resize(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Box-average downsampling / bilinear upsampling, per axis."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"resize target must be positive, got {out_w}x{out_h}")
    data = img.pixels.astype(np.float64)
    if (out_w, out_h) == (img.width, img.height):
        return GrayImage(img.pixels.copy())
    wy = _axis_weights(img.height, out_h)
    wx = _axis_weights(img.width, out_w)
    out = wy @ data @ wx.T
    return GrayImage(_round_half_away(out).clip(0, 255).astype(np.uint8))


def hist_equalize(img: GrayImage) -> GrayImage:
    """Classical CDF remap: out(v) = round(255 * (cdf(v) - cdf_min) / (N - cdf_min))."""
    counts = np.bincount(img.pixels.ravel(), minlength=256)
    cdf = np.cumsum(counts)
    n = img.pixels.size
    cdf_min = int(cdf[np.nonzero(counts)[0][0]])
    if n == cdf_min:
        # constant image: the remap is degenerate, keep it unchanged
        return GrayImage(img.pixels.copy())
    lut = _round_half_away(255.0 * (cdf - cdf_min) / (n - cdf_min)).clip(0, 255).astype(np.uint8)
    return GrayImage(lut[img.pixels])


# --- synthetic corpus ---------------------------------------------------------

NO_FINDING_SENTENCE = "no obvious abnormalities ."

FINDING_SENTENCES = {
    "effusion": "pleural effusion is seen on the right side .",
    "enlarged heart": "the heart shadow is enlarged .",
    "increased markings": "increased lung markings in both lungs .",
}

CANONICAL_FINDINGS = tuple(FINDING_SENTENCES)


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int
    finding_set: tuple[str, ...] = CANONICAL_FINDINGS
    image_size: int = 64
    noise_level: float = 5.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not self.finding_set:
            raise ValueError("finding_set must not be empty")
        for f in self.finding_set:
            if f not in FINDING_SENTENCES:
                raise ValueError(f"unknown finding label {f!r}; known: {sorted(FINDING_SENTENCES)}")


@dataclass(frozen=True)
class SynthSample:
    image: GrayImage
    report: str
    findings: tuple[str, ...]


def render_report(findings) -> str:
    """Deterministic template rendering, findings in canonical order."""
    ordered = [f for f in CANONICAL_FINDINGS if f in findings]
    if len(ordered) != len(findings):
        unknown = set(findings) - set(CANONICAL_FINDINGS)
        raise ValueError(f"unknown finding label(s) {sorted(unknown)}")
    if not ordered:
        return NO_FINDING_SENTENCE
    return " ".join(FINDING_SENTENCES[f] for f in ordered)


def findings_from_report(report: str) -> tuple[str, ...] | None:
    """Invert the templates; None when the text is not a template rendering."""
    text = " ".join(report.split())
    if text == NO_FINDING_SENTENCE:
        return ()
    found = []
    for label in CANONICAL_FINDINGS:
        sentence = FINDING_SENTENCES[label]
        if text.startswith(sentence):
            found.append(label)
            text = text[len(sentence) :].lstrip()
    return tuple(found) if not text and found else None


def _ellipse_mask(size, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - cy * size) / (ry * size)) ** 2 + ((xx - cx * size) / (rx * size)) ** 2 <= 1.0


def _draw_image(rng: np.random.Generator, size: int, findings, noise_level: float) -> GrayImage:
    img = np.full((size, size), 58.0)
    jit = lambda scale=0.02: float(rng.uniform(-scale, scale))

    torso = _ellipse_mask(size, 0.52 + jit(), 0.5 + jit(), 0.46, 0.40)
    img[torso] = 112.0

    lung_masks = []
    for side in (-1.0, 1.0):
        m = _ellipse_mask(size, 0.44 + jit(0.015), 0.5 + side * (0.23 + jit(0.01)), 0.28, 0.13)
        m &= torso
        lung_masks.append(m)
        img[m] = 42.0

    heart_r = 0.10 + jit(0.008)
    if "enlarged heart" in findings:
        heart_r *= 1.9
    heart = _ellipse_mask(size, 0.64 + jit(0.012), 0.57 + jit(0.012), heart_r, heart_r * 1.1)
    img[heart & torso] = 185.0

    if "effusion" in findings:
        # fluid layering at the base of the right lung (image left); each
        # structure keeps its own intensity rank so the ordering survives
        # histogram equalization under any co-occurrence
        yy = np.mgrid[0:size, 0:size][0]
        level = (0.50 + jit(0.02)) * size
        img[lung_masks[0] & (yy >= level)] = 150.0

    if "increased markings" in findings:
        # streaks stay in the upper lung zones, clear of any fluid level
        yy = np.mgrid[0:size, 0:size][0]
        upper = yy < int(0.42 * size)
        for lung in lung_masks:
            zone = lung & upper
            ys, xs = np.nonzero(zone)
            for _ in range(22):
                i = int(rng.integers(0, len(ys)))
                y0, x0 = ys[i], xs[i]
                angle = rng.uniform(0, np.pi)
                length = int(size * 0.22)
                for t in range(length):
                    y = int(y0 + t * np.sin(angle))
                    x = int(x0 + t * np.cos(angle))
                    if 0 <= y < size and 0 <= x < size and lung[y, x]:
                        img[y, x] = 170.0

    img += rng.normal(0.0, noise_level, img.shape)
    return GrayImage(_round_half_away(img.clip(0, 255)).astype(np.uint8))


def synth_dataset(config: SynthConfig, seed: int) -> list[SynthSample]:
    """Synthesize (image, report, findings) triples; fully determined by the seed."""
    rng = np.random.default_rng(seed)
    labels = [f for f in CANONICAL_FINDINGS if f in config.finding_set]
    samples = []
    for _ in range(config.n_samples):
        n_findings = int(rng.choice([0, 1, 2], p=[0.3, 0.45, 0.25]))
        n_findings = min(n_findings, len(labels))
        chosen = rng.choice(len(labels), size=n_findings, replace=False)
        findings = tuple(labels[i] for i in sorted(chosen))
        image = _draw_image(rng, config.image_size, findings, config.noise_level)
        samples.append(SynthSample(image=image, report=render_report(findings), findings=findings))
    return samples


# --- on-disk dataset: PNG files plus reports.jsonl ---------------------------


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    image_file: str
    report: str
    findings: tuple[str, ...]
    split: str
    root: Path = field(repr=False, default=Path("."))

    def load_image(self) -> GrayImage:
        return GrayImage.load_png(self.root / self.image_file)


def write_dataset(samples, splits: dict[str, list[int]], out_dir) -> None:
    """Write PNGs and reports.jsonl; splits maps split name to sample indices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_of = {}
    for name, idxs in splits.items():
        for i in idxs:
            split_of[i] = name
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for i, sample in enumerate(samples):
            sid = f"s{i:05d}"
            fname = f"{sid}.png"
            sample.image.save_png(out / fname)
            record = {
                "id": sid,
                "image_file": fname,
                "report": sample.report,
                "findings": list(sample.findings),
                "split": split_of[i],
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(data_dir) -> list[DatasetRecord]:
    root = Path(data_dir)
    records = []
    with open(root / "reports.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                DatasetRecord(
                    id=obj["id"],
                    image_file=obj["image_file"],
                    report=obj["report"],
                    findings=tuple(obj.get("findings", ())),
                    split=obj.get("split", "train"),
                    root=root,
                )
            )
    return records
