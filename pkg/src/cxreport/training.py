"""Dataset splitting, dual-rate optimization, checkpointing, and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .beam import beam_search
from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .cider import cider, corpus_stats
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig, output_shape
from .images import GrayImage, SynthConfig, hist_equalize, resize, synth_dataset
from .text import Vocabulary, segment

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainSample",
    "Model",
    "Adam",
    "adam_step",
    "split_dataset",
    "train",
    "evaluate",
    "evaluate_checkpoint",
    "overfit",
    "model_from_checkpoint",
    "TrainResult",
    "EvalResult",
]


@dataclass(frozen=True)
class TrainConfig:
    lr_encoder: float = 1e-4
    lr_decoder: float = 5e-4
    batch_size: int = 8
    epochs: int = 15
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0  # 0 disables clipping
    min_count: int = 3
    max_len: int = 24
    val_cider: bool = True
    pretrain_epochs: int = 0
    hidden_size: int = 128
    embed_size: int = 64
    n_blocks: int = 3
    layers_per_block: int = 2
    growth_rate: int = 8
    input_size: int = 64
    frozen_blocks: int = 2

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.split}")
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ValueError("learning rates must be positive")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            n_blocks=self.n_blocks,
            layers_per_block=self.layers_per_block,
            growth_rate=self.growth_rate,
            input_size=self.input_size,
            frozen_blocks=self.frozen_blocks,
        )


@dataclass(frozen=True)
class TrainSample:
    id: str
    image: GrayImage
    report: str
    findings: tuple[str, ...] = ()


def records_to_samples(records) -> list[TrainSample]:
    """Materialize on-disk dataset records into training samples."""
    return [
        TrainSample(id=r.id, image=r.load_image(), report=r.report, findings=r.findings)
        for r in records
    ]


def split_dataset(samples, ratios, seed: int) -> dict[str, list]:
    """Seeded shuffle then contiguous partition; floor sizes, remainder to train."""
    if not samples:
        raise ValueError("cannot split an empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(samples)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(n * ratios[1]))
    n_test = int(math.floor(n * ratios[2]))
    n_train = n - n_val - n_test
    idx = {"train": perm[:n_train], "val": perm[n_train : n_train + n_val], "test": perm[n_train + n_val :]}
    return {name: [samples[i] for i in part] for name, part in idx.items()}


def adam_step(value, grad, m, v, t: int, lr: float, beta1: float, beta2: float, eps: float):
    """One bias-corrected moment update; returns (value, m, v) as new arrays."""
    if t < 1:
        raise ValueError("adam step counter starts at 1")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a named parameter dict; rejects non-finite gradients per tensor."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        self.rejected = 0

    def step(self, params: dict[str, Tensor], names) -> None:
        self.t += 1
        for name in names:
            p = params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.rejected += 1
                log.warning("non-finite gradient for %s; step rejected for this tensor", name)
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, g, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.eps
            )


def clip_gradients(params: dict[str, Tensor], names, max_norm: float) -> float:
    """Scale gradients so their global L2 norm stays within max_norm."""
    total = 0.0
    for name in names:
        g = params[name].grad
        if g is not None:
            total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in names:
            g = params[name].grad
            if g is not None:
                g *= scale
    return norm


class Model:
    """Encoder + decoder + vocabulary behind one preprocessing contract."""

    def __init__(self, cfg: TrainConfig, encoder: Encoder, decoder: Decoder, vocab: Vocabulary):
        self.cfg = cfg
        self.encoder = encoder
        self.decoder = decoder
        self.vocab = vocab

    @classmethod
    def create(cls, cfg: TrainConfig, vocab: Vocabulary, seed: int) -> "Model":
        enc_cfg = cfg.encoder_config()
        channels, positions, _ = output_shape(enc_cfg)
        dec_cfg = DecoderConfig(
            vocab_size=len(vocab),
            feat_channels=channels,
            n_positions=positions,
            hidden_size=cfg.hidden_size,
            embed_size=cfg.embed_size,
        )
        return cls(cfg, Encoder.init(enc_cfg, seed), Decoder.init(dec_cfg, seed + 1), vocab)

    def preprocess(self, image: GrayImage) -> np.ndarray:
        size = self.cfg.input_size
        img = resize(image, size, size)
        img = hist_equalize(img)
        return img.pixels.astype(np.float64) / 255.0

    def features(self, pixels: np.ndarray, training: bool = False):
        return self.encoder.forward(pixels, training=training)

    def generate(self, image: GrayImage, beam_width: int = 3, n_best: int = 3, max_len: int | None = None):
        """Beam-decode reports for one raw image; returns [(text, log_prob)]."""
        feat = self.features(self.preprocess(image))
        results = beam_search(
            self.decoder, feat, beam_width=beam_width, max_len=max_len or self.cfg.max_len, n_best=n_best
        )
        return [(self.vocab.decode(r.report.indices), r.log_prob) for r in results]


def build_vocab(samples, min_count: int = 3) -> Vocabulary:
    return Vocabulary.build([segment(s.report) for s in samples], min_count=min_count)


@dataclass
class TrainResult:
    metrics: list[dict]
    best_epoch: int
    checkpoint_dir: Path
    model: Model
    aborted: bool = False
    abort_reason: str = ""

    @property
    def best_checkpoint(self) -> Path:
        return self.checkpoint_dir / f"epoch_{self.best_epoch:04d}.ckpt"


def _checkpoint_state(cfg: TrainConfig, model: Model, opt_enc: Adam, opt_dec: Adam, epoch: int) -> CheckpointState:
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.encoder.params.items():
        arrays[f"encoder.param/{name}"] = p.data
    for name, b in model.encoder.buffers.items():
        arrays[f"encoder.buffer/{name}"] = b
    for name, p in model.decoder.params.items():
        arrays[f"decoder.param/{name}"] = p.data
    for prefix, opt in (("adam_enc", opt_enc), ("adam_dec", opt_dec)):
        for name, arr in opt.m.items():
            arrays[f"{prefix}.m/{name}"] = arr
        for name, arr in opt.v.items():
            arrays[f"{prefix}.v/{name}"] = arr
    config = asdict(cfg)
    config["split"] = list(cfg.split)
    return CheckpointState(
        config=config,
        epoch=epoch,
        vocab_tokens=list(model.vocab.index_to_token),
        arrays=arrays,
        extra={"adam_t": {"encoder": opt_enc.t, "decoder": opt_dec.t}},
    )


def config_from_dict(obj: dict) -> TrainConfig:
    obj = dict(obj)
    obj["split"] = tuple(obj["split"])
    return TrainConfig(**obj)


def model_from_checkpoint(state: CheckpointState) -> tuple[Model, Adam, Adam]:
    cfg = config_from_dict(state.config)
    vocab = Vocabulary(list(state.vocab_tokens))
    model = Model.create(cfg, vocab, seed=cfg.seed)
    opt_enc = Adam(cfg.lr_encoder, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt_dec = Adam(cfg.lr_decoder, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    for key, arr in state.arrays.items():
        group, name = key.split("/", 1)
        if group == "encoder.param":
            model.encoder.params[name].data = arr.copy()
        elif group == "encoder.buffer":
            model.encoder.buffers[name][:] = arr
        elif group == "decoder.param":
            model.decoder.params[name].data = arr.copy()
        elif group == "adam_enc.m":
            opt_enc.m[name] = arr.copy()
        elif group == "adam_enc.v":
            opt_enc.v[name] = arr.copy()
        elif group == "adam_dec.m":
            opt_dec.m[name] = arr.copy()
        elif group == "adam_dec.v":
            opt_dec.v[name] = arr.copy()
        else:
            raise ValueError(f"unknown checkpoint array group {group!r}")
    t = state.extra.get("adam_t", {})
    opt_enc.t = int(t.get("encoder", 0))
    opt_dec.t = int(t.get("decoder", 0))
    return model, opt_enc, opt_dec


def pretrain_encoder(model: Model, samples, epochs: int, lr: float, seed: int) -> None:
    """Train a linear finding-classification head over V_gav, then drop it.

    Stands in for transfer from a larger labeled corpus: same mechanism, the
    encoder weights carry over, the head does not.
    """
    labels = sorted({f for s in samples for f in s.findings})
    if not labels or epochs <= 0:
        return
    rng = np.random.default_rng(seed)
    channels, _, _ = output_shape(model.cfg.encoder_config())
    head_w = Tensor(rng.uniform(-1, 1, size=(len(labels), channels)) / math.sqrt(channels), requires_grad=True)
    head_b = Tensor(np.zeros(len(labels)), requires_grad=True)
    opt = Adam(lr)
    names = list(model.encoder.params) + ["head_w", "head_b"]
    params = dict(model.encoder.params, head_w=head_w, head_b=head_b)
    pixels = [model.preprocess(s.image) for s in samples]
    targets = [np.array([1.0 if l in s.findings else 0.0 for l in labels]) for s in samples]
    for epoch in range(epochs):
        order = np.random.default_rng((seed, epoch)).permutation(len(samples))
        for i in order:
            ad.zero_grad(params)
            feat = model.features(pixels[i], training=True)
            logits = ad.add(ad.matmul(head_w, feat.V_gav), head_b)
            p = ad.sigmoid(logits)
            y = Tensor(targets[i])
            one = Tensor(np.ones_like(targets[i]))
            nll = ad.add(
                ad.mul(y, ad.log(ad.clamp_min(p, 1e-12))),
                ad.mul(ad.sub(one, y), ad.log(ad.clamp_min(ad.sub(one, p), 1e-12))),
            )
            loss = ad.mul(ad.reduce_mean(nll), -1.0)
            loss.backward()
            opt.step(params, names)


def train(cfg: TrainConfig, splits: dict[str, list], out_dir, resume_from=None) -> TrainResult:
    """Optimize on the train split, track validation, checkpoint every epoch."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set = splits["train"], splits.get("val", [])
    if not train_set:
        raise ValueError("training split is empty")

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        model, opt_enc, opt_dec = model_from_checkpoint(state)
        # hyperparameters come from the checkpoint so the continuation is
        # bit-exact; only the target epoch count may be extended
        from dataclasses import replace as _replace

        cfg = _replace(config_from_dict(state.config), epochs=cfg.epochs)
        start_epoch = state.epoch + 1
    else:
        vocab = build_vocab(train_set, cfg.min_count)
        model = Model.create(cfg, vocab, seed=cfg.seed)
        opt_enc = Adam(cfg.lr_encoder, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        opt_dec = Adam(cfg.lr_decoder, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        start_epoch = 1
        if cfg.pretrain_epochs > 0:
            pretrain_encoder(model, train_set, cfg.pretrain_epochs, cfg.lr_encoder, cfg.seed + 7)

    enc_trainable = model.encoder.trainable_partition()["trainable"]
    dec_trainable = list(model.decoder.params)
    all_params = dict(model.encoder.params)
    all_params.update({f"dec:{k}": v for k, v in model.decoder.params.items()})
    clip_names = enc_trainable + [f"dec:{k}" for k in dec_trainable]

    train_pixels = [model.preprocess(s.image) for s in train_set]
    train_truth = [model.vocab.encode(segment(s.report)) for s in train_set]
    val_pixels = [model.preprocess(s.image) for s in val_set]
    val_truth = [model.vocab.encode(segment(s.report)) for s in val_set]
    val_refs = [segment(s.report) for s in val_set]
    val_stats = corpus_stats([[r] for r in val_refs]) if (val_set and cfg.val_cider) else None

    metrics: list[dict] = []
    metrics_path = out_dir / "metrics.csv"
    if resume_from is not None and metrics_path.exists():
        with open(metrics_path, newline="") as fh:
            for row in csv.DictReader(fh):
                if int(row["epoch"]) < start_epoch:
                    metrics.append(
                        {
                            "epoch": int(row["epoch"]),
                            "train_loss": float(row["train_loss"]),
                            "val_loss": float(row["val_loss"]),
                            "val_cider": float(row["val_cider"]),
                        }
                    )
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_cider"])
            for row in metrics:
                writer.writerow(
                    [row["epoch"], f"{row['train_loss']:.17g}", f"{row['val_loss']:.17g}", f"{row['val_cider']:.17g}"]
                )
    else:
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "train_loss", "val_loss", "val_cider"])

    best_epoch, best_val = 0, float("inf")
    for row in metrics:
        reference = row["val_loss"] if val_set else row["train_loss"]
        if math.isfinite(reference) and reference < best_val:
            best_val, best_epoch = reference, row["epoch"]

    def sample_loss(i: int, training: bool):
        feat = model.features(train_pixels[i], training=training)
        loss, _ = model.decoder.teacher_forced_rollout(feat, train_truth[i])
        return loss

    result_model = model
    for epoch in range(start_epoch, cfg.epochs + 1):
        try:
            order = np.random.default_rng((cfg.seed, epoch)).permutation(len(train_set))
            epoch_losses = []
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo : lo + cfg.batch_size]
                ad.zero_grad(all_params)
                for i in batch:
                    loss = sample_loss(int(i), training=True)
                    epoch_losses.append(loss.item())
                    ad.backward(ad.mul(loss, 1.0 / len(batch)))
                clip_gradients(all_params, clip_names, cfg.clip_norm)
                opt_enc.step(model.encoder.params, enc_trainable)
                opt_dec.step(model.decoder.params, dec_trainable)

            train_loss = float(np.mean(epoch_losses))

            val_loss = float("nan")
            val_cider_score = float("nan")
            if val_set:
                with ad.no_grad():
                    losses = []
                    for px, truth in zip(val_pixels, val_truth):
                        feat = model.features(px, training=False)
                        loss, _ = model.decoder.teacher_forced_rollout(feat, truth)
                        losses.append(loss.item())
                    val_loss = float(np.mean(losses))
                if val_stats is not None:
                    best_scores = []
                    for px, ref in zip(val_pixels, val_refs):
                        feat = model.features(px, training=False)
                        hyps = beam_search(model.decoder, feat, beam_width=3, max_len=cfg.max_len, n_best=3)
                        cands = [segment(model.vocab.decode(h.report.indices)) for h in hyps]
                        best_scores.append(max(cider(c, [ref], val_stats) for c in cands))
                    val_cider_score = float(np.mean(best_scores))
        except ad.NonFiniteError as err:
            return TrainResult(
                metrics=metrics,
                best_epoch=best_epoch,
                checkpoint_dir=out_dir,
                model=result_model,
                aborted=True,
                abort_reason=f"diverged at epoch {epoch}: {err}",
            )

        if not math.isfinite(train_loss) or (val_set and not math.isfinite(val_loss)):
            return TrainResult(
                metrics=metrics,
                best_epoch=best_epoch,
                checkpoint_dir=out_dir,
                model=result_model,
                aborted=True,
                abort_reason=f"non-finite loss at epoch {epoch}",
            )

        save_checkpoint(out_dir / f"epoch_{epoch:04d}.ckpt", _checkpoint_state(cfg, model, opt_enc, opt_dec, epoch))
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_cider": val_cider_score}
        metrics.append(row)
        with open(metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow([epoch, f"{train_loss:.17g}", f"{val_loss:.17g}", f"{val_cider_score:.17g}"])
        log.info("epoch %d: train %.4f val %.4f cider %.4f", epoch, train_loss, val_loss, val_cider_score)

        reference = val_loss if val_set else train_loss
        if math.isfinite(reference) and reference < best_val:
            best_val, best_epoch = reference, epoch

    return TrainResult(metrics=metrics, best_epoch=best_epoch, checkpoint_dir=out_dir, model=result_model)


@dataclass
class EvalResult:
    per_image: list[float]
    mean: float
    histogram: list[int]
    rank1_reports: list[str]
    best_reports: list[str]


def evaluate(model: Model, samples, beam_width: int = 3, n_best: int = 3, max_len: int | None = None) -> EvalResult:
    """Best-of-n CIDEr against each image's reference, over the given split."""
    refs = [segment(s.report) for s in samples]
    stats = corpus_stats([[r] for r in refs])
    per_image, rank1, best_texts = [], [], []
    max_len = max_len or model.cfg.max_len
    for sample, ref in zip(samples, refs):
        feat = model.features(model.preprocess(sample.image))
        hyps = beam_search(model.decoder, feat, beam_width=beam_width, max_len=max_len, n_best=n_best)
        texts = [model.vocab.decode(h.report.indices) for h in hyps]
        scores = [cider(segment(t), [ref], stats) for t in texts]
        best = int(np.argmax(scores))
        per_image.append(float(scores[best]))
        rank1.append(texts[0])
        best_texts.append(texts[best])
    hist, _ = np.histogram(per_image, bins=10, range=(0.0, 1.0))
    return EvalResult(
        per_image=per_image,
        mean=float(np.mean(per_image)),
        histogram=hist.tolist(),
        rank1_reports=rank1,
        best_reports=best_texts,
    )


def evaluate_checkpoint(path, splits: dict[str, list], split_name: str = "test", beam_width: int = 3) -> EvalResult:
    """Load a checkpoint and score a split; rejects vocabulary mismatches."""
    state = load_checkpoint(path)
    model, _, _ = model_from_checkpoint(state)
    cfg = config_from_dict(state.config)
    fresh_vocab = build_vocab(splits["train"], cfg.min_count)
    if fresh_vocab.index_to_token != model.vocab.index_to_token:
        raise ValueError("vocabulary mismatch: checkpoint was trained on a different corpus")
    return evaluate(model, splits[split_name], beam_width=beam_width)


def overfit(n_samples: int = 8, steps: int = 500, seed: int = 0) -> list[float]:
    """Drive a small model into the ground on a handful of samples.

    Returns the full-batch loss after each optimizer step; the final entries
    are the evidence that the architecture and optimizer actually learn.
    Rates are raised above the fine-tuning defaults so the budgeted step
    count suffices for memorization from scratch.
    """
    cfg = TrainConfig(
        lr_encoder=3e-4,
        lr_decoder=1.5e-3,
        epochs=1,
        seed=seed,
        batch_size=n_samples,
        clip_norm=5.0,
        hidden_size=128,
        embed_size=64,
        n_blocks=2,
        layers_per_block=1,
        growth_rate=6,
        input_size=32,
        frozen_blocks=0,
    )
    samples = [
        TrainSample(id=f"o{i}", image=s.image, report=s.report, findings=s.findings)
        for i, s in enumerate(synth_dataset(SynthConfig(n_samples=n_samples, image_size=32), seed=seed))
    ]
    vocab = build_vocab(samples, min_count=1)
    model = Model.create(cfg, vocab, seed=seed)
    opt_enc = Adam(cfg.lr_encoder)
    opt_dec = Adam(cfg.lr_decoder)
    enc_names = model.encoder.trainable_partition()["trainable"]
    dec_names = list(model.decoder.params)
    all_params = dict(model.encoder.params)
    all_params.update({f"dec:{k}": v for k, v in model.decoder.params.items()})
    clip_names = enc_names + [f"dec:{k}" for k in dec_names]
    pixels = [model.preprocess(s.image) for s in samples]
    truths = [vocab.encode(segment(s.report)) for s in samples]

    curve = []
    for _ in range(steps):
        ad.zero_grad(all_params)
        losses = []
        for px, truth in zip(pixels, truths):
            feat = model.features(px, training=True)
            loss, _ = model.decoder.teacher_forced_rollout(feat, truth)
            losses.append(loss.item())
            ad.backward(ad.mul(loss, 1.0 / len(samples)))
        clip_gradients(all_params, clip_names, cfg.clip_norm)
        opt_enc.step(model.encoder.params, enc_names)
        opt_dec.step(model.decoder.params, dec_names)
        curve.append(float(np.mean(losses)))
    return curve
