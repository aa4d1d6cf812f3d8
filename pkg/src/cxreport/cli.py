"""Command-line entry points: synth-data, train, generate, eval, viz, serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .images import GrayImage, SynthConfig, load_dataset, synth_dataset, write_dataset
from .training import (
    TrainConfig,
    evaluate_checkpoint,
    model_from_checkpoint,
    records_to_samples,
    split_dataset,
    train,
)


def parse_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    """Flat key=value file mirroring TrainConfig fields; '#' starts a comment."""
    values = dataclasses.asdict(base or TrainConfig())
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key == "split":
            values[key] = tuple(float(part) for part in value.split(","))
        elif key == "val_cider":
            values[key] = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(values[key], bool):
            values[key] = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(values[key], int):
            values[key] = int(value)
        else:
            values[key] = float(value)
    values["split"] = tuple(values["split"])
    return TrainConfig(**values)


def cmd_synth_data(args) -> int:
    findings = tuple(f.strip() for f in args.findings.split(",")) if args.findings else None
    cfg = SynthConfig(
        n_samples=args.n,
        image_size=args.image_size,
        noise_level=args.noise,
        **({"finding_set": findings} if findings else {}),
    )
    samples = synth_dataset(cfg, seed=args.seed)
    ratios = tuple(float(p) for p in args.split.split(","))
    splits = split_dataset(list(range(len(samples))), ratios, seed=args.seed)
    write_dataset(samples, splits, args.out)
    print(f"wrote {len(samples)} samples to {args.out} "
          f"(train {len(splits['train'])}, val {len(splits['val'])}, test {len(splits['test'])})")
    return 0


def _load_splits(data_dir):
    records = load_dataset(data_dir)
    samples = records_to_samples(records)
    groups = {"train": [], "val": [], "test": []}
    for record, sample in zip(records, samples):
        groups.setdefault(record.split, []).append(sample)
    return groups


def cmd_train(args) -> int:
    cfg = parse_config_file(args.config) if args.config else TrainConfig()
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    splits = _load_splits(args.data)
    result = train(cfg, splits, args.out, resume_from=args.resume)
    if result.aborted:
        print(f"training aborted: {result.abort_reason}", file=sys.stderr)
        return 1
    print(f"trained {cfg.epochs} epochs; best epoch {result.best_epoch} "
          f"(checkpoints in {result.checkpoint_dir})")
    return 0


def cmd_generate(args) -> int:
    from .checkpoint import load_checkpoint

    model, _, _ = model_from_checkpoint(load_checkpoint(args.checkpoint))
    image = GrayImage.load_png(args.image)
    results = model.generate(image, beam_width=args.beam_width, n_best=args.n_best, max_len=args.max_len)
    for rank, (text, log_prob) in enumerate(results, start=1):
        print(f"{rank}. ({log_prob:.4f}) {text}")
    return 0


def cmd_eval(args) -> int:
    from .cider import corpus_cider, corpus_stats
    from .text import segment

    scale = 10.0 if args.scale_x10 else 1.0
    def read_jsonl(path):
        with open(path, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        return {row["id"]: row["text"] for row in rows}

    if args.candidates:
        cand_by_id = read_jsonl(args.candidates)
        ref_by_id = read_jsonl(args.references)
        if set(cand_by_id) != set(ref_by_id):
            print("candidate/reference ids do not match", file=sys.stderr)
            return 1
        ids = sorted(cand_by_id)
        candidates = [segment(cand_by_id[i]) for i in ids]
        references = [[segment(ref_by_id[i])] for i in ids]
        stats = corpus_stats(references)
        per_image, mean = corpus_cider(candidates, references, stats)
        payload = {
            "per_image": [{"id": i, "cider": s * scale} for i, s in zip(ids, per_image)],
            "mean": mean * scale,
            "scale": scale,
        }
    else:
        splits = _load_splits(args.data)
        result = evaluate_checkpoint(args.checkpoint, splits, args.split, beam_width=args.beam_width)
        payload = {
            "per_image": [
                {"id": s.id, "cider": score * scale, "report": text}
                for s, score, text in zip(splits[args.split], result.per_image, result.best_reports)
            ],
            "mean": result.mean * scale,
            "scale": scale,
            "histogram": result.histogram,
        }
    json.dump(payload, sys.stdout, indent=2)
    print()
    return 0


def cmd_viz(args) -> int:
    from .checkpoint import load_checkpoint
    from .viz import capture_trace, render_heatmaps

    model, _, _ = model_from_checkpoint(load_checkpoint(args.checkpoint))
    image = GrayImage.load_png(args.image)
    feat = model.features(model.preprocess(image))
    trace = capture_trace(model.decoder, model.vocab, feat, decode_mode=args.mode, max_len=model.cfg.max_len)
    paths = render_heatmaps(trace, image, args.out)
    print(f"wrote {len(paths)} heatmaps to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .checkpoint import load_checkpoint
    from .service import ReviewStore, create_app

    records = load_dataset(args.dataset) if args.dataset else []
    model = None
    if args.checkpoint:
        model, _, _ = model_from_checkpoint(load_checkpoint(args.checkpoint))
    store = ReviewStore(args.data_dir, dataset_records=records, model=model)
    app = create_app(store, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cxreport", description="image-to-report toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic desk-scale dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--noise", type=float, default=5.0)
    p.add_argument("--findings", default="")
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train encoder+decoder on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="beam-decode reports for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--n-best", type=int, default=3)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="score candidates with the consensus metric")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--candidates", default=None, help="JSONL {id, text} (skips the model)")
    p.add_argument("--references", default=None, help="JSONL {id, text}")
    p.add_argument("--scale-x10", action="store_true", help="display scores on the x10 convention")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("viz", help="render attention heatmaps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("greedy", "beam"), default="greedy")
    p.set_defaults(fn=cmd_viz)

    p = sub.add_parser("serve", help="run the blind-review service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", required=True, help="state directory for session logs")
    p.add_argument("--dataset", default=None, help="dataset directory (for session creation)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--ui-dir", default=None, help="directory with the built rating UI")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
