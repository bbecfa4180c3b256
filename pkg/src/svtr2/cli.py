"""Command-line entry point: ``svtr2 {train,eval,bench,synth,gradcheck,decode}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import Svtr2Error

MODEL_CHOICES = ("tiny", "small", "base", "nano")


def _charset_for(manifest: Path):
    from .msr import Charset

    path = manifest.parent / "charset.txt"
    if not path.is_file():
        raise FileNotFoundError(f"expected {path} next to the manifest")
    return Charset.load(path)


def cmd_train(args) -> int:
    from .msr import load_manifest
    from .train import TrainConfig, train

    variant = {"tiny": "T", "small": "S", "base": "B", "nano": "Nano"}.get(args.model) if args.model else None
    config = (TrainConfig.from_file(args.config, batch_size=args.batch_size, seed=args.seed, resize=args.resize,
                                    variant=variant)
              if args.config else
              TrainConfig(**{k: v for k, v in dict(batch_size=args.batch_size, seed=args.seed,
                                                     resize=args.resize, variant=variant).items() if v is not None}))
    manifest = Path(args.data)
    charset = _charset_for(manifest)
    samples = load_manifest(manifest, charset)

    def on_step(entry):
        if entry["step"] % args.log_every == 0:
            print(json.dumps(entry), flush=True)

    result = train(config, samples, charset, args.out, on_step=on_step)
    for entry in result.history:
        if "val_accuracy" in entry:
            print(json.dumps(entry))
    print(f"trained {result.steps} steps in {result.seconds:.1f}s; checkpoints in {args.out}")
    return 0


def _load_model(ckpt_path, charset=None):
    from .checkpoint import load_checkpoint, model_from_checkpoint

    ckpt = load_checkpoint(ckpt_path)
    return model_from_checkpoint(ckpt, charset.hash if charset is not None else None), ckpt


def cmd_eval(args) -> int:
    from .msr import load_manifest
    from .train import evaluate

    manifest = Path(args.data)
    charset = _charset_for(manifest)
    model, _ = _load_model(args.ckpt, charset)
    samples = load_manifest(manifest, charset)
    report = evaluate(model, samples, charset, args.resize, args.report)
    print(f"word accuracy {report.overall:.4f} over {report.count} samples")
    for name, table in (("bucket", report.per_bucket), ("profile", report.per_profile)):
        for key, acc in table.items():
            print(f"  {name} {key}: {acc:.4f}")
    if args.dump_rearrangement or args.dump_sgm_attn:
        _dump_attention(model, samples, args)
    return 0


def _dump_attention(model, samples, args) -> None:
    """Write per-sample CSV matrices for the first ``--dump-count`` samples."""
    from .frm import effective_rearrangement
    from .msr import msr_resize
    from .tensor import no_grad

    for sample in samples[:args.dump_count]:
        stem = Path(sample.source_id).stem
        image = msr_resize(sample, args.resize)[0][None].astype(model.dtype)
        with no_grad():
            fmap = model.features(image)
            _, weights = model.ctc_logits_from_features(fmap, return_weights=True)
            if args.dump_rearrangement:
                mh, mv = weights["horizontal"], weights["vertical"]
                if mh is None or mv is None:
                    raise Svtr2Error(f"rearrangement mode {model.config.frm_mode!r} has no M^h/M^v to dump")
                out = Path(args.dump_rearrangement)
                out.mkdir(parents=True, exist_ok=True)
                mh = mh.data[0]
                mh = mh.mean(axis=1) if mh.ndim == 4 else mh
                h, w, _ = mh.shape
                np.savetxt(out / f"{stem}.mh.csv", mh.reshape(h * w, w), delimiter=",", fmt="%.6g")
                np.savetxt(out / f"{stem}.mv.csv", mv.data[0], delimiter=",", fmt="%.6g")
                np.savetxt(out / f"{stem}.m.csv", effective_rearrangement(mh, mv.data[0]), delimiter=",",
                           fmt="%.6g")
                print(f"rearrangement weights for {sample.source_id} -> {out}")
            if args.dump_sgm_attn:
                if model.sgm is None:
                    raise Svtr2Error("--dump-sgm-attn needs a phase B checkpoint (inference checkpoints have no SGM)")
                out = Path(args.dump_sgm_attn)
                out.mkdir(parents=True, exist_ok=True)
                _, maps = model.sgm_loss(fmap, [sample.label], return_attention=True)
                for side, attn in maps.items():
                    np.savetxt(out / f"{stem}.{side}.csv", attn[0], delimiter=",", fmt="%.6g")
                print(f"SGM attention for {sample.source_id} -> {out}")


def cmd_bench(args) -> int:
    from .msr import load_manifest
    from .train import bench_inference

    manifest = Path(args.data)
    charset = _charset_for(manifest)
    model, _ = _load_model(args.ckpt, charset)
    report = bench_inference(model, load_manifest(manifest, charset), args.resize)
    for n, t in report.per_length.items():
        print(f"  length {n}: {t * 1e3:.3f} ms over {report.counts[n]} samples")
    print(f"mean {report.mean_seconds * 1e3:.3f} ms per image, {report.fps:.1f} FPS")
    return 0


def cmd_synth(args) -> int:
    from .synth import GlyphFont, ProfileOptions, make_dataset

    font = GlyphFont(args.alphabet)
    lengths = tuple(int(v) for v in args.lengths.split("-")) if args.lengths else None
    options = ProfileOptions(text_source=args.text, lengths=lengths, noise_max=args.noise)
    manifest = make_dataset(args.profile, args.n, args.seed, args.out, font, options)
    print(f"wrote {args.n} samples to {manifest}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    failures = 0
    for result, tol in run_suite(seed=args.seed):
        ok = result.passed(tol)
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {result.name}: max rel err {result.max_rel_err:.2e} (tol {tol:.0e})")
    return 1 if failures else 0


def cmd_decode(args) -> int:
    from .msr import RawSample, read_image, msr_resize
    from .train import predict

    model, ckpt = _load_model(args.ckpt)
    image = read_image(args.image)
    resized, _ = msr_resize(RawSample(image, (), str(args.image)), args.resize)
    decoded = predict(model, resized[None].astype(model.dtype))[0]
    print(f"{decoded.text(ckpt.charset)}\t{decoded.confidence:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svtr2", description="CTC text recognizer with feature rearrangement")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, resize=True):
        if resize:
            p.add_argument("--resize", choices=("msr", "fixed32x128", "fixed64x256"), default=None)
        return p

    p = common(sub.add_parser("train", help="two-phase training"))
    p.add_argument("--config", help="flat key = value file with TrainConfig fields")
    p.add_argument("--data", required=True, help="manifest.tsv (charset.txt must sit next to it)")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=MODEL_CHOICES)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="word accuracy and CSV report"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="CSV output path")
    p.add_argument("--dump-rearrangement", metavar="DIR", help="write M^h, M^v and M as CSV per sample")
    p.add_argument("--dump-sgm-attn", metavar="DIR", help="write left/right SGM attention as CSV per sample")
    p.add_argument("--dump-count", type=int, default=1, help="samples to dump (from the top of the manifest)")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("bench", help="batch-size-1 inference speed, averaged per text length"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--profile", required=True,
                   choices=("regular", "rotated", "curved", "occluded", "long", "vertical", "mixed"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet", default="acdehilnorst")
    p.add_argument("--text", choices=("random", "lexicon"), default="random")
    p.add_argument("--lengths", help="override the length range, e.g. 1-25")
    p.add_argument("--noise", type=float, default=0.05, help="maximum Gaussian noise sigma")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("decode", help="recognize one PGM/PPM image"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "resize", "unset") is None:
        args.resize = None if args.command == "train" else "msr"
    try:
        return args.func(args)
    except (Svtr2Error, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
