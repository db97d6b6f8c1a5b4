"""Command-line pipeline: preprocess, pretrain, train, sample, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .datasets import DatasetSplit, load_split, make_batch, \
    make_vector_raster_pair, normalize_offsets, save_split
from .decoders import GmmParams, decode_photo, gmm_nll, pen_ce, photo_l2_loss
from .encoders import encode_photo, encode_sketch, kl_loss, reparameterize
from .evalkit import EvalConfig, retrieval_accuracy, train_triplet_embedder
from .model import ModelConfig, build_model
from .nn import bilstm, conv2d, conv2d_transpose, instance_norm, lstm_cell
from .objective import TrainConfig, config_from_text, full_loss, \
    load_checkpoint, pretrain_then_finetune, save_checkpoint, train_loop
from .optim import AdamState
from .raster import load_image
from .strokes import StrokeError, drop_short_strokes, parse_quickdraw_line, \
    rdp_simplify
from .svg import export_svg
from .synthesis import sample_variations, sample_sketch

__all__ = ["run", "main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sketchsynth",
                     description="stroke-by-stroke photo-to-sketch synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="ndjson sketches -> training dataset")
    p.add_argument("--input", required=True, help="QuickDraw-style ndjson file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--rdp-epsilon", type=float, default=2.0)
    p.add_argument("--min-stroke-length", type=float, default=2.0)
    p.add_argument("--max-len", type=int, default=96,
                   help="cap on n_max (the 98th length percentile is used when lower)")
    p.add_argument("--side", type=int, default=48, help="raster photo side")
    p.add_argument("--limit", type=int, default=0, help="stop after N sketches (0 = all)")

    for name, need_init in (("pretrain", False), ("train", True)):
        p = sub.add_parser(name, help=f"{name} on a preprocessed dataset")
        p.add_argument("--data", required=True)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out", required=True, help="output checkpoint path")
        p.add_argument("--log", default=None, help="metrics JSON-lines path")
        if need_init:
            p.add_argument("--init", required=True, help="initial checkpoint")
            p.add_argument("--resume", action="store_true",
                           help="restore optimizer and rng state too")

    p = sub.add_parser("sample", help="synthesize sketches for a photo")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--photo", required=True, help="PGM or PNG input photo")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--temperature", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg", required=True, help="output SVG path")
    p.add_argument("--color", action="store_true", help="temporal stroke coloring")

    p = sub.add_parser("eval", help="losses and retrieval proxy on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--temperature", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference checks per op")
    p.add_argument("--op", default=None, help="single op name to check")
    return parser


def _cmd_preprocess(args) -> int:
    sequences = []
    with open(args.input, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            seq = parse_quickdraw_line(line, line_number=line_no)
            seq = drop_short_strokes(seq, args.min_stroke_length)
            seq = rdp_simplify(seq, args.rdp_epsilon)
            if seq.n_s > 0:
                sequences.append(seq)
            if args.limit and len(sequences) >= args.limit:
                break
    if not sequences:
        raise StrokeError("no usable sketches in input")
    lengths = np.asarray([s.n_max for s in sequences])
    n_max = int(min(np.percentile(lengths, 98), args.max_len))
    kept = [s for s in sequences if s.n_max <= n_max]
    if not kept:
        raise StrokeError(f"all sketches exceed n_max={n_max}")
    pairs = [make_vector_raster_pair(s, args.side, pair_id=f"sketch-{i:06d}")
             for i, s in enumerate(kept)]
    split = normalize_offsets(DatasetSplit(pairs))
    # photos were rasterized before offset scaling, so they match the strokes
    save_split(args.out, split, n_max=n_max)
    print(f"wrote {len(kept)} pairs to {args.out} (n_max={n_max}, "
          f"offset_std={split.offset_std:.4f})")
    return 0


def _load_train_config(args, manifest) -> TrainConfig:
    if args.config:
        cfg = config_from_text(Path(args.config).read_text())
    else:
        cfg = TrainConfig()
    n_max = int(manifest.get("n_max", cfg.n_max))
    if n_max != cfg.n_max:
        cfg = TrainConfig(**{**cfg.__dict__, "n_max": n_max})
    return cfg


def _cmd_pretrain(args) -> int:
    split, manifest = load_split(args.data)
    cfg = _load_train_config(args, manifest)
    side = split.pairs[0].photo.height
    cfg = TrainConfig(**{**cfg.__dict__, "image_side": side})
    _single_stage(split, cfg, args)
    return 0


def _single_stage(split, cfg, args, init=None):
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        model = build_model(cfg.model_config(), rng)
        opt = AdamState.for_params(model.params, lr=cfg.lr, beta1=cfg.beta1,
                                   beta2=cfg.beta2, eps=cfg.adam_eps)
    else:
        model, opt, saved_rng = init
        if opt is None:
            opt = AdamState.for_params(model.params, lr=cfg.lr, beta1=cfg.beta1,
                                       beta2=cfg.beta2, eps=cfg.adam_eps)
        if saved_rng is not None:
            rng = saved_rng
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        train_loop(split.pairs, model, opt, cfg, rng, cfg.iterations,
                   stage="train", out_dir=Path(args.out).parent, log_fh=log_fh)
    finally:
        if log_fh:
            log_fh.close()
    save_checkpoint(args.out, model, opt, rng)
    print(f"saved checkpoint to {args.out} after {cfg.iterations} steps")
    return model, opt


def _cmd_train(args) -> int:
    split, manifest = load_split(args.data)
    cfg = _load_train_config(args, manifest)
    side = split.pairs[0].photo.height
    cfg = TrainConfig(**{**cfg.__dict__, "image_side": side})
    model, opt, rng = load_checkpoint(args.init)
    if not args.resume:
        opt, rng = None, None
    _single_stage(split, cfg, args, init=(model, opt, rng))
    return 0


def _cmd_sample(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    photo = load_image(args.photo)
    rng = np.random.default_rng(args.seed)
    out = Path(args.svg)
    if args.n == 1:
        sketches = [sample_sketch(photo, model, args.temperature, rng,
                                  resample_latent=False)]
    else:
        sketches = sample_variations(photo, model, args.n, args.temperature, rng)
    for i, sketch in enumerate(sketches):
        path = out if args.n == 1 else out.with_name(f"{out.stem}-{i}{out.suffix}")
        path.write_text(export_svg(sketch, temporal_coloring=args.color))
        print(f"wrote {path} ({sketch.n_s} points)")
    return 0


def _cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    split, manifest = load_split(args.data)
    rng = np.random.default_rng(args.seed)
    loss, breakdown = full_loss(split.pairs, model,
                                TrainConfig().weights(), rng=None)

    synthesized = [sample_sketch(p.photo, model, args.temperature, rng)
                   for p in split.pairs]
    side = split.pairs[0].photo.height
    eval_cfg = EvalConfig(seed=args.seed, image_side=side)
    embedder = train_triplet_embedder(split.pairs, eval_cfg)
    ranking = retrieval_accuracy(
        synthesized, [p.photo for p in split.pairs],
        [p.id for p in split.pairs], embedder,
        ks=(1, min(10, len(split.pairs))),
        gallery_ids=[p.id for p in split.pairs])
    report = {
        "losses": breakdown,
        "retrieval_acc_at": {str(k): v for k, v in ranking.acc_at.items()},
        "pairs": len(split.pairs),
        "temperature": args.temperature,
        "seed": args.seed,
    }
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report["retrieval_acc_at"]))
    return 0


def _gradcheck_cases(rng) -> dict:
    """Scalar-valued probes for every differentiable op.

    Non-scalar ops are contracted against a fixed random projection so every
    output coordinate influences the checked scalar.
    """
    def case(fn, shape):
        x0 = rng.standard_normal(shape)
        return lambda: grad_check(fn, Tensor(x0.copy(), requires_grad=True))

    w = Tensor(rng.standard_normal((4, 3)))
    k = Tensor(rng.standard_normal((2, 3, 3, 3)) * 0.5)
    kt = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, 3)), Tensor(rng.standard_normal(3))
    lw = Tensor(rng.standard_normal((5 + 4, 16)) * 0.4)
    lb = Tensor(rng.standard_normal(16) * 0.1)
    h0, c0 = Tensor(rng.standard_normal((2, 4))), Tensor(rng.standard_normal((2, 4)))
    proj34 = Tensor(rng.standard_normal((3, 4)))
    proj_in = Tensor(rng.standard_normal((2, 3, 4, 4)))
    proj_h = Tensor(rng.standard_normal((2, 8)))

    return {
        "add": case(lambda t: ad.sum_(ad.mul(ad.add(t, 1.5), ad.add(t, t))), (3, 4)),
        "mul": case(lambda t: ad.sum_(ad.mul(t, ad.add(t, 2.0))), (3, 4)),
        "div": case(lambda t: ad.sum_(ad.div(t, ad.add(ad.mul(t, t), 1.0))), (3, 4)),
        "matmul": case(lambda t: ad.sum_(ad.matmul(t, w)), (5, 4)),
        "tanh": case(lambda t: ad.sum_(ad.tanh(t)), (3, 4)),
        "sigmoid": case(lambda t: ad.sum_(ad.sigmoid(t)), (3, 4)),
        "relu": case(lambda t: ad.sum_(ad.relu(ad.add(t, 0.1))), (3, 4)),
        "exp": case(lambda t: ad.sum_(ad.exp(t)), (3, 4)),
        "log": case(lambda t: ad.sum_(ad.log(ad.add(ad.mul(t, t), 1.0))), (3, 4)),
        "sqrt": case(lambda t: ad.sum_(ad.sqrt(ad.add(ad.mul(t, t), 1.0))), (3, 4)),
        "softmax": case(lambda t: ad.sum_(ad.mul(ad.softmax(t), proj34)), (3, 4)),
        "logsumexp": case(lambda t: ad.sum_(ad.logsumexp(t, axis=-1)), (3, 4)),
        "conv2d": case(lambda t: ad.sum_(conv2d(t, k, stride=2, pad=1)), (2, 3, 6, 6)),
        "conv2d_transpose": case(
            lambda t: ad.sum_(conv2d_transpose(t, kt, stride=2, pad=1)), (2, 3, 4, 4)),
        "instance_norm": case(
            lambda t: ad.sum_(ad.mul(instance_norm(t, gamma, beta), proj_in)),
            (2, 3, 4, 4)),
        "lstm_cell": case(
            lambda t: ad.sum_(ad.mul(ad.concat(list(lstm_cell(t, h0, c0, lw, lb)), axis=1),
                                     proj_h)),
            (2, 5)),
        "bilstm": case(
            lambda t: ad.sum_(ad.mul(bilstm(t, lw, lb, lw, lb), proj_h)),
            (3, 2, 5)),
    }


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(0)
    cases = _gradcheck_cases(rng)
    if args.op is not None:
        if args.op not in cases:
            raise UsageError(f"unknown op {args.op!r}; choose from "
                             f"{', '.join(sorted(cases))}")
        cases = {args.op: cases[args.op]}
    worst = 0.0
    for name in sorted(cases):
        err = cases[name]()
        worst = max(worst, err)
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name:>18s}  max_rel_err={err:.3e}  {status}")
    if worst >= 1e-4:
        raise RuntimeError(f"gradient check failed (worst {worst:.3e})")
    return 0


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "preprocess": _cmd_preprocess,
        "pretrain": _cmd_pretrain,
        "train": _cmd_train,
        "sample": _cmd_sample,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
