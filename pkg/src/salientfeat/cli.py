"""Command-line interface.

Subcommands: train, extract, match, eval-mma, inspect-cov, bench.
Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .covariance import (build_masks, covariance_difference, masked_means,
                         save_matrix_pgm, save_matrix_text, standardize,
                         standardized_covariance)
from .extraction import (ExtractConfig, extract_multiscale, load_descriptors,
                         save_descriptors)
from .imageio import load_sequence, read_image, to_rgb
from .matching import (average_reports, bench_match, match, mma,
                       plot_report_pgm, write_report)
from .network import forward, load_checkpoint
from .tensor import no_grad
from .training import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="salientfeat",
                     description="Local-feature training, extraction, matching "
                                 "and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of images")
    p.add_argument("--config", help="key=value config file (desk preset if omitted)")
    p.add_argument("--data", required=True, help="directory of .ppm/.pgm images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, help="override the step budget")
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--no-style", action="store_true",
                   help="drop the style branch of the covariance loss")
    p.add_argument("--no-structure", action="store_true",
                   help="drop the structure branch of the covariance loss")
    p.add_argument("--no-dsc", action="store_true",
                   help="use plain convolutions in the tail layers")

    p = sub.add_parser("extract", help="extract keypoints and descriptors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output descriptor file")
    _extraction_flags(p)

    p = sub.add_parser("match", help="match two descriptor files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--policy", choices=("nn", "mutual_nn"), default="mutual_nn")
    p.add_argument("--out", help="write matches here instead of stdout")

    p = sub.add_parser("eval-mma", help="mean matching accuracy on a sequence")
    p.add_argument("--seq", required=True, help="sequence directory "
                   "(1.ppm, 2.ppm, ..., H_1_2, H_1_3, ...)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="report file")
    p.add_argument("--plot", help="optional accuracy-curve image (pgm)")
    _extraction_flags(p)

    p = sub.add_parser("inspect-cov", help="dump covariance statistics of a pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pair", nargs=2, required=True, metavar=("IMG1", "IMG2"))
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bench", help="time descriptor matching")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--policy", choices=("nn", "mutual_nn"), default="mutual_nn")
    p.add_argument("--parallel", action="store_true",
                   help="allow the ambient BLAS thread pool")
    return parser


def _extraction_flags(p) -> None:
    p.add_argument("--scales", type=float, nargs="+", default=[1.0],
                   help="descending pyramid scales")
    p.add_argument("--topk", type=int, default=5000)
    p.add_argument("--rel-thresh", type=float, default=0.7)
    p.add_argument("--rep-thresh", type=float, default=0.7)
    p.add_argument("--nms-radius", type=int, default=3)


def _extract_config(args) -> ExtractConfig:
    return ExtractConfig(rel_thresh=args.rel_thresh, rep_thresh=args.rep_thresh,
                         topk=args.topk, nms_radius=args.nms_radius)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig.desk()
    overrides: dict[str, str] = {}
    if args.steps is not None:
        overrides["steps"] = str(args.steps)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    for flag in ("no_style", "no_structure", "no_dsc"):
        if getattr(args, flag):
            overrides[flag] = "1"
    if overrides:
        config = TrainConfig.from_overrides(overrides, base=config)

    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    paths = sorted(list(data_dir.glob("*.ppm")) + list(data_dir.glob("*.pgm")))
    if not paths:
        raise ValueError(f"no .ppm/.pgm images in {data_dir}")
    corpus = [to_rgb(read_image(p)) for p in paths]

    net, log = train(config, corpus, args.out)
    final = log.entries[-1]
    print(f"trained {final.step} steps on {len(corpus)} images; "
          f"final total loss {final.total:.4f}")
    print(f"checkpoint: {Path(args.out) / 'checkpoint.sftc'}")
    return 0


def cmd_extract(args) -> int:
    net, _, _ = load_checkpoint(args.ckpt)
    image = to_rgb(read_image(args.image))
    kset = extract_multiscale(net, image, args.scales, _extract_config(args))
    save_descriptors(args.out, kset)
    print(f"{len(kset)} keypoints -> {args.out}")
    return 0


def cmd_match(args) -> int:
    a = load_descriptors(args.a)
    b = load_descriptors(args.b)
    result = match(a, b, args.policy)
    lines = [f"{ia}\t{ib}\t{d:.6f}" for ia, ib, d in
             zip(result.indices_a, result.indices_b, result.distances)]
    body = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)
    print(f"{len(result)} matches ({args.policy})", file=sys.stderr)
    return 0


def cmd_eval_mma(args) -> int:
    images, homographies = load_sequence(args.seq)
    if not homographies:
        raise ValueError(f"sequence {args.seq} has no image/homography pairs")
    net, _, _ = load_checkpoint(args.ckpt)
    cfg = _extract_config(args)
    ref = extract_multiscale(net, to_rgb(images[0]), args.scales, cfg)
    reports = []
    for image, h in zip(images[1:], homographies):
        kset = extract_multiscale(net, to_rgb(image), args.scales, cfg)
        reports.append(mma(match(ref, kset), ref, kset, h))
    avg = average_reports(reports)
    avg.notes.update(rel_thresh=cfg.rel_thresh, rep_thresh=cfg.rep_thresh,
                     topk=cfg.topk, nms_radius=cfg.nms_radius,
                     scales=",".join(str(s) for s in args.scales))
    write_report(args.out, avg)
    if args.plot:
        plot_report_pgm(args.plot, avg)
    print(f"MMA@3 {avg.fraction_at(3):.4f} over {len(reports)} pairs -> {args.out}")
    return 0


def cmd_inspect_cov(args) -> int:
    net, _, _ = load_checkpoint(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        maps = [forward(net, to_rgb(read_image(p))) for p in args.pair]
        sigmas = [standardized_covariance(standardize(m.descriptors))
                  for m in maps]
        diff = covariance_difference(sigmas[0], sigmas[1])
    masks = build_masks(diff)
    sty_mean, str_mean = masked_means(diff, masks)
    for name, cov, (lo, hi) in (("sigma_s1", sigmas[0], (-1, 1)),
                                ("sigma_s2", sigmas[1], (-1, 1)),
                                ("sigma_c", diff, (0, 2))):
        save_matrix_text(out / f"{name}.txt", cov.values.data)
        save_matrix_pgm(out / f"{name}.pgm", cov.values.data, lo, hi)
    save_matrix_text(out / "style_mask.txt", masks.style_mask)
    save_matrix_text(out / "structure_mask.txt", masks.structure_mask)
    save_matrix_pgm(out / "style_mask.pgm", masks.style_mask, 0, 1)
    save_matrix_pgm(out / "structure_mask.pgm", masks.structure_mask, 0, 1)
    (out / "summary.txt").write_text(
        f"threshold\t{masks.threshold!r}\n"
        f"style_count\t{masks.style_count}\n"
        f"structure_count\t{masks.structure_count}\n"
        f"style_mean\t{sty_mean!r}\n"
        f"structure_mean\t{str_mean!r}\n")
    print(f"style mean {sty_mean:.4f}, structure mean {str_mean:.4f} -> {out}")
    return 0


def cmd_bench(args) -> int:
    a = load_descriptors(args.a)
    b = load_descriptors(args.b)
    result = bench_match(a, b, args.repeats, args.policy,
                         single_thread=not args.parallel)
    sys.stdout.write(result.to_text())
    return 0


_COMMANDS = {
    "train": cmd_train,
    "extract": cmd_extract,
    "match": cmd_match,
    "eval-mma": cmd_eval_mma,
    "inspect-cov": cmd_inspect_cov,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
