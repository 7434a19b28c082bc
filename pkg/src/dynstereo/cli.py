"""Command-line entry point: gen, infer, eval, selftest.

Exit codes: 0 success, 2 invalid input or arguments, 3 computation failure.
Set DYNSTEREO_NUM_THREADS to cap BLAS threads.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path


from . import imageio, synth
from .data import DisparitySequence
from .metrics import DEFAULT_THRESHOLDS, evaluate
from .pipeline import InferenceConfig, infer_video, with_iterations
from .tensor_kernels import ShapeError
from .weights import ModelConfig, WeightsError, init_weights, load_weights, save_weights

log = logging.getLogger("dynstereo")

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 2, 3
THREADS_ENV = "DYNSTEREO_NUM_THREADS"


class UsageError(Exception):
    pass


def _model_config(args) -> ModelConfig:
    kwargs = dict(iters=args.iters, radius=args.radius)
    return ModelConfig.compact(**kwargs) if args.compact else ModelConfig(**kwargs)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", type=Path, help="DSW1 weights file (default: seeded initialization)")
    p.add_argument("--seed", type=int, default=0, help="seed for initialization when no weights file is given (default: 0)")
    p.add_argument("--iters", type=int, default=20, help="refinement iterations M, multiple of 4 (default: 20)")
    p.add_argument("--radius", type=int, default=4, help="lookup radius (default: 4)")
    p.add_argument("--compact", action="store_true", help="reduced channel widths for seeded weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynstereo", description="Temporally consistent stereo disparity for videos.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic stereo scenes")
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0, help="base seed (default: 0)")
    g.add_argument("--scenes", type=int, default=1, help="number of scenes (default: 1)")
    g.add_argument("--spec-file", type=Path, help="scene manifest to render instead of random scenes")
    g.add_argument("--height", type=int, default=64, help="frame height (default: 64)")
    g.add_argument("--width", type=int, default=96, help="frame width (default: 96)")
    g.add_argument("--frames", type=int, default=5, help="frames per scene (default: 5)")
    g.add_argument("--layers", type=int, default=2, help="foreground layers per scene (default: 2)")
    g.add_argument("--max-disparity", type=float, default=24.0, help="largest layer disparity in px (default: 24)")
    g.add_argument("--subpixel", action="store_true", help="allow non-integer disparities")
    g.add_argument("--static", action="store_true", help="no layer motion")

    i = sub.add_parser("infer", help="estimate disparity for a video directory")
    i.add_argument("input", type=Path, help="directory with left/ and right/ PPM frames")
    i.add_argument("--out", type=Path, required=True, help="output directory")
    i.add_argument("--window", type=int, default=20, help="frames per window T (default: 20)")
    i.add_argument("--overlap", type=int, default=10, help="frames shared by consecutive windows (default: 10)")
    i.add_argument("--pad", choices=["last", "first"], default="last", help="frame repeated for short videos (default: last)")
    _add_model_flags(i)

    e = sub.add_parser("eval", help="compare predicted and ground-truth disparity")
    e.add_argument("pred", type=Path, help="prediction directory (disparity/)")
    e.add_argument("gt", type=Path, help="ground-truth directory (disparity/, optional valid/)")
    e.add_argument("--thresholds", type=float, nargs="+", default=list(DEFAULT_THRESHOLDS),
                   help="pixel thresholds for bad-px and delta_t (default: 1 3)")
    e.add_argument("--out", type=Path, help="report path; a .tsv table is written next to it")

    s = sub.add_parser("selftest", help="run the built-in oracle and invariant checks")
    s.add_argument("--corrupt-lookup-order", action="store_true", help=argparse.SUPPRESS)
    s.add_argument("--only", nargs="+", help="run only the named checks")

    w = sub.add_parser("init-weights", help="write seeded weights to a DSW1 file")
    w.add_argument("--out", type=Path, required=True, help="output path")
    _add_model_flags(w)
    return parser


def cmd_gen(args) -> int:
    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    if args.spec_file is not None:
        specs = [synth.read_spec(args.spec_file)]
    else:
        if args.max_disparity >= args.width:
            raise UsageError(f"--max-disparity {args.max_disparity} must be below --width {args.width}")
        specs = [
            synth.random_spec(args.seed + n, args.height, args.width, args.frames, args.layers,
                              args.max_disparity, integer_disparity=not args.subpixel, static=args.static)
            for n in range(args.scenes)
        ]
    for n, spec in enumerate(specs):
        scene = synth.generate(spec)
        target = args.out / f"scene_{n:03d}"
        synth.write_scene(scene, target)
        log.info("wrote %s (%d frames)", target, spec.frames)
    return EXIT_OK


def _load_model(args):
    cfg = _model_config(args)
    if args.weights is not None:
        weights = load_weights(args.weights)
        weights.validate(weights.config)
        if args.iters != weights.config.iters:
            weights = with_iterations(weights, args.iters)
        if args.radius != weights.config.radius:
            raise UsageError(f"--radius {args.radius} does not match the weights (radius {weights.config.radius})")
        return weights
    return init_weights(cfg, args.seed)


def cmd_infer(args) -> int:
    if args.window <= args.overlap or args.overlap % 2:
        raise UsageError("--overlap must be even and smaller than --window")
    weights = _load_model(args)
    video = imageio.read_video(args.input)
    timings = []
    tic = time.perf_counter()
    result = infer_video(video, weights, InferenceConfig(args.window, args.overlap, args.pad), timings=timings)
    total = time.perf_counter() - tic
    imageio.write_disparity(result, args.out)
    lines = ["start\tkeep_begin\tkeep_end\tseconds\tsec_per_frame"]
    for win, secs in timings:
        kept = win.keep_end - win.keep_begin
        lines.append(f"{win.start}\t{win.keep_begin}\t{win.keep_end}\t{secs:.4f}\t{secs / max(kept, 1):.4f}")
    lines.append(f"# total {total:.4f} s, {total / video.length:.4f} sec/frame over {video.length} frames")
    imageio.atomic_write(args.out / "timing.txt", ("\n".join(lines) + "\n").encode())
    log.info("%d frames, %.4f sec/frame", video.length, total / video.length)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = imageio.read_disparity(args.pred)
    gt = imageio.read_disparity(args.gt)
    if pred.length != gt.length:
        raise UsageError(f"prediction has {pred.length} frames, ground truth {gt.length}")
    for t in range(gt.length):
        if pred.values[t].shape != gt.values[t].shape:
            raise UsageError(
                f"frame {imageio.frame_name(t, 'pfm')}: prediction {pred.values[t].shape} vs ground truth {gt.values[t].shape}"
            )
    report = evaluate(DisparitySequence(pred.values), gt, args.thresholds)
    text = report.to_flat_text()
    sys.stdout.write(text)
    if args.out is not None:
        imageio.atomic_write(args.out, text.encode())
        imageio.atomic_write(args.out.with_suffix(".tsv"), report.to_table_text().encode())
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    failures = selftest.run(only=args.only, corrupt_lookup_order=args.corrupt_lookup_order)
    return EXIT_COMPUTE if failures else EXIT_OK


def cmd_init_weights(args) -> int:
    save_weights(init_weights(_model_config(args), args.seed), args.out)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "infer": cmd_infer, "eval": cmd_eval, "selftest": cmd_selftest,
            "init-weights": cmd_init_weights}


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    limiter = _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except (UsageError, synth.SceneError, imageio.LayoutError, WeightsError, ShapeError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, MemoryError, FloatingPointError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    raise SystemExit(main())
