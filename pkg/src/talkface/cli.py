"""``talkface`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from .audio import SAMPLE_RATE, VIDEO_FPS

log = logging.getLogger("talkface")


def _synth_data(args) -> int:
    from .pipeline.synth import synth_dataset

    paths = synth_dataset(args.out, args.clips, args.seed, args.duration)
    log.info("wrote %d raw clips under %s", len(paths), args.out)
    return 0


def _ingest(args) -> int:
    from .pipeline.data import ingest_directory

    records, rejected = ingest_directory(args.inp, args.out, fps=args.fps, sample_rate=args.sr,
                                         min_dur=args.min_dur, max_dur=args.max_dur, workers=args.workers)
    for r in rejected:
        log.warning("rejected %s: %s %s", r["name"], r["reason"], r["detail"])
    log.info("ingested %d clips, rejected %d", len(records), len(rejected))
    return 0 if records else 1


def _train(args) -> int:
    from .pipeline.config import load_config
    from .pipeline.data import load_dataset
    from .pipeline.train import train_stage1, train_stage2

    cfg = load_config(args.config)
    records = load_dataset(cfg.data_dir)
    if args.stage == 1:
        path = train_stage1(records, cfg, resume=args.resume, log=log.info)
    else:
        path = train_stage2(records, cfg, resume=args.resume, log=log.info)
    log.info("checkpoint written to %s", path)
    return 0


def _infer(args) -> int:
    from .pipeline.config import load_config
    from .pipeline.infer import infer_to_dir
    from .pipeline.train import set_strict_mode

    cfg = load_config(args.config)
    if cfg.strict:
        set_strict_mode(cfg.seed)
    out = infer_to_dir(cfg, args.ref_image, args.caption, args.audio, args.seed, args.ddim_steps, args.out)
    log.info("video written to %s", out)
    return 0


def _evaluate(args) -> int:
    from .pipeline.evaluate import evaluate_dirs

    report = evaluate_dirs(args.pred, args.gt, args.report)
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talkface", description="Toy emotional talking-face generation pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a parametric toy dataset of raw clips")
    p.add_argument("--clips", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=3.0, help="seconds per clip")
    p.add_argument("--out", default="data/raw")
    p.set_defaults(func=_synth_data)

    p = sub.add_parser("ingest", help="standardize raw clips to 25 fps / 16 kHz")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=int, default=VIDEO_FPS)
    p.add_argument("--sr", type=int, default=SAMPLE_RATE)
    p.add_argument("--min-dur", type=float, default=3.0)
    p.add_argument("--max-dur", type=float, default=20.0)
    p.add_argument("--workers", type=int, default=1, help="clips ingested in parallel")
    p.set_defaults(func=_ingest)

    p = sub.add_parser("train", help="run training stage 1 or 2")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", default=None, help="JSON config file (defaults when omitted)")
    p.add_argument("--resume", action="store_true", help="continue from the stage checkpoint if present")
    p.set_defaults(func=_train)

    p = sub.add_parser("infer", help="animate a reference image from audio")
    p.add_argument("--ref-image", required=True)
    p.add_argument("--caption", default="")
    p.add_argument("--audio", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ddim-steps", type=int, default=40)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_infer)

    p = sub.add_parser("evaluate", help="score generated videos against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default=None, help="JSON report path")
    p.set_defaults(func=_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:  # surface a one-line error instead of a traceback
        if args.verbose:
            raise
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
