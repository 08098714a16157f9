"""``didipose`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, DataError, DidiposeError, DivergenceError
from . import pipeline
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply to omitted keys)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="didipose", description="Pose codec and occlude-and-replace diffusion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write train/val/test dataset files")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train-codec", parents=[common], help="train the pose codec")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--resume", help="codec checkpoint to continue from")

    p = sub.add_parser("train-diffusion", parents=[common], help="train the denoiser on a frozen codec")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--codec", help="trained codec checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--resume", help="denoiser checkpoint to continue from")
    p.add_argument("--matrix", choices=("occlude", "replace", "both"), help="transition-matrix variant")
    p.add_argument("--occ-rate", type=float, help="final occlusion rate (schedule gamma_end)")

    p = sub.add_parser("infer", parents=[common], help="predict poses for an observation file")
    p.add_argument("--codec", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--obs", required=True, help="dataset file whose observations are used")
    p.add_argument("--out", required=True, help="output predictions file")
    p.add_argument("--steps-used", type=int, help="reverse steps (strided when below S)")

    p = sub.add_parser("eval", parents=[common], help="MPJPE / PA-MPJPE report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--allow-hash-mismatch", action="store_true")

    p = sub.add_parser("ablate", parents=[common], help="train and score transition-matrix variants")
    p.add_argument("--data", required=True, help="directory holding train.jsonl and test.jsonl")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--codec", help="reuse this codec instead of training one")
    p.add_argument("--matrix", choices=("occlude", "replace", "both"), help="run a single variant")
    p.add_argument("--steps-used", type=int, help="add a reduced-step row for the 'both' variant")
    p.add_argument("--occ-rate", type=float, help="add a 'both' row with this final occlusion rate")
    return parser


def _config(args):
    overrides = {"seed": args.seed}
    if getattr(args, "matrix", None) and args.command == "train-diffusion":
        overrides["schedule.matrix"] = args.matrix
    if getattr(args, "occ_rate", None) is not None and args.command == "train-diffusion":
        overrides["schedule.gamma_end"] = args.occ_rate
    if getattr(args, "steps_used", None) is not None and args.command == "infer":
        overrides["infer.steps_used"] = args.steps_used
    cfg = load_config(args.config, overrides)
    if args.command == "ablate":
        extra = {}
        if args.steps_used is not None:
            extra["ablate.steps_used"] = [args.steps_used]
        if args.occ_rate is not None:
            extra["ablate.occ_rates"] = [args.occ_rate]
        if extra:
            cfg = cfg.with_overrides(**extra)
    return cfg


def _print_rows(rows, columns):
    print(",".join(columns))
    for r in rows:
        print(",".join(pipeline._fmt(r[c]) for c in columns))


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval":
        rows = pipeline.eval_stage(args.pred, args.gt, args.out, args.allow_hash_mismatch)
        _print_rows(rows, pipeline.EVAL_COLUMNS)
        return EXIT_OK
    cfg = _config(args)
    if args.command == "gen-data":
        for split, path in pipeline.gen_data(cfg, args.out).items():
            print(f"{split}: {path}")
    elif args.command == "train-codec":
        _, rows = pipeline.train_codec_stage(cfg, args.data, args.out, args.resume)
        if rows:
            print(f"codec: {len(rows)} epochs, final loss {rows[-1]['loss']:.6g}, step {rows[-1]['step']}")
    elif args.command == "train-diffusion":
        _, _, rows = pipeline.train_diffusion_stage(cfg, args.data, args.codec, args.out, args.resume)
        if rows:
            print(f"denoiser: step {rows[-1]['step']}, final total loss {rows[-1]['total']:.6g}")
    elif args.command == "infer":
        out = pipeline.infer_stage(cfg, args.codec, args.denoiser, args.obs, args.out, args.steps_used)
        print(f"wrote {len(out)} predictions to {args.out}")
    elif args.command == "ablate":
        rows = pipeline.ablate_stage(cfg, args.data, args.out, args.codec, args.matrix)
        _print_rows(rows, pipeline.ABLATION_COLUMNS)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        code = run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        code = EXIT_DIVERGENCE
    except DidiposeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    return code


if __name__ == "__main__":
    sys.exit(main())
