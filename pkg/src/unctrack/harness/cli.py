"""Train and run the uncertainty-gated tracker from the command line.

Exit codes: 0 success, 2 input or configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..config import RunConfig, preset
from ..exceptions import (ConfigurationError, ContractError, DimensionError, InputError, NumericalError,
                          SpecError)
from ..model import UncTrackModel
from . import weights
from .evaluation import VARIANTS, dumps_json, evaluate, rows_to_csv, run_track, variant_config
from .synthetic import SyntheticSequence, make_corpus
from .training import pair_accuracy, train_stage1, train_stage2

log = logging.getLogger("unctrack")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def load_config(args) -> RunConfig:
    cfg = preset(args.preset)
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as err:
            raise InputError(f"cannot read config {args.config}: {err}") from err
        cfg = RunConfig.loads(text, base=cfg)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        cfg.set(key, value.strip())
    cfg.validate()
    return cfg


def load_corpus(directory):
    paths = sorted(Path(directory).glob("*.npz"))
    if not paths:
        raise InputError(f"no .npz sequences in {directory}")
    return [SyntheticSequence.load(p) for p in paths]


def cmd_synth(args, cfg):
    prob = cfg.data.occlusion_prob if args.occlusion_prob is None else args.occlusion_prob
    corpus = make_corpus(cfg.data, args.count, args.seed, occlusion_prob=prob)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(corpus):
        seq.save(out / f"seq_{i:04d}.npz")
    print(f"wrote {len(corpus)} sequences to {out}")


def _losses_csv(losses):
    return "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses))


def cmd_train_stage1(args, cfg):
    corpus = load_corpus(args.corpus)
    result = train_stage1(cfg, corpus)
    weights.save(result.params, args.out)
    if args.log:
        _write(args.log, _losses_csv(result.losses))
    print(f"stage 1: {len(result.losses)} steps, weights -> {args.out}")


def cmd_train_stage2(args, cfg):
    corpus = load_corpus(args.corpus)
    params = weights.load(args.weights)
    result = train_stage2(cfg, params, corpus)
    weights.save(result.params, args.out)
    if args.log:
        _write(args.log, _losses_csv(result.losses))
    if args.heldout:
        acc = pair_accuracy(result.params, cfg, load_corpus(args.heldout))
        _write(args.report or Path(args.out).with_suffix(".json"), dumps_json({"heldout_pair_accuracy": acc}))
        print(f"held-out pair accuracy {acc:.4f}")
    print(f"stage 2: {len(result.losses)} steps, weights -> {args.out}")


def cmd_track(args, cfg):
    params = weights.load(args.weights)
    try:
        seq = SyntheticSequence.load(args.sequence)
    except OSError as err:
        raise InputError(f"cannot read sequence {args.sequence}: {err}") from err
    flags = {name: (u, p) for name, u, p in VARIANTS}
    vcfg = variant_config(cfg, *flags[args.variant])
    rows, summary = run_track(vcfg, UncTrackModel(vcfg.model, params), seq)
    _write(args.out, rows_to_csv(rows))
    _write(args.summary or Path(args.out).with_suffix(".json"), dumps_json(summary))
    print(f"mean IoU {summary['mean_iou']:.4f}, acceptance {summary['acceptance_rate']:.3f}")


def cmd_eval(args, cfg):
    params = weights.load(args.weights)
    corpus = load_corpus(args.corpus)
    chosen = [v for v in VARIANTS if not args.variant or v[0] in args.variant]
    metrics = evaluate(cfg, params, corpus, variants=chosen)
    _write(args.out, dumps_json(metrics))
    for row in metrics["variants"]:
        print(f"{row['variant']:>8}  mean IoU {row['aggregate']['mean_iou']:.4f}  "
              f"acceptance {row['aggregate']['acceptance_rate']:.3f}")


def cmd_gradcheck(args, cfg):
    from .diagnostics import gradient_suite

    results = gradient_suite(points=args.points, seed=args.seed)
    worst = 0.0
    for name, err, tol in results:
        worst = max(worst, err / tol)
        print(f"{name:<28} max rel err {err:.3e}  tol {tol:.0e}  {'ok' if err <= tol else 'FAIL'}")
    if worst > 1.0:
        raise NumericalError("gradient check exceeded tolerance", stage="gradcheck")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", default="desk", help="base configuration preset (desk, full, tiny)")
    common.add_argument("--config", help="key = value config file applied over the preset")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="unctrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic sequences")
    p.add_argument("--out", required=True, help="output directory for .npz sequences")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--occlusion-prob", type=float, help="override data.occlusion_prob")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-stage1", parents=[common], help="train encoder and decoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--log", help="per-step loss CSV")
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", parents=[common], help="train the prototype memory network")
    p.add_argument("--corpus", required=True)
    p.add_argument("--weights", required=True, help="stage-1 weights")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--heldout", help="corpus directory for held-out pair accuracy")
    p.add_argument("--report", help="JSON file for the held-out accuracy")
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("track", parents=[common], help="track one sequence and write a per-frame CSV")
    p.add_argument("--weights", required=True)
    p.add_argument("--sequence", required=True, help=".npz sequence file")
    p.add_argument("--out", required=True, help="CSV trace")
    p.add_argument("--summary", help="JSON summary (default: CSV path with .json)")
    p.add_argument("--variant", default="full", choices=[v[0] for v in VARIANTS])
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", parents=[common], help="evaluate variants over a corpus")
    p.add_argument("--weights", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.add_argument("--variant", action="append", choices=[v[0] for v in VARIANTS])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        args.func(args, cfg)
    except NumericalError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ConfigurationError, SpecError, ContractError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
