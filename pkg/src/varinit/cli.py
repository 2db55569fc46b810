"""Command-line entry point: ``varinit <subcommand> ...``.

Exit status is 0 on success; ``bench`` exits 1 when any criterion fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from . import activations as act
from . import bench, checkpoint, varprop
from .config import load_config
from .data import load_dataset, standardize
from .initializers import NAMED
from .reestimate import ReEstimateConfig, evaluate, reestimate
from .training import run_train


def _factors(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["activation", "forward", "backward", "method"])
    for name in args.activation or list(act.KINDS):
        f = act.parse_activation(name)
        fac = act.adjustment_factors(f, args.method)
        w.writerow([f.label, repr(fac.forward), repr(fac.backward), fac.source])
    return 0


def _varprop(args) -> int:
    widths = tuple(args.widths) if args.widths else varprop.default_widths(args.depth)
    cfg = varprop.PropagationConfig(
        direction=args.direction, depth=args.depth, widths=widths,
        activation=act.parse_activation(args.activation), keep_prob=args.keep_prob,
        init=args.init, batch=args.batch, seed=args.seed,
        scale_backward_masks=args.scale_backward_masks)
    report = varprop.propagate(cfg)
    varprop.export_report(report, args.out)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["layer", "variance"])
    for i, v in enumerate(report.variances, start=1):
        w.writerow([i, repr(v)])
    if report.exploded_at is not None:
        logging.warning("values became non-finite at layer %d", report.exploded_at)
    return 0


def _train(args) -> int:
    cfg = load_config(args.config, output_dir=args.output_dir, dataset=args.dataset,
                      data_dir=args.data_dir, epochs=args.epochs,
                      seeds=tuple(args.seeds) if args.seeds else None)
    summary = run_train(cfg)
    bad = [r for r in summary if r["status"] != "ok"]
    for r in bad:
        logging.warning("cell %s seed=%s lr=%g: %s", r["initializer"], r["seed"], r["lr"], r["status"])
    print(f"{len(summary)} cells written to {cfg.output_dir} ({len(bad)} diverged)")
    return 0


def _load_split(args, which: str):
    train, test = load_dataset(args.dataset, args.data)
    ds = train if which == "train" else test
    limit = args.subset
    if limit:
        ds = ds.take(np.arange(min(limit, len(ds))))
    return ds


def _prep(net, ds):
    return standardize(ds, net.preprocess)[0] if net.preprocess is not None else ds


def _eval(args) -> int:
    net = checkpoint.load(args.checkpoint)
    ds = _prep(net, _load_split(args, args.split))
    loss, err = evaluate(net, ds)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["loss", "error"])
    w.writerow([repr(loss), repr(err)])
    return 0


def _bn_reestimate(args) -> int:
    net = checkpoint.load(args.checkpoint)
    ds = _prep(net, _load_split(args, "train"))
    estimator = "exact" if args.reestimate_exact else args.estimator
    cfg = ReEstimateConfig(epochs=args.epochs, estimator=estimator, batch_size=args.batch_size,
                           also_means=args.also_means)
    checkpoint.save(reestimate(net, ds, cfg), args.out)
    print(f"re-estimated {len(net.batchnorms())} BatchNorm layers -> {args.out}")
    return 0


def _bench(args) -> int:
    criteria = bench.run_benchmark_suite(args.name, args.out, dataset=args.dataset)
    for c in criteria:
        print(c.line())
    failed = [c for c in criteria if c.passed is False]
    skipped = [c for c in criteria if c.passed is None]
    print(f"{len(criteria) - len(failed) - len(skipped)} passed, {len(failed)} failed, {len(skipped)} skipped")
    return 1 if failed or skipped else 0


def _data_args(p):
    p.add_argument("--data", "--data-dir", dest="data", default=None,
                   help="dataset directory (default: $VARINIT_DATA, then ./data)")
    p.add_argument("--dataset", default="mnist", choices=["mnist", "cifar10", "toy-mnist"])
    p.add_argument("--subset", type=int, default=None, help="use only the first N examples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varinit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factors", help="adjustment factors E[f(z)^2], E[f'(z)^2] as CSV")
    p.add_argument("--activation", action="append",
                   help="identity, relu, tanh, elu[:alpha], gelu[:mu:sigma]; repeatable (default: all)")
    p.add_argument("--method", default="analytic", choices=act.METHODS)
    p.set_defaults(func=_factors)

    p = sub.add_parser("varprop", help="synthetic forward/backward variance propagation")
    p.add_argument("--direction", default="forward", choices=["forward", "backward"])
    p.add_argument("--init", default="hypersphere_fwd", choices=sorted(NAMED))
    p.add_argument("--activation", default="relu")
    p.add_argument("--keep-prob", type=float, default=1.0)
    p.add_argument("--depth", type=int, default=20)
    p.add_argument("--widths", type=int, nargs="+", help="one width per layer (default 3/4 x 500, 1/4 x 250)")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale-backward-masks", action="store_true",
                   help="divide backward masks by p, as a true inverted-dropout gradient would")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.set_defaults(func=_varprop)

    p = sub.add_parser("train", help="train the (initializer x seed x lr) grid of a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--dataset")
    p.add_argument("--data-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="loss,error of a checkpoint as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    _data_args(p)
    p.set_defaults(func=_eval)

    p = sub.add_parser("bn-reestimate", help="re-estimate BatchNorm variances with dropout off")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", default="exact", choices=["exact", "ema"])
    p.add_argument("--reestimate-exact", action="store_true", help="shorthand for --estimator exact")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--also-means", action="store_true",
                   help="extension: re-estimate running means as well")
    _data_args(p)
    p.set_defaults(func=_bn_reestimate)

    p = sub.add_parser("bench", help="run an acceptance scenario and report pass/fail per criterion")
    p.add_argument("name", choices=[*bench.SCENARIOS, "all"])
    p.add_argument("--out", default="bench")
    p.add_argument("--dataset", help="override the scenario's dataset (mnist, cifar10, toy-mnist)")
    p.set_defaults(func=_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
