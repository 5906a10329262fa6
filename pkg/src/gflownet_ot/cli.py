"""Command line entry point: ``gflownet-ot train ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .hypergrid import EnvSpec
from .path_reg import METHODS, RegularizerConfig
from .train import TrainConfig, train

REG_MODES = {"none": "none", "min-ot": "min", "max-ot": "max", "ub-ot": "ub"}


def build_parser():
    parser = argparse.ArgumentParser(prog="gflownet-ot")
    sub = parser.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train a GFlowNet on the hypergrid")
    t.add_argument("--env", choices=["hypergrid"], default="hypergrid")
    t.add_argument("--dims", type=int, default=4)
    t.add_argument("--side", type=int, default=8)
    t.add_argument("--r0", type=float, default=1e-3)
    t.add_argument("--steps", type=int, default=62_500)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr-policy", type=float, default=1e-3)
    t.add_argument("--lr-logz", type=float, default=0.1)
    t.add_argument("--explore", type=float, default=0.01)
    t.add_argument("--reg", choices=sorted(REG_MODES), default="none")
    t.add_argument("--ot-method", choices=METHODS, default="closed")
    t.add_argument("--lambda", dest="lam", type=float, default=0.02)
    t.add_argument("--dropout-p", type=float, default=1.0)
    t.add_argument("--sinkhorn-eps", type=float, default=0.01)
    t.add_argument("--sinkhorn-iters", type=int, default=500)
    t.add_argument("--uniform-pb", action="store_true", help="fix P_B to uniform over parents")
    t.add_argument("--hidden", type=int, default=256)
    t.add_argument("--log-every", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory for metrics.csv, config.json, model.npz")
    t.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args):
    reg = RegularizerConfig(mode=REG_MODES[args.reg], method=args.ot_method, lam=args.lam,
                            dropout_p=args.dropout_p, sinkhorn_epsilon=args.sinkhorn_eps,
                            sinkhorn_iters=args.sinkhorn_iters)
    return TrainConfig(env=EnvSpec(args.dims, args.side, args.r0), steps=args.steps, batch=args.batch,
                       lr_policy=args.lr_policy, lr_logz=args.lr_logz, explore_alpha=args.explore, reg=reg,
                       seed=args.seed, hidden=args.hidden, uniform_pb=args.uniform_pb,
                       log_every=args.log_every, out=args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = train(config)
    last = result.metrics.records[-1]
    print(f"steps={last.step} trajectories={last.trajectories} modes_found={last.modes_found} "
          f"kl={last.kl:.6f} all_modes_at={result.all_modes_at} seconds={result.seconds:.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
