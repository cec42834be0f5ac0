"""Command-line front end for the experiment drivers."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex

_PROBLEM = {
    "example1": "source2d",
    "example1-alpha": "source2d-alpha",
    "example2": "diffusivity-kl",
    "validate-surrogate": "source2d",
    "forward-convergence": "source2d",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbeki", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _PROBLEM:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--output-dir", help="directory for CSV, surrogate and manifest files")
        p.add_argument("--direct-eki", action="store_true", help="also run EKI with the full-order model")
        p.add_argument(
            "--noise-level",
            choices=("truth", "sqrt-m"),
            help="noise level in the stopping rule: realized from the truth run, or sqrt(m)",
        )
    return parser


def load(args) -> ex.ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.direct_eki:
        overrides["direct_eki"] = True
    if args.noise_level:
        overrides["noise_estimate"] = args.noise_level
    problem = _PROBLEM[args.command]
    if args.config:
        return ex.load_config(args.config, problem, **overrides)
    return ex.config_for(problem, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = load(args)
    if args.command == "example1":
        res = ex.run_example1(cfg)
    elif args.command == "example1-alpha":
        res = ex.run_example1_alpha(cfg)
    elif args.command == "example2":
        res = ex.run_example2(cfg)
    elif args.command == "validate-surrogate":
        for p, n, ea, ep, ec, wt in ex.validate_surrogate(cfg):
            print(f"p={p:<3d} N={n:<4d} eps_a={ea:.3e} eps_p={ep:.3e} eps_c={ec:.3e}  {wt:.1f}s")
        return 0
    else:
        for s in ex.forward_convergence(cfg):
            print(f"{s.kind:8s} alpha={s.alpha:.2f} order={s.order:.3f}")
        return 0
    for inv in res["runs"]:
        r = inv.result
        mean = ", ".join(f"{v:.4f}" for v in inv.mean)
        print(f"{inv.method:6s} delta={inv.data.delta:<5g} mean=({mean}) iterations={r.iterations} "
              f"stop={r.stop_reason} online={r.online_seconds:.3f}s")
    print(f"outputs written to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
