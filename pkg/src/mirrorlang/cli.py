"""``mirrorlang`` command line.

Exit codes: 0 success, 2 configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import EXPERIMENTS, ConfigError, DivergenceFailure, parse_config, run

log = logging.getLogger("mirrorlang")


def _beta_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad beta grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrorlang", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", metavar="FILE", help="JSON config (or a previous metadata.json)")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--beta", type=float)
    g.add_argument("--beta-grid", dest="beta_grid", type=_beta_grid, metavar="F,F,...")
    p.add_argument("--keep", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--binning", choices=("posterior", "uniform"))
    p.add_argument("--sampler", choices=("mld", "smld", "sgrld"))
    p.add_argument("--exp-mode", dest="exp_mode", choices=("exact", "linearized"))
    p.add_argument("--init", choices=("center", "oracle"))
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="output_dir", metavar="DIR")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("experiment", "config", "verbose")}
    try:
        cfg = parse_config(args.config, overrides, experiment=args.experiment)
        bundle = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceFailure as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    out = bundle.write()
    if bundle.diverged:
        print(f"diverged; report written to {out}", file=sys.stderr)
        return 3
    log.info("wrote %s in %.1fs", out, bundle.wall_time)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
