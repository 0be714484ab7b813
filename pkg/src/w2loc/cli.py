"""Command line entry point.

    w2loc landscape   --config FILE [--seed N] [--out DIR] [--threads N]
    w2loc locate      --config FILE ...
    w2loc noise-table --config FILE ...
    w2loc compare     --config FILE ...

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .experiments import RUNNERS, local_minima
from .wavesim import NumericalBlowup, StabilityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

#: CLI verb -> accepted experiment kinds in the config file.
VERBS = {
    "landscape": ("landscape",),
    "locate": ("locate", "locate-ensemble"),
    "noise-table": ("noise-table",),
    "compare": ("method-compare", "locate-ensemble"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="w2loc", description="W2-misfit earthquake location")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        s = sub.add_parser(verb)
        s.add_argument("--config", required=True, help="INI experiment file")
        s.add_argument("--seed", type=int, default=None, help="overrides [seed] value")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker threads")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _report(verb: str, result) -> str:
    if verb == "landscape":
        x, z = result.argmin()
        return (f"min at ({x:g}, {z:g}) km, {len(local_minima(result.psi))} local minima, "
                f"{result.failures} failed nodes")
    if verb == "noise-table":
        i = list(result.multipliers).index(1.0) if 1.0 in result.multipliers else 0
        return f"lambda* row slope {result.slope(i):.3f}"
    if hasattr(result, "run"):
        run = result.run
        msg = f"{run.status}: k*={run.k_star}, x*={np.round(run.x_star, 4).tolist()}, " \
              f"error {result.error_star:.4g} km"
        return msg + (f" ({run.message})" if run.message else "")
    return f"{len(result)} runs"


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.experiment not in VERBS[args.verb]:
            raise ConfigError(f"verb {args.verb!r} cannot run experiment {cfg.experiment!r}")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be a nonnegative integer")
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = RUNNERS[cfg.experiment](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalBlowup, StabilityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {cfg.experiment} ({args.config}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{cfg.experiment}: {_report(args.verb, result)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
