"""``ntkpde <study> --config FILE --out DIR``; exit status 0 iff every verdict passes."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import NtkPdeError
from .config import ExperimentConfig
from .studies import STUDIES

log = logging.getLogger("ntkpde")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntkpde", description=__doc__)
    sub = parser.add_subparsers(dest="study", required=True)
    for name, fn in STUDIES.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").splitlines()[0])
        p.add_argument("--config", type=Path, help="INI file (defaults are used if omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
        p.add_argument("--seed-override", type=int, help="shift every seed to start here")
        p.add_argument("--quick", action="store_true", help="reduced sizes for a smoke run")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        if args.quick:
            cfg = cfg.quick()
        log.info("running %s (config %s)", args.study, cfg.digest()[:12])
        report = STUDIES[args.study](cfg)
    except (NtkPdeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = report.write(args.out or Path(cfg.out_dir) / args.study)
    for v in report.verdicts:
        print(v.line())
    for n in report.notices:
        print(f"notice: {n}")
    print(f"report written to {out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
