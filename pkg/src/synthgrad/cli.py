"""Command-line entry point.

    synthgrad train --config PATH [--out DIR] [--key value]...
    synthgrad eval --checkpoint PATH --corpus PATH
    synthgrad resume --checkpoint PATH [--out DIR] [--key value]...
    synthgrad gradcheck [--configs N] [--instances N] [--seed S]

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, DataError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` pairs into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError(f"missing value for --{key}")
        out[key.replace("-", "_")] = value
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthgrad",
                                     description="Neuron-wise synthetic gradients for QRNN LMs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one method arm")
    train.add_argument("--config", help="key = value config file")
    train.add_argument("--out", help="output directory (default: $SYNTHGRAD_OUTPUT_DIR)")

    ev = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", required=True)

    res = sub.add_parser("resume", help="continue a run from a checkpoint")
    res.add_argument("--checkpoint", required=True)
    res.add_argument("--config", help="optional config file; must hash-match the checkpoint")
    res.add_argument("--out", help="output directory (default: the checkpoint's directory)")

    gc = sub.add_parser("gradcheck", help="finite-difference and 2T-oracle certification")
    gc.add_argument("--configs", type=int, default=20)
    gc.add_argument("--instances", type=int, default=50)
    gc.add_argument("--seed", type=int, default=0)
    return parser


def _gradcheck(args) -> int:
    from .gradcheck import TOL_REL, run_bootstrap_checks, run_cell_checks

    ok = True
    for name, reports in run_cell_checks(args.configs, args.seed).items():
        passed = all(r.passed for r in reports)
        worst = max(r.max_rel for r in reports)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:<13} configs={len(reports)} "
              f"max_rel={worst:.2e} (tol {TOL_REL:.0e})")
    errors = run_bootstrap_checks(args.instances, args.seed)
    worst = max(errors)
    passed = worst <= 1e-10
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} bootstrap     instances={len(errors)} "
          f"max_abs={worst:.2e} (tol 1e-10)")
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import experiment

    try:
        if args.command == "gradcheck":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            return _gradcheck(args)
        if args.command == "eval":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            ppl = experiment.evaluate_checkpoint(args.checkpoint, args.corpus)
            print(f"perplexity {ppl!r}")
            return EXIT_OK
        overrides = _parse_overrides(extra)
        if args.command == "train":
            config = load_config(args.config, overrides)
            report = experiment.run_experiment(config, args.out, echo=print)
        else:
            if args.config:
                overrides = {**load_config(args.config).to_dict(), **overrides}
            report = experiment.resume(args.checkpoint, args.out, overrides, echo=print)
        print(f"test_ppl={report['test_ppl']} best_val_ppl={report['best_val_ppl']} "
              f"best_val_epoch={report['best_val_epoch']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
