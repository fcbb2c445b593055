"""Command-line entry point: ``freqdefense <command> [--config PATH] ...``.

Exit status is 0 on success, 2 for configuration errors and 3 for runtime
failures (missing inputs, I/O, numerical errors).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import ConfigError, FreqDefenseError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes (default 1)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="freqdefense",
                                description="Frequency-domain Wiener defenses against adversarial perturbations.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="write a seeded synthetic dataset")
    g.add_argument("--n-train", type=int, default=32)
    g.add_argument("--n-val", type=int, default=8)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--classes", type=int, default=4)
    sub.add_parser("attack", parents=[common], help="perturb every image with every attack")
    sub.add_parser("fit-filter", parents=[common], help="fit Wiener filters on the training split")
    sub.add_parser("evaluate", parents=[common], help="score defenses and write the CSV report")
    s = sub.add_parser("spectra", parents=[common], help="averaged perturbation spectra and peak scores")
    s.add_argument("--sweep-interp", action="store_true",
                   help="also re-run mFGSM under every interpolation mode")
    sub.add_parser("run", parents=[common], help="attack, fit-filter, evaluate and spectra in one go")
    return p


def _gen_data(args) -> None:
    if args.out is None and args.config is None:
        raise ConfigError("gen-data needs --out DIR or --config PATH")
    if args.out is not None:
        out, seed = args.out, args.seed if args.seed is not None else 0
    else:
        cfg = harness.load_config(args.config, seed=args.seed, check_dataset=False)
        out, seed = cfg.dataset_dir, cfg.seed
    counts = harness.generate_dataset(out, seed, args.n_train, args.n_val, args.size, args.classes)
    print(f"wrote {counts['train']} train and {counts['val']} val images to {out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            _gen_data(args)
            return EXIT_OK
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config PATH")
        cfg = harness.load_config(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
        if args.command == "attack":
            print(f"wrote {len(harness.cmd_attack(cfg))} perturbations")
        elif args.command == "fit-filter":
            print(f"wrote {len(harness.cmd_fit_filter(cfg))} filters")
        elif args.command == "evaluate":
            print(f"wrote {len(harness.cmd_evaluate(cfg))} report rows")
        elif args.command == "spectra":
            for row in harness.cmd_spectra(cfg, sweep_modes=args.sweep_interp):
                print(f"{row['source']:<10} {row['attack']:<28} {row['mode']:<9} {row['score']:.3f}")
        elif args.command == "run":
            harness.run_all(cfg)
            print(f"done; outputs in {cfg.output_dir}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FreqDefenseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
