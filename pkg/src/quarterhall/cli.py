"""Command-line entry point: ``quarterhall <experiment> [--config F] [--out D] [--seed N]``.

Exit codes: 0 all verdicts pass (or pass + skip), 1 any verdict fails,
2 usage or configuration error, 3 every verdict was skipped.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .experiments import EXPERIMENTS, ExperimentConfig, Verdict, exp_robustness, run
from .io import ConfigError, read_config_file, write_reports

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SKIP = 0, 1, 2, 3


def _thread_limit():
    n = os.environ.get("QH_THREADS")
    if not n:
        return nullcontext()
    return threadpool_limits(int(n))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quarterhall",
                                     description="Quarter-plane magnetic interface experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in (*EXPERIMENTS, "all"):
        p = sub.add_parser(name, help=f"run {'every experiment' if name == 'all' else name}")
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--out", type=Path, help="output directory (default: results/<experiment>)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    return parser


def load_configs(name: str, config_path: Path | None, seed: int | None) -> list[ExperimentConfig]:
    data = read_config_file(config_path) if config_path else {}
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed: must be non-negative")
        data["seed"] = seed
    names = EXPERIMENTS if name == "all" else (name,)
    if name == "all":
        data.pop("name", None)
    return [ExperimentConfig.from_dict(data, n) for n in names]


def exit_code(verdicts: dict[str, Verdict]) -> int:
    statuses = [v.status for v in verdicts.values()]
    if "fail" in statuses:
        return EXIT_FAIL
    if statuses and all(s == "skip" for s in statuses):
        return EXIT_SKIP
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        configs = load_configs(args.experiment, args.config, args.seed)
    except ConfigError as exc:
        print(f"quarterhall: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or Path(configs[0].out_dir or Path("results") / args.experiment)
    verdicts: dict[str, Verdict] = {}
    with _thread_limit():
        for cfg in configs:
            if cfg.name == "robustness" and "bulk-interface" in verdicts:
                verdicts[cfg.name] = exp_robustness(cfg, verdicts["bulk-interface"])
            else:
                verdicts[cfg.name] = run(cfg)
            v = verdicts[cfg.name]
            print(f"{cfg.name}: {v.status.upper()} ({v.runtime_s:.1f} s)")
            for c in v.checks:
                print(f"  [{'ok' if c.passed else 'FAIL'}] {c.name} {c.detail}")
            for d in v.diagnostics:
                print(f"  note: {d}")
    echo = configs[0].to_dict() if len(configs) == 1 else {c.name: c.to_dict() for c in configs}
    try:
        write_reports(verdicts, out, echo)
    except OSError as exc:
        print(f"quarterhall: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"reports written to {out}")
    return exit_code(verdicts)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
