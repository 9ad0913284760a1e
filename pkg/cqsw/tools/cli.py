from __future__ import annotations

import argparse
import logging
import sys
from typing import Any

from pydantic import ValidationError

from cqsw.core.config import get_settings
from cqsw.core.errors import AssertionFailure, ConstructionFailure, ResourceCapExceeded, ValidationFailure
from cqsw.services.experiments import (
    EXIT_ASSERTION,
    EXIT_RESOURCE_CAP,
    EXIT_VALIDATION,
    SUBCOMMANDS,
    RunConfig,
    load_run_file,
    run_experiment,
)


_FLAG_FIELDS = (
    "ensemble",
    "n",
    "delta",
    "epsilon",
    "seed",
    "trials",
    "mode",
    "out",
    "eta",
    "workers",
    "max_dense_dim",
    "max_enumeration",
    "max_exact_sequences",
    "log_level",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cqsw",
        description="Classical compression with quantum side information: rates, codes and protocol runs.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--ensemble", default=None, help="Ensemble JSON path or preset name")
        cmd.add_argument("--n", type=int, default=None, help="Block length")
        cmd.add_argument("--delta", type=float, default=None, help="Typicality width")
        cmd.add_argument("--epsilon", type=float, default=None, help="Per-codeword error target")
        cmd.add_argument("--seed", type=int, default=None, help="Master seed (required)")
        cmd.add_argument("--trials", type=int, default=None, help="Monte Carlo trials")
        cmd.add_argument("--mode", choices=["exact", "mc", "both"], default=None)
        cmd.add_argument("--out", default=None, help="Output directory for CSV and manifest")
        cmd.add_argument("--config", default=None, help="YAML run file; flags override it")
        cmd.add_argument("--eta", type=float, default=None)
        cmd.add_argument("--workers", type=int, default=None)
        cmd.add_argument("--max-dense-dim", type=int, default=None)
        cmd.add_argument("--max-enumeration", type=int, default=None)
        cmd.add_argument("--max-exact-sequences", type=int, default=None)
        cmd.add_argument(
            "--drop-reserved-index",
            action="store_true",
            default=None,
            help="Drop index M when the cover is exact",
        )
        cmd.add_argument("--log-level", default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    merged: dict[str, Any] = {}
    if args.config:
        merged.update(load_run_file(args.config))
        merged["config_path"] = args.config
    for name in _FLAG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            merged[name] = value
    if args.drop_reserved_index:
        merged["drop_reserved_index"] = True
    merged["subcommand"] = args.subcommand
    return RunConfig(**merged)


def _fail(code: int, message: str) -> int:
    print(f"cqsw: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "$"
        return _fail(EXIT_VALIDATION, f"{path}: {first['msg']}")
    except ValidationFailure as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    level = (cfg.log_level or get_settings().log_level).upper()
    if not isinstance(logging.getLevelName(level), int):
        return _fail(EXIT_VALIDATION, f"log_level: unknown level {level!r}")
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        result = run_experiment(cfg)
    except ValidationFailure as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    except ResourceCapExceeded as exc:
        return _fail(EXIT_RESOURCE_CAP, str(exc))
    except (AssertionFailure, ConstructionFailure) as exc:
        return _fail(EXIT_ASSERTION, str(exc))

    print(f"results_csv={result.csv_path}")
    print(f"manifest={result.manifest_path}")
    if result.exit_code != 0:
        failed = sorted(name for name, ok in result.assertions.items() if not ok)
        return _fail(result.exit_code, f"assertions failed: {', '.join(failed)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
