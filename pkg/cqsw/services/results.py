"""Results CSV and run-manifest writers.

Headers are fixed per subcommand and versioned by ``RESULTS_SCHEMA_VERSION``;
the column meanings live in ``docs/results_csv_contract.md``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any


RESULTS_SCHEMA_VERSION = "cqsw-results-v1"

PREFIX = ["schema_version", "config_hash", "seed", "row_type"]

_CODE_COLUMNS = [
    "n",
    "delta",
    "epsilon",
    "code_index",
    "codeword",
    "error",
    "code_size",
    "max_error",
    "rate",
    "size_target",
]
_COVER_COLUMNS = [
    "M",
    "reserved_index",
    "rate",
    "typical_prob",
    "residual_prob",
    "residual_bound",
    "residual_ok",
    "rate_upper_target",
    "rate_within_upper",
    "rate_floor",
    "rate_floor_ok",
    "size_target",
    "sizes_meeting_target",
    "stop_reason",
]
_METRIC_COLUMNS = [
    "P_e",
    "P_e_stderr",
    "Delta",
    "Delta_stderr",
    "epsilon_hat",
    "mean_deficit",
    "encoding_error_prob",
    "trials",
    "gentle_bound_measured",
    "gentle_ok_measured",
    "gentle_bound_design",
    "gentle_ok_design",
    "gentle_binding",
    "within_3_stderr",
]
_LEDGER_COLUMNS = [
    "R",
    "H_X",
    "chi",
    "fano_bound",
    "chain_1",
    "chain_2",
    "chain_3",
    "chain_4",
    "H_I",
    "I_XJ_given_I",
    "H_X_given_IJ",
    "chain_monotone",
    "fano_consistent",
    "verdict",
    "omitted_reason",
]

HEADERS: dict[str, list[str]] = {
    "rates": PREFIX
    + [
        "H_X",
        "H_Q",
        "H_Q_given_X",
        "chi",
        "H_X_given_Q",
        "H_XQ",
        "I_XQ_ehs",
        "H_X_given_Q_definitional",
        "H_X_given_Q_chi_route",
        "H_X_given_Q_ehs_route",
        "corner",
        "rate_x",
        "rate_q",
        "status",
    ],
    "typical": PREFIX
    + [
        "n",
        "delta",
        "size",
        "log2_size",
        "mass",
        "entropy",
        "width",
        "lower",
        "upper",
        "finite_lower",
        "upper_ok",
        "finite_lower_ok",
        "raw_lower_ok",
    ],
    "build-code": PREFIX + _CODE_COLUMNS,
    "cover": PREFIX + _CODE_COLUMNS + [c for c in _COVER_COLUMNS if c not in _CODE_COLUMNS] + _METRIC_COLUMNS,
    "simulate": PREFIX + ["n", "delta", "epsilon", "M", "rate"] + _METRIC_COLUMNS,
    "converse-audit": PREFIX + ["n", "P_e", "M"] + _LEDGER_COLUMNS,
    "bb84-oneshot": PREFIX
    + [
        "M",
        "rate",
        "rate_with_reserved",
        "P_e",
        "Delta",
        "H_X",
        "chi",
        "H_X_given_Q",
        "benchmark_rate",
        "chain_1",
        "chain_4",
        "verdict",
    ],
    "bb84-measure-sim": PREFIX
    + [
        "outcome",
        "prob_direct",
        "prob_simulated",
        "state_gap",
        "direct_bits",
        "communication_bits",
        "shared_random_bits",
        "mutual_information",
        "conditional_entropy",
    ],
}


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if value == 0.0:
            return "0"
        return f"{value:.12g}"
    return str(value)


def render_csv(subcommand: str, rows: list[dict[str, Any]]) -> str:
    header = HEADERS[subcommand]
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        unknown = set(row) - set(header)
        if unknown:
            raise KeyError(f"columns {sorted(unknown)} are not in the {subcommand} header")
        writer.writerow([format_value(row.get(column)) for column in header])
    return buffer.getvalue()


def write_results_csv(out_dir: str | Path, subcommand: str, rows: list[dict[str, Any]]) -> Path:
    target = Path(out_dir) / f"{subcommand}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        handle.write(render_csv(subcommand, rows))
    return target


def write_manifest(out_dir: str | Path, subcommand: str, manifest: dict[str, Any]) -> Path:
    target = Path(out_dir) / f"{subcommand}.manifest.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=True) + "\n", encoding="utf-8")
    return target
