from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from cqsw.services.results import HEADERS, RESULTS_SCHEMA_VERSION
from cqsw.tools.cli import main


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def _manifest(out: Path, subcommand: str) -> dict:
    return json.loads((out / f"{subcommand}.manifest.json").read_text(encoding="utf-8"))


def test_rates_writes_csv_and_manifest(tmp_path: Path) -> None:
    out = tmp_path / "rates"
    assert main(["rates", "--ensemble", "bb84", "--seed", "1", "--out", str(out)]) == 0
    csv_path = out / "rates.csv"
    header = csv_path.read_text(encoding="utf-8").splitlines()[0]
    assert header.split(",") == HEADERS["rates"]
    rows = _rows(csv_path)
    assert [r["row_type"] for r in rows] == ["rates", "corner", "corner"]
    assert float(rows[0]["H_X_given_Q"]) == pytest.approx(1.0)
    assert rows[0]["schema_version"] == RESULTS_SCHEMA_VERSION

    manifest = _manifest(out, "rates")
    assert manifest["instrument"] == "sqrt-kraus"
    assert manifest["exit_code"] == 0
    assert manifest["config_hash"] == rows[0]["config_hash"]
    assert manifest["ensemble"]["alphabet"] == ["0", "1", "+", "-"]
    assert manifest["created_at"].endswith("+00:00")
    assert manifest["elapsed_seconds"] >= 0.0


def test_cover_csv_is_byte_identical_across_workers(tmp_path: Path) -> None:
    args = ["cover", "--ensemble", "zero-plus", "--n", "6", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    first = (tmp_path / "a" / "cover.csv").read_bytes()
    second = (tmp_path / "b" / "cover.csv").read_bytes()
    assert first == second
    assert _manifest(tmp_path / "a", "cover")["config_hash"] == _manifest(tmp_path / "b", "cover")["config_hash"]

    rows = _rows(tmp_path / "a" / "cover.csv")
    assert rows[0]["row_type"] == "cover"
    assert rows[0]["residual_ok"] == "true"
    assert any(r["row_type"] == "exact" for r in rows)


def test_flags_override_run_file(tmp_path: Path) -> None:
    run_file = tmp_path / "run.yaml"
    run_file.write_text("ensemble: orthogonal-pair\nn: 2\nseed: 5\nmax-dense-dim: 64\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["typical", "--config", str(run_file), "--n", "3", "--out", str(out)]) == 0
    config = _manifest(out, "typical")["config"]
    assert config["n"] == 3
    assert config["seed"] == 5
    assert config["max_dense_dim"] == 64
    assert config["config_path"] == str(run_file)
    rows = _rows(out / "typical.csv")
    assert [r["row_type"] for r in rows] == ["typical_set", "typical_subspace"]
    assert rows[0]["size"] == "8"


def test_resource_cap_exits_four(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out = tmp_path / "capped"
    code = main(["typical", "--ensemble", "zero-plus", "--n", "3", "--seed", "1", "--max-enumeration", "4", "--out", str(out)])
    assert code == 4
    assert "cap 4" in capsys.readouterr().err
    assert not (out / "typical.csv").exists()

    code = main(
        ["cover", "--ensemble", "orthogonal-pair", "--n", "3", "--seed", "1", "--max-exact-sequences", "4", "--out", str(out)]
    )
    assert code == 4
    assert "--mode mc" in capsys.readouterr().err


def test_validation_errors_exit_two(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["rates", "--ensemble", "bb84", "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err

    assert main(["rates", "--ensemble", "bb84", "--seed", "1", "--delta", "0", "--out", str(tmp_path)]) == 2
    assert "delta" in capsys.readouterr().err

    broken = tmp_path / "broken.json"
    broken.write_text('{"alphabet": ["a"], "probs": [0.5], "states": [{"preset": "0"}]}', encoding="utf-8")
    assert main(["rates", "--ensemble", str(broken), "--seed", "1", "--out", str(tmp_path)]) == 2
    assert "probs" in capsys.readouterr().err

    assert main(["rates", "--seed", "1", "--out", str(tmp_path)]) == 2
    assert main(["rates", "--ensemble", "bb84", "--seed", "1", "--log-level", "LOUD", "--out", str(tmp_path)]) == 2


def test_construction_failure_exits_three(tmp_path: Path) -> None:
    args = ["build-code", "--ensemble", "zero-plus", "--n", "1", "--epsilon", "0.1", "--seed", "3", "--out", str(tmp_path)]
    assert main(args) == 3


def test_incomplete_cover_writes_partial_rows(tmp_path: Path) -> None:
    args = ["cover", "--ensemble", "zero-plus", "--n", "1", "--epsilon", "0.1", "--seed", "5", "--out", str(tmp_path)]
    assert main(args) == 3
    rows = _rows(tmp_path / "cover.csv")
    assert rows[0]["row_type"] == "cover"
    assert rows[0]["stop_reason"] == "constructor-failed"
    assert rows[0]["M"] == "1"
    assert [row for row in rows if row["row_type"] == "code"] == []
    manifest = _manifest(tmp_path, "cover")
    assert manifest["exit_code"] == 3
    assert manifest["assertions"] == {"cover_constructed": False}


def test_simulate_reports_exact_and_monte_carlo(tmp_path: Path) -> None:
    args = [
        "simulate",
        "--ensemble",
        "orthogonal-pair",
        "--n",
        "4",
        "--delta",
        "0.3",
        "--mode",
        "both",
        "--trials",
        "2000",
        "--seed",
        "4",
        "--out",
        str(tmp_path),
    ]
    assert main(args) == 0
    rows = _rows(tmp_path / "simulate.csv")
    assert [r["row_type"] for r in rows] == ["exact", "mc"]
    assert float(rows[0]["P_e"]) == pytest.approx(0.125)
    assert rows[1]["trials"] == "2000"
    assert rows[0]["M"] == "2"


def test_converse_audit_and_bb84_demos(tmp_path: Path) -> None:
    args = ["converse-audit", "--ensemble", "orthogonal-pair", "--n", "3", "--seed", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    ledger = _rows(tmp_path / "converse-audit.csv")[0]
    assert ledger["verdict"] == "true"
    assert ledger["chain_monotone"] == "true"

    assert main(["bb84-oneshot", "--seed", "0", "--out", str(tmp_path)]) == 0
    oneshot = _rows(tmp_path / "bb84-oneshot.csv")[0]
    assert oneshot["M"] == "2"
    assert float(oneshot["rate"]) == pytest.approx(1.0)

    assert main(["bb84-measure-sim", "--seed", "0", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "bb84-measure-sim.csv")
    assert [r["row_type"] for r in rows] == ["outcome"] * 4 + ["summary"]
    assert rows[-1]["communication_bits"] == "1"
