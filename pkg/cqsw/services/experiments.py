from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, get_args

import yaml
from pydantic import BaseModel, ConfigDict, Field

from cqsw import __version__
from cqsw.core.config import Settings, get_settings
from cqsw.core.errors import CoverIncomplete, ValidationFailure
from cqsw.core.hashing import canonical_payload_hash
from cqsw.core.time import RunClock
from cqsw.services.bb84 import bb84_measurement_compression, bb84_oneshot
from cqsw.services.coding import (
    CqswCode,
    build_channel_code,
    check_code_invariants,
    cover_audit,
    exact_code_metrics,
    greedy_cover,
)
from cqsw.services.ensemble_io import ensemble_hash, parse_ensemble, serialize_ensemble
from cqsw.services.ensembles import (
    PRESET_ENSEMBLES,
    CqEnsemble,
    average_state,
    corner_points,
    entropy_report,
    sequence_label,
)
from cqsw.services.measurement import INSTRUMENT
from cqsw.services.protocol import converse_audit, gentle_measurement_check, run_trials
from cqsw.services.results import RESULTS_SCHEMA_VERSION, write_manifest, write_results_csv
from cqsw.services.typicality import dimension_bounds, typical_capture, typical_set


logger = logging.getLogger(__name__)

Subcommand = Literal[
    "rates",
    "typical",
    "build-code",
    "cover",
    "simulate",
    "converse-audit",
    "bb84-oneshot",
    "bb84-measure-sim",
]
SUBCOMMANDS: tuple[str, ...] = get_args(Subcommand)
NEEDS_ENSEMBLE = {"rates", "typical", "build-code", "cover", "simulate", "converse-audit"}

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ASSERTION = 3
EXIT_RESOURCE_CAP = 4


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    ensemble: str | None = None
    n: int = Field(default=1, ge=1, le=64)
    delta: float = Field(default=0.5, gt=0.0, le=1.0)
    epsilon: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = Field(ge=0, lt=2**64)
    trials: int = Field(default=10_000, ge=1, le=10_000_000)
    mode: Literal["exact", "mc", "both"] = "exact"
    drop_reserved_index: bool = False
    eta: float | None = Field(default=None, gt=0.0, lt=1.0)
    max_dense_dim: int | None = Field(default=None, ge=1)
    max_enumeration: int | None = Field(default=None, ge=1)
    max_exact_sequences: int | None = Field(default=None, ge=1)
    workers: int | None = Field(default=None, ge=1, le=256)
    out: str = "results"
    config_path: str | None = None
    log_level: str | None = None

    def settings(self, base: Settings | None = None) -> Settings:
        base = base or get_settings()
        overrides = {
            key: getattr(self, key)
            for key in ("eta", "max_dense_dim", "max_enumeration", "max_exact_sequences", "workers")
            if getattr(self, key) is not None
        }
        return base.model_copy(update=overrides)


def load_run_file(path: str | Path) -> dict[str, Any]:
    source = Path(path)
    try:
        data = yaml.safe_load(source.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ValidationFailure(f"run file not found: {source}", field_path="config") from exc
    except yaml.YAMLError as exc:
        raise ValidationFailure(f"run file is not valid YAML: {exc}", field_path="config") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationFailure("run file must hold a mapping of run parameters", field_path="config")
    return {str(key).replace("-", "_"): value for key, value in data.items()}


def resolve_ensemble(ref: str) -> CqEnsemble:
    if not Path(ref).exists() and ref in PRESET_ENSEMBLES:
        return PRESET_ENSEMBLES[ref]()
    return parse_ensemble(ref)


@dataclass(frozen=True)
class RunResult:
    subcommand: str
    config_hash: str
    rows: list[dict[str, Any]]
    assertions: dict[str, bool]
    exit_code: int
    csv_path: Path
    manifest_path: Path


@dataclass
class _RunContext:
    cfg: RunConfig
    ensemble: CqEnsemble | None
    settings: Settings

    @property
    def e(self) -> CqEnsemble:
        if self.ensemble is None:
            raise ValidationFailure(f"subcommand {self.cfg.subcommand} needs --ensemble", field_path="ensemble")
        return self.ensemble


Rows = list[dict[str, Any]]
Checks = dict[str, bool]


def _rates(ctx: _RunContext) -> tuple[Rows, Checks]:
    report = entropy_report(ctx.e)
    rows: Rows = [
        {
            "row_type": "rates",
            "H_X": report.H_X,
            "H_Q": report.H_Q,
            "H_Q_given_X": report.H_Q_given_X,
            "chi": report.chi,
            "H_X_given_Q": report.H_X_given_Q,
            "H_XQ": report.H_XQ,
            "I_XQ_ehs": report.I_XQ_ehs,
            "H_X_given_Q_definitional": report.H_X_given_Q_definitional,
            "H_X_given_Q_chi_route": report.H_X_given_Q_chi_route,
            "H_X_given_Q_ehs_route": report.H_X_given_Q_ehs_route,
        }
    ]
    for point in corner_points(ctx.e):
        rows.append(
            {"row_type": "corner", "corner": point.name, "rate_x": point.rate_x, "rate_q": point.rate_q, "status": point.status}
        )
    routes = (report.H_X_given_Q_definitional, report.H_X_given_Q_chi_route, report.H_X_given_Q_ehs_route)
    checks = {
        "conditional_entropy_routes_agree": max(routes) - min(routes) <= 1e-8,
        "chi_within_range": -1e-12 <= report.chi <= min(report.H_X, report.H_Q) + 1e-8,
    }
    return rows, checks


def _bounds_row(row_type: str, n: int, delta: float, size: int, mass: float, entropy: float, width: float) -> dict[str, Any]:
    bounds = dimension_bounds(size, n, entropy, width, mass)
    return {
        "row_type": row_type,
        "n": n,
        "delta": delta,
        "size": size,
        "log2_size": bounds.log2_size if size else None,
        "mass": mass,
        "entropy": entropy,
        "width": width,
        "lower": bounds.lower,
        "upper": bounds.upper,
        "finite_lower": bounds.finite_lower if mass > 0.0 else None,
        "upper_ok": bounds.upper_ok,
        "finite_lower_ok": bounds.finite_lower_ok,
        "raw_lower_ok": bounds.raw_lower_ok,
    }


def _typical(ctx: _RunContext) -> tuple[Rows, Checks]:
    cfg = ctx.cfg
    report = entropy_report(ctx.e)
    tset = typical_set(ctx.e.probs, cfg.n, cfg.delta, settings=ctx.settings)
    capture, dim = typical_capture(average_state(ctx.e), cfg.n, cfg.delta)
    rows = [
        _bounds_row("typical_set", cfg.n, cfg.delta, tset.size, tset.total_prob, tset.entropy, tset.delta_prime),
        _bounds_row("typical_subspace", cfg.n, cfg.delta, dim, capture, report.H_Q, cfg.delta),
    ]
    checks = {
        "typical_set_upper_bound": bool(rows[0]["upper_ok"]),
        "typical_set_finite_lower_bound": bool(rows[0]["finite_lower_ok"]),
        "typical_subspace_upper_bound": bool(rows[1]["upper_ok"]),
        "typical_subspace_finite_lower_bound": bool(rows[1]["finite_lower_ok"]),
    }
    return rows, checks


def _build_code(ctx: _RunContext) -> tuple[Rows, Checks]:
    cfg = ctx.cfg
    tset = typical_set(ctx.e.probs, cfg.n, cfg.delta, settings=ctx.settings)
    candidates = [tuple(int(x) for x in row) for row in tset.members]
    code = build_channel_code(ctx.e, cfg.n, cfg.epsilon, cfg.delta, candidates, [cfg.seed, 1], settings=ctx.settings)
    target = 2.0 ** (cfg.n * (entropy_report(ctx.e).chi - cfg.delta))
    rows: Rows = [
        {
            "row_type": "codeword",
            "code_index": 1,
            "codeword": sequence_label(ctx.e, word),
            "error": float(err),
        }
        for word, err in zip(code.codewords, code.per_codeword_error)
    ]
    rows.append(
        {
            "row_type": "code",
            "n": cfg.n,
            "delta": cfg.delta,
            "epsilon": cfg.epsilon,
            "code_index": 1,
            "code_size": code.size,
            "max_error": code.max_error,
            "rate": code.rate,
            "size_target": target,
        }
    )
    return rows, {"max_error_within_epsilon": code.max_error <= cfg.epsilon}


def _cover(ctx: _RunContext) -> CqswCode:
    cfg = ctx.cfg
    return greedy_cover(
        ctx.e,
        cfg.n,
        cfg.epsilon,
        cfg.delta,
        cfg.seed,
        drop_reserved_index=cfg.drop_reserved_index,
        settings=ctx.settings,
    )


def _metric_rows(ctx: _RunContext, code: CqswCode) -> tuple[Rows, Checks, float]:
    """Exact and/or Monte Carlo rows; returns the P_e later stages should use."""
    cfg = ctx.cfg
    rows: Rows = []
    checks: Checks = {}
    exact = None
    p_e = None
    if cfg.mode in ("exact", "both"):
        exact = exact_code_metrics(code, ctx.e, settings=ctx.settings)
        gentle = gentle_measurement_check(exact.epsilon_hat, exact.Delta, epsilon_design=cfg.epsilon)
        rows.append(
            {
                "row_type": "exact",
                "P_e": exact.P_e,
                "Delta": exact.Delta,
                "epsilon_hat": exact.epsilon_hat,
                "mean_deficit": exact.mean_deficit,
                "encoding_error_prob": exact.encoding_error_prob,
                "gentle_bound_measured": gentle.bound_measured,
                "gentle_ok_measured": gentle.pass_measured,
                "gentle_bound_design": gentle.bound_design,
                "gentle_ok_design": gentle.pass_design,
                "gentle_binding": gentle.binding,
            }
        )
        checks["gentle_measurement"] = gentle.verdict
        p_e = exact.P_e
    if cfg.mode in ("mc", "both"):
        summary = run_trials(code, ctx.e, cfg.trials, cfg.seed, keep_records=False, settings=ctx.settings)
        row: dict[str, Any] = {
            "row_type": "mc",
            "P_e": summary.P_e_hat,
            "P_e_stderr": summary.P_e_stderr,
            "Delta": summary.Delta_hat,
            "Delta_stderr": summary.Delta_stderr,
            "trials": summary.trials,
        }
        if exact is not None:
            row["within_3_stderr"] = (
                abs(summary.P_e_hat - exact.P_e) <= 3.0 * summary.P_e_stderr + 1e-12
                and abs(summary.Delta_hat - exact.Delta) <= 3.0 * summary.Delta_stderr + 1e-12
            )
        rows.append(row)
        if p_e is None:
            p_e = summary.P_e_hat
    return rows, checks, float(p_e if p_e is not None else 0.0)


def _code_rows(code: CqswCode) -> Rows:
    return [
        {"row_type": "code", "code_index": idx, "code_size": c.size, "max_error": c.max_error, "rate": c.rate}
        for idx, c in enumerate(code.codes, start=1)
    ]


def _partial_cover_rows(ctx: _RunContext, exc: CoverIncomplete) -> tuple[Rows, Checks]:
    cfg = ctx.cfg
    code: CqswCode = exc.partial
    logger.error("cover: %s", exc)
    head = {
        "row_type": "cover",
        "n": cfg.n,
        "delta": cfg.delta,
        "epsilon": cfg.epsilon,
        "M": code.M,
        "reserved_index": code.reserved_index,
        "rate": code.rate,
        "typical_prob": code.typical_prob,
        "residual_prob": code.uncovered_prob,
        "stop_reason": code.stop_reason,
    }
    return [head, *_code_rows(code)], {"cover_constructed": False}


def _cover_rows(ctx: _RunContext) -> tuple[Rows, Checks]:
    cfg = ctx.cfg
    try:
        code = _cover(ctx)
    except CoverIncomplete as exc:
        return _partial_cover_rows(ctx, exc)
    rows = _code_rows(code)
    metric_rows, checks, p_e = _metric_rows(ctx, code)
    audit = cover_audit(code, ctx.e, p_error=p_e if cfg.mode != "mc" else None)
    rows.insert(
        0,
        {
            "row_type": "cover",
            "n": cfg.n,
            "delta": cfg.delta,
            "epsilon": cfg.epsilon,
            "M": code.M,
            "reserved_index": code.reserved_index,
            "rate": code.rate,
            "typical_prob": code.typical_prob,
            "residual_prob": audit.residual_prob,
            "residual_bound": audit.residual_bound,
            "residual_ok": audit.residual_ok,
            "rate_upper_target": audit.rate_upper_target,
            "rate_within_upper": audit.rate_within_upper,
            "rate_floor": audit.rate_floor,
            "rate_floor_ok": audit.rate_floor_ok,
            "size_target": audit.size_target,
            "sizes_meeting_target": audit.sizes_meeting_target,
            "stop_reason": code.stop_reason,
        },
    )
    rows.extend(metric_rows)
    checks = {
        "code_invariants": not check_code_invariants(code, ctx.e),
        "cover_residual": audit.residual_ok,
        "converse_floor": audit.rate_floor_ok,
        **checks,
    }
    return rows, checks


def _simulate(ctx: _RunContext) -> tuple[Rows, Checks]:
    cfg = ctx.cfg
    code = _cover(ctx)
    metric_rows, checks, _ = _metric_rows(ctx, code)
    head = {"n": cfg.n, "delta": cfg.delta, "epsilon": cfg.epsilon, "M": code.M, "rate": code.rate}
    return [{**head, **row} for row in metric_rows], checks


def _converse(ctx: _RunContext) -> tuple[Rows, Checks]:
    cfg = ctx.cfg
    code = _cover(ctx)
    _, checks, p_e = _metric_rows(ctx, code)
    ledger = converse_audit(code, ctx.e, p_e, exact=cfg.mode != "mc", settings=ctx.settings)
    chain = ledger.chain_values
    row = {
        "row_type": "ledger",
        "n": cfg.n,
        "P_e": p_e,
        "M": code.M,
        "R": ledger.R,
        "H_X": ledger.H_X,
        "chi": ledger.chi,
        "fano_bound": ledger.fano_bound,
        "chain_1": chain[0],
        "chain_2": chain[1],
        "chain_3": chain[2],
        "chain_4": chain[3],
        "H_I": ledger.H_I,
        "I_XJ_given_I": ledger.I_XJ_given_I,
        "H_X_given_IJ": ledger.H_X_given_IJ,
        "chain_monotone": ledger.chain_monotone,
        "fano_consistent": ledger.fano_consistent,
        "verdict": ledger.verdict,
        "omitted_reason": ledger.omitted_reason,
    }
    return [row], {"converse_verdict": ledger.verdict, **checks}


def _bb84_oneshot(ctx: _RunContext) -> tuple[Rows, Checks]:
    report = bb84_oneshot(settings=ctx.settings)
    row = {
        "row_type": "oneshot",
        "M": report.code.M,
        "rate": report.rate,
        "rate_with_reserved": report.rate_with_reserved,
        "P_e": report.metrics.P_e,
        "Delta": report.metrics.Delta,
        "H_X": report.entropies.H_X,
        "chi": report.entropies.chi,
        "H_X_given_Q": report.entropies.H_X_given_Q,
        "benchmark_rate": report.benchmark_rate,
        "chain_1": report.ledger.chain_values[0],
        "chain_4": report.ledger.chain_values[3],
        "verdict": report.ledger.verdict,
    }
    return [row], dict(report.assertions)


def _bb84_measure(ctx: _RunContext) -> tuple[Rows, Checks]:
    report = bb84_measurement_compression()
    rows: Rows = [
        {
            "row_type": "outcome",
            "outcome": o.label,
            "prob_direct": o.prob_direct,
            "prob_simulated": o.prob_simulated,
            "state_gap": o.state_gap,
        }
        for o in report.outcomes
    ]
    rows.append(
        {
            "row_type": "summary",
            "direct_bits": report.direct_bits,
            "communication_bits": report.communication_bits,
            "shared_random_bits": report.shared_random_bits,
            "mutual_information": report.mutual_information,
            "conditional_entropy": report.conditional_entropy,
        }
    )
    return rows, dict(report.assertions)


PIPELINES: dict[str, Callable[[_RunContext], tuple[Rows, Checks]]] = {
    "rates": _rates,
    "typical": _typical,
    "build-code": _build_code,
    "cover": _cover_rows,
    "simulate": _simulate,
    "converse-audit": _converse,
    "bb84-oneshot": _bb84_oneshot,
    "bb84-measure-sim": _bb84_measure,
}


def config_hash(cfg: RunConfig, ensemble: CqEnsemble | None) -> str:
    payload = cfg.model_dump()
    payload["ensemble"] = ensemble_hash(ensemble) if ensemble is not None else None
    return canonical_payload_hash(payload)


def run_experiment(cfg: RunConfig, ensemble: CqEnsemble | None = None, *, settings: Settings | None = None) -> RunResult:
    """Run one subcommand, then write ``<out>/<subcommand>.csv`` and its manifest.

    Errors raised by the pipeline propagate and leave no files behind, except
    a cover that stops early: its partial codes are written with stop_reason
    ``constructor-failed`` and the failed ``cover_constructed`` check.
    The exit code is 3 when any enabled assertion fails.
    """
    if ensemble is None and cfg.ensemble and cfg.subcommand in NEEDS_ENSEMBLE:
        ensemble = resolve_ensemble(cfg.ensemble)
    clock = RunClock()
    ctx = _RunContext(cfg=cfg, ensemble=ensemble, settings=cfg.settings(settings))
    rows, assertions = PIPELINES[cfg.subcommand](ctx)

    digest = config_hash(cfg, ensemble)
    prefix = {"schema_version": RESULTS_SCHEMA_VERSION, "config_hash": digest, "seed": cfg.seed}
    rows = [{**prefix, **row} for row in rows]
    exit_code = EXIT_OK if all(assertions.values()) else EXIT_ASSERTION
    if exit_code != EXIT_OK:
        failed = sorted(name for name, ok in assertions.items() if not ok)
        logger.warning("%s: assertions failed: %s", cfg.subcommand, ", ".join(failed))

    csv_path = write_results_csv(cfg.out, cfg.subcommand, rows)
    manifest = {
        "artifact_version": __version__,
        "results_schema_version": RESULTS_SCHEMA_VERSION,
        "subcommand": cfg.subcommand,
        "config": cfg.model_dump(),
        "config_hash": digest,
        "seed": cfg.seed,
        "ensemble": serialize_ensemble(ensemble) if ensemble is not None else None,
        "ensemble_hash": ensemble_hash(ensemble) if ensemble is not None else None,
        "assertions": assertions,
        "exit_code": exit_code,
        "instrument": INSTRUMENT,
        "created_at": clock.started_at,
        "elapsed_seconds": clock.elapsed_seconds(),
    }
    manifest_path = write_manifest(cfg.out, cfg.subcommand, manifest)
    logger.info("%s finished with exit code %d: %s", cfg.subcommand, exit_code, csv_path)
    return RunResult(
        subcommand=cfg.subcommand,
        config_hash=digest,
        rows=rows,
        assertions=assertions,
        exit_code=exit_code,
        csv_path=csv_path,
        manifest_path=manifest_path,
    )
