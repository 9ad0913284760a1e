from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np
from jsonschema.exceptions import best_match
from jsonschema.validators import Draft202012Validator

from cqsw.core.errors import EnsembleFormatError, ValidationFailure
from cqsw.core.hashing import canonical_payload_hash
from cqsw.services.ensembles import KETS, PRESET_ENSEMBLES, CqEnsemble, make_ensemble, validate_probs
from cqsw.services.linalg import ComplexMatrix, density_operator, ket_projector


SCHEMA_NAME = "ensemble.json"
_SCHEMA_DIRS = (
    Path(__file__).resolve().parents[2] / "schemas",
    Path(__file__).resolve().parents[1] / "schemas",
)


@lru_cache(maxsize=1)
def ensemble_schema() -> dict[str, Any]:
    for folder in _SCHEMA_DIRS:
        path = folder / SCHEMA_NAME
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
    raise FileNotFoundError(f"{SCHEMA_NAME} not found in {[str(p) for p in _SCHEMA_DIRS]}")


def _schema_error(document: Any) -> EnsembleFormatError | None:
    validator = Draft202012Validator(ensemble_schema())
    error = best_match(validator.iter_errors(document))
    if error is None:
        return None
    path = ".".join(str(part) for part in error.absolute_path)
    return EnsembleFormatError(error.message, field_path=path or "$")


def _format_error(exc: ValidationFailure) -> EnsembleFormatError:
    return EnsembleFormatError(exc.message, field_path=exc.field_path)


def state_preset(name: str) -> ComplexMatrix:
    if name == "mixed":
        return np.eye(2, dtype=np.complex128) / 2.0
    if name not in KETS:
        raise EnsembleFormatError(f"unknown state preset {name!r}")
    return ket_projector(KETS[name])


def _matrix(rows: list[list[list[float]]], path: str) -> ComplexMatrix:
    widths = {len(row) for row in rows}
    if len(widths) != 1 or widths.pop() != len(rows):
        raise EnsembleFormatError("expected a square matrix of [re, im] pairs", field_path=path)
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=np.complex128)


def ensemble_from_document(document: Any) -> CqEnsemble:
    failure = _schema_error(document)
    if failure is not None:
        raise failure
    if "preset" in document:
        return PRESET_ENSEMBLES[document["preset"]]()

    alphabet = document["alphabet"]
    states_doc = document["states"]
    if len(document["probs"]) != len(alphabet):
        raise EnsembleFormatError(f"has {len(document['probs'])} entries for {len(alphabet)} symbols", field_path="probs")
    if len(states_doc) != len(alphabet):
        raise EnsembleFormatError(f"has {len(states_doc)} entries for {len(alphabet)} symbols", field_path="states")
    try:
        probs = validate_probs(document["probs"], field_path="probs")
    except ValidationFailure as exc:
        raise _format_error(exc) from exc

    states = []
    for idx, item in enumerate(states_doc):
        if "preset" in item:
            matrix = state_preset(item["preset"])
        else:
            matrix = _matrix(item["matrix"], f"states.{idx}.matrix")
        try:
            states.append(density_operator(matrix, field_path=f"states.{idx}"))
        except ValidationFailure as exc:
            raise _format_error(exc) from exc
    try:
        return make_ensemble(alphabet, probs, states)
    except ValidationFailure as exc:
        raise _format_error(exc) from exc


def parse_ensemble(path: str | Path) -> CqEnsemble:
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise EnsembleFormatError(f"ensemble file not found: {source}") from exc
    except UnicodeDecodeError as exc:
        raise EnsembleFormatError(f"ensemble file is not UTF-8: {source}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnsembleFormatError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", field_path="$") from exc
    return ensemble_from_document(document)


def serialize_ensemble(e: CqEnsemble, *, name: str | None = None) -> dict[str, Any]:
    """Explicit-matrix document; floats survive a JSON round trip unchanged."""
    document: dict[str, Any] = {}
    if name:
        document["name"] = name
    document["alphabet"] = list(e.alphabet)
    document["probs"] = [float(p) for p in e.probs]
    document["states"] = [
        {"matrix": [[[float(z.real), float(z.imag)] for z in row] for row in state.matrix]}
        for state in e.states
    ]
    return document


def dump_ensemble(e: CqEnsemble, path: str | Path, *, name: str | None = None) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(serialize_ensemble(e, name=name), indent=2) + "\n", encoding="utf-8")
    return target


def ensemble_hash(e: CqEnsemble) -> str:
    return canonical_payload_hash(serialize_ensemble(e))
