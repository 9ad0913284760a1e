"""Born rule and the square-root (Lüders-type) instrument."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from cqsw.core.errors import ValidationFailure
from cqsw.services.linalg import (
    COMPLETENESS_TOL,
    ComplexMatrix,
    DensityOperator,
    Povm,
    as_matrix,
    is_psd,
    psd_sqrt,
)


INSTRUMENT = "sqrt-kraus"
UNDEFINED_PROB = 1e-12


@dataclass(frozen=True, eq=False)
class PostMeasurement:
    prob: float
    state: DensityOperator | None

    @property
    def defined(self) -> bool:
        return self.state is not None


def kraus_roots(povm: Povm) -> tuple[ComplexMatrix, ...]:
    return tuple(psd_sqrt(element) for element in povm.elements)


def born_probabilities(rho: npt.ArrayLike | DensityOperator, povm: Povm) -> npt.NDArray[np.float64]:
    r = as_matrix(rho)
    if r.shape != (povm.dim, povm.dim):
        raise ValidationFailure(f"state dim {r.shape[0]} does not match POVM dim {povm.dim}")
    # Tr(rho L) = sum_ij rho_ij L_ji
    probs = np.array([np.real(np.sum(r * element.T)) for element in povm.elements], dtype=np.float64)
    return np.clip(probs, 0.0, None)


def outcome_averaged_state(
    rho: npt.ArrayLike | DensityOperator,
    povm: Povm,
    roots: tuple[ComplexMatrix, ...] | None = None,
) -> ComplexMatrix:
    """sum_j sqrt(L_j) rho sqrt(L_j), the residual state with the outcome forgotten."""
    r = as_matrix(rho)
    if r.shape != (povm.dim, povm.dim):
        raise ValidationFailure(f"state dim {r.shape[0]} does not match POVM dim {povm.dim}")
    roots = roots if roots is not None else kraus_roots(povm)
    out = np.zeros_like(r)
    for k in roots:
        out += k @ r @ k
    return out


def post_measurement_state(rho: npt.ArrayLike | DensityOperator, element: npt.ArrayLike) -> PostMeasurement:
    r = as_matrix(rho)
    lam = as_matrix(element)
    if r.shape != lam.shape:
        raise ValidationFailure(f"dimension mismatch: state {r.shape} vs element {lam.shape}")
    if not is_psd(lam):
        raise ValidationFailure("measurement element is not Hermitian PSD within 1e-10")
    if np.linalg.eigvalsh((lam + lam.conj().T) / 2.0).max() > 1.0 + COMPLETENESS_TOL:
        raise ValidationFailure("measurement element exceeds the identity")
    prob = float(np.real(np.trace(r @ lam)))
    if prob <= UNDEFINED_PROB:
        return PostMeasurement(prob=max(prob, 0.0), state=None)
    k = psd_sqrt(lam)
    post = k @ r @ k / prob
    return PostMeasurement(prob=prob, state=DensityOperator(matrix=(post + post.conj().T) / 2.0))
