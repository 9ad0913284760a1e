"""Dense complex Hermitian linear algebra for small Hilbert spaces.

Matrices are plain ``numpy`` arrays of ``complex128``; the dataclasses below
only add validated meaning (a state, a measurement, a spectrum) on top.
"""

from __future__ import annotations

from collections.abc import Callable, Hashable, Iterable, Sequence
from dataclasses import dataclass
from functools import reduce

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.stats

from cqsw.core.errors import ValidationFailure


ComplexMatrix = npt.NDArray[np.complex128]

HERMITIAN_TOL = 1e-10
COMPLETENESS_TOL = 1e-8
PINV_CUTOFF = 1e-12
DEGENERACY_TOL = 1e-9
# minimum residual norm for a canonical basis vector to open a new direction
_PIVOT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DensityOperator:
    matrix: ComplexMatrix

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


@dataclass(frozen=True, eq=False)
class Povm:
    elements: tuple[ComplexMatrix, ...]
    labels: tuple[Hashable, ...]

    @property
    def dim(self) -> int:
        return int(self.elements[0].shape[0])

    def __len__(self) -> int:
        return len(self.elements)


@dataclass(frozen=True, eq=False)
class HermitianSpectrum:
    eigenvalues: npt.NDArray[np.float64]
    eigenvectors: ComplexMatrix

    def reconstruct(self) -> ComplexMatrix:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def as_matrix(m: npt.ArrayLike | DensityOperator) -> ComplexMatrix:
    if isinstance(m, DensityOperator):
        return m.matrix
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValidationFailure(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def _require_square(m: ComplexMatrix) -> int:
    rows, cols = m.shape
    if rows != cols:
        raise ValidationFailure(f"expected a square matrix, got {rows}x{cols}")
    return int(rows)


def is_hermitian(m: npt.ArrayLike, tol: float = HERMITIAN_TOL) -> bool:
    arr = as_matrix(m)
    if arr.shape[0] != arr.shape[1]:
        return False
    return bool(np.max(np.abs(arr - arr.conj().T), initial=0.0) <= tol)


def _eigh(m: ComplexMatrix) -> tuple[npt.NDArray[np.float64], ComplexMatrix]:
    # symmetrize so round-off asymmetry never leaks into the spectrum
    herm = (m + m.conj().T) / 2.0
    w, v = scipy.linalg.eigh(herm)
    return np.asarray(w, dtype=np.float64), np.asarray(v, dtype=np.complex128)


def _eigvalsh(m: ComplexMatrix) -> npt.NDArray[np.float64]:
    herm = (m + m.conj().T) / 2.0
    return np.asarray(scipy.linalg.eigvalsh(herm), dtype=np.float64)


def is_psd(m: npt.ArrayLike, tol: float = HERMITIAN_TOL) -> bool:
    arr = as_matrix(m)
    if not is_hermitian(arr, tol):
        return False
    return bool(_eigvalsh(arr).min(initial=0.0) >= -tol)


def _canonical_block(block: ComplexMatrix) -> ComplexMatrix:
    """Orthonormal basis of span(block) built by Gram-Schmidt on e_0, e_1, ...

    The projector P onto the block maps e_k to block @ c_k with
    c_k = conj(block[k]); orthogonalizing the c_k inside the block's own
    coordinates gives the same vectors at a fraction of the cost.
    """
    dim, size = block.shape
    if size == dim:
        return np.eye(dim, dtype=np.complex128)
    coeffs = block.conj()
    found = np.zeros((size, 0), dtype=np.complex128)
    for k in range(dim):
        c = coeffs[k].copy()
        if found.shape[1]:
            c -= found @ (found.conj().T @ c)
        norm = float(np.linalg.norm(c))
        if norm <= _PIVOT_TOL:
            continue
        found = np.column_stack([found, c / norm])
        if found.shape[1] == size:
            break
    return block @ found


def eig_hermitian(m: npt.ArrayLike) -> HermitianSpectrum:
    """Full spectrum with eigenvalues descending and a deterministic basis.

    Inside every degenerate block (eigenvalue gap at most ``DEGENERACY_TOL``)
    the eigenvectors are replaced by Gram-Schmidt of the canonical basis
    vectors projected onto the block, in index order. Non-degenerate
    eigenvectors go through the same rule, which fixes their phase.
    """
    arr = as_matrix(m)
    _require_square(arr)
    if not is_hermitian(arr):
        raise ValidationFailure("matrix is not Hermitian within 1e-10")
    w, v = _eigh(arr)
    w = w[::-1].copy()
    v = v[:, ::-1].copy()

    start = 0
    dim = len(w)
    while start < dim:
        stop = start + 1
        while stop < dim and w[stop - 1] - w[stop] <= DEGENERACY_TOL * max(1.0, abs(w[stop - 1])):
            stop += 1
        v[:, start:stop] = _canonical_block(v[:, start:stop])
        start = stop
    return HermitianSpectrum(eigenvalues=w, eigenvectors=v)


def psd_function(
    m: npt.ArrayLike,
    func: Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
    *,
    zero_below: float | None = None,
) -> ComplexMatrix:
    # eigenvalues <= zero_below map to 0 (pseudo-inverse convention)
    arr = as_matrix(m)
    _require_square(arr)
    if not is_hermitian(arr):
        raise ValidationFailure("matrix is not Hermitian within 1e-10")
    w, v = _eigh(arr)
    if w.min(initial=0.0) < -HERMITIAN_TOL:
        raise ValidationFailure(f"matrix has negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    values = np.zeros_like(w)
    keep = np.ones_like(w, dtype=bool) if zero_below is None else w > zero_below
    values[keep] = func(w[keep])
    return (v * values) @ v.conj().T


def psd_sqrt(m: npt.ArrayLike) -> ComplexMatrix:
    return psd_function(m, np.sqrt)


def psd_inv_sqrt(m: npt.ArrayLike, cutoff: float = PINV_CUTOFF) -> ComplexMatrix:
    return psd_function(m, lambda w: 1.0 / np.sqrt(w), zero_below=cutoff)


def tensor_product(a: npt.ArrayLike, b: npt.ArrayLike) -> ComplexMatrix:
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(mats: Iterable[npt.ArrayLike]) -> ComplexMatrix:
    items = [as_matrix(m) for m in mats]
    if not items:
        return np.ones((1, 1), dtype=np.complex128)
    return reduce(np.kron, items)


def tensor_power(m: npt.ArrayLike, n: int) -> ComplexMatrix:
    if n < 0:
        raise ValidationFailure(f"tensor power must be >= 0, got {n}")
    return kron_all([m] * n)


def partial_trace(m: npt.ArrayLike, dims: Sequence[int], keep: Iterable[int]) -> ComplexMatrix:
    arr = as_matrix(m)
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims):
        raise ValidationFailure(f"subsystem dims must be positive, got {dims}")
    total = int(np.prod(dims))
    if arr.shape != (total, total):
        raise ValidationFailure(f"dims {dims} do not match matrix shape {arr.shape}")
    kept = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in kept):
        raise ValidationFailure(f"keep indices {kept} out of range for {len(dims)} subsystems")

    count = len(dims)
    tensor = arr.reshape(dims + dims)
    rows = list(range(count))
    cols = [count + i if i in kept else i for i in range(count)]
    out = [i for i in kept] + [count + i for i in kept]
    reduced = np.einsum(tensor, rows + cols, out)
    kept_dim = int(np.prod([dims[i] for i in kept])) if kept else 1
    return np.asarray(reduced, dtype=np.complex128).reshape(kept_dim, kept_dim)


def density_operator(matrix: npt.ArrayLike, *, field_path: str | None = None) -> DensityOperator:
    try:
        arr = as_matrix(matrix)
        _require_square(arr)
    except ValidationFailure as exc:
        raise ValidationFailure(str(exc), field_path=field_path) from exc
    if not is_hermitian(arr):
        raise ValidationFailure("density operator is not Hermitian within 1e-10", field_path=field_path)
    trace = complex(np.trace(arr))
    if abs(trace - 1.0) > HERMITIAN_TOL:
        raise ValidationFailure(
            f"density operator must have unit trace, got {trace.real:.12g}",
            field_path=field_path,
        )
    lowest = float(_eigvalsh(arr).min())
    if lowest < -HERMITIAN_TOL:
        raise ValidationFailure(
            f"density operator is not positive semidefinite (eigenvalue {lowest:.3e})",
            field_path=field_path,
        )
    return DensityOperator(matrix=arr.copy())


def validate_povm(
    elements: Sequence[npt.ArrayLike],
    labels: Sequence[Hashable] | None = None,
) -> Povm:
    if not elements:
        raise ValidationFailure("a POVM needs at least one element")
    mats = [as_matrix(e) for e in elements]
    dim = _require_square(mats[0])
    for idx, mat in enumerate(mats):
        if mat.shape != (dim, dim):
            raise ValidationFailure(f"element {idx} has shape {mat.shape}, expected {(dim, dim)}")
        if not is_psd(mat):
            raise ValidationFailure(f"element {idx} is not Hermitian PSD within 1e-10")
    total = np.sum(mats, axis=0)
    gap = float(np.max(np.abs(total - np.eye(dim))))
    if gap > COMPLETENESS_TOL:
        raise ValidationFailure(f"POVM elements do not sum to identity (max deviation {gap:.3e})")
    if labels is None:
        labels = list(range(len(mats)))
    if len(labels) != len(mats):
        raise ValidationFailure(f"{len(labels)} labels for {len(mats)} POVM elements")
    return Povm(elements=tuple(mats), labels=tuple(labels))


def ket_projector(vec: npt.ArrayLike) -> ComplexMatrix:
    v = np.asarray(vec, dtype=np.complex128).reshape(-1)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValidationFailure("cannot project onto the zero vector")
    v = v / norm
    return np.outer(v, v.conj())


def trace_distance(rho: npt.ArrayLike | DensityOperator, sigma: npt.ArrayLike | DensityOperator) -> float:
    a = as_matrix(rho)
    b = as_matrix(sigma)
    if a.shape != b.shape:
        raise ValidationFailure(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(np.abs(_eigvalsh(a - b))))


def von_neumann_entropy(rho: npt.ArrayLike | DensityOperator) -> float:
    w = np.clip(_eigvalsh(as_matrix(rho)), 0.0, None)
    if not np.any(w > 0.0):
        return 0.0
    return max(0.0, float(scipy.stats.entropy(w, base=2)))


def purification(rho: npt.ArrayLike | DensityOperator) -> npt.NDArray[np.complex128]:
    """Schmidt-form purification sum_i sqrt(r_i) |i>|i> in the canonical eigenbasis of rho."""
    spectrum = eig_hermitian(as_matrix(rho))
    r = np.clip(spectrum.eigenvalues, 0.0, None)
    v = spectrum.eigenvectors
    dim = v.shape[0]
    psi = np.zeros(dim * dim, dtype=np.complex128)
    for i, weight in enumerate(r):
        if weight <= 0.0:
            continue
        psi += np.sqrt(weight) * np.kron(v[:, i], v[:, i])
    return psi
