"""Dense matrix arithmetic and the small factorizations used across gora-desk."""

import logging

import numpy as np
from numpy.typing import NDArray

from ..errors import DimensionCapError, GramSingularError, ShapeMismatchError

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]

JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100
SVD_DIMENSION_CAP = 512


def as_matrix(value: object, name: str = "matrix") -> Matrix:
    """Coerce a value into a 2-D float64 array.

    Raises:
        ShapeMismatchError: If the value is not two-dimensional.
    """
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {array.shape}")
    return array


def _require_same_shape(a: Matrix, b: Matrix, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product with an explicit shape check.

    Examples:
        >>> matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[2.0, 4.0], [6.0, 8.0]]))
        array([[2., 4.],
               [0., 0.]])
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: cannot multiply {a.shape} by {b.shape} "
            f"(a.cols={a.shape[1]} != b.rows={b.shape[0]})"
        )
    return a @ b


def hadamard_abs_avg(w: Matrix, g: Matrix) -> float:
    """Mean of the element-wise |w * g|."""
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    _require_same_shape(w, g, "hadamard_abs_avg")
    if w.size == 0:
        return 0.0
    return float(np.mean(np.abs(w * g)))


def frobenius(a: Matrix) -> float:
    """Frobenius norm."""
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64).ravel()))


def jacobi_singular_values(
    a: Matrix,
    tolerance: float = JACOBI_TOLERANCE,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> NDArray[np.float64]:
    """Singular values by one-sided (Hestenes) Jacobi rotations.

    Columns are rotated pairwise until every pair is orthogonal to within
    `tolerance` relative to the column norms; the column norms are then the
    singular values. Wide matrices are transposed first so the number of
    columns is min(rows, cols).

    Args:
        a: Input matrix.
        tolerance: Largest accepted |<u_i, u_j>| / (|u_i| |u_j|).
        max_sweeps: Upper bound on full sweeps over all column pairs.

    Returns:
        Singular values in descending order.
    """
    work = as_matrix(a, "a")
    if work.shape[1] > work.shape[0]:
        work = work.T
    work = np.array(work, dtype=np.float64, copy=True)
    n_cols = work.shape[1]

    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n_cols - 1):
            for j in range(i + 1, n_cols):
                col_i = work[:, i]
                col_j = work[:, j]
                alpha = float(col_i @ col_i)
                beta = float(col_j @ col_j)
                gamma = float(col_i @ col_j)
                if alpha == 0.0 or beta == 0.0 or gamma == 0.0:
                    continue
                off = max(off, abs(gamma) / np.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                rotated_i = c * col_i - s * col_j
                rotated_j = s * col_i + c * col_j
                work[:, i] = rotated_i
                work[:, j] = rotated_j
        if off < tolerance:
            break
    else:
        logger.warning(
            "Jacobi SVD stopped before convergence",
            extra={"result": {"sweeps": max_sweeps, "off_diagonal": off}},
        )

    values = np.linalg.norm(work, axis=0)
    return np.sort(values)[::-1]


def nuclear_norm(a: Matrix, dimension_cap: int = SVD_DIMENSION_CAP) -> float:
    """Sum of singular values.

    Raises:
        DimensionCapError: If min(rows, cols) exceeds `dimension_cap`.
    """
    a = as_matrix(a, "a")
    if min(a.shape) > dimension_cap:
        raise DimensionCapError(
            f"nuclear_norm: min dimension {min(a.shape)} of {a.shape} "
            f"exceeds the dense SVD cap of {dimension_cap}"
        )
    if a.size == 0:
        return 0.0
    return float(np.sum(jacobi_singular_values(a)))


def cholesky_solve(spd: Matrix, rhs: Matrix) -> Matrix:
    """Solve spd @ X = rhs through a Cholesky factorization.

    Raises:
        ShapeMismatchError: If spd is not square or rhs rows do not match.
        GramSingularError: If a Cholesky pivot is not positive.
    """
    spd = as_matrix(spd, "spd")
    rhs = as_matrix(rhs, "rhs")
    if spd.shape[0] != spd.shape[1]:
        raise ShapeMismatchError(f"cholesky_solve: spd must be square, got {spd.shape}")
    if rhs.shape[0] != spd.shape[0]:
        raise ShapeMismatchError(
            f"cholesky_solve: spd {spd.shape} incompatible with rhs {rhs.shape}"
        )
    try:
        lower = np.linalg.cholesky(spd)
    except np.linalg.LinAlgError as e:
        raise GramSingularError(
            f"Gram matrix singular (non-positive Cholesky pivot) for {spd.shape} "
            "system; re-seed A0"
        ) from e
    if not np.all(np.diag(lower) > 0.0):
        raise GramSingularError(
            f"Gram matrix singular (zero Cholesky pivot) for {spd.shape} system; "
            "re-seed A0"
        )
    y = np.linalg.solve(lower, rhs)
    return np.linalg.solve(lower.T, y)


def projector(a: Matrix) -> Matrix:
    """Orthogonal projector A (A^T A)^-1 A^T onto the column space of A."""
    a = as_matrix(a, "a")
    return a @ cholesky_solve(a.T @ a, a.T)
