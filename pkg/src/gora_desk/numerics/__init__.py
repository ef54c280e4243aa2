"""Dense numerics: matrix helpers, factorizations, seeded sampling, GMAT codec."""

from .gmat import decode_matrix, encode_matrix, read_matrix, write_matrix
from .linalg import (
    Matrix,
    as_matrix,
    cholesky_solve,
    frobenius,
    hadamard_abs_avg,
    jacobi_singular_values,
    matmul,
    nuclear_norm,
    projector,
)
from .rng import (
    Rng,
    derive_seed,
    kaiming_bound,
    sample_gaussian,
    sample_kaiming_uniform,
)

__all__ = [
    "Matrix",
    "Rng",
    "as_matrix",
    "cholesky_solve",
    "decode_matrix",
    "derive_seed",
    "encode_matrix",
    "frobenius",
    "hadamard_abs_avg",
    "jacobi_singular_values",
    "kaiming_bound",
    "matmul",
    "nuclear_norm",
    "projector",
    "read_matrix",
    "sample_gaussian",
    "sample_kaiming_uniform",
    "write_matrix",
]
