"""Dense matrix/vector arithmetic used by every numerical module.

Matrices are 2-D float64 numpy arrays in row-major (C) order, rows are
training cases and columns are units. Vectors are 1-D float64 arrays.
All operations return fresh arrays and never mutate their inputs, so
values can be shared freely between workers.
"""

import numpy as np

from .errors import ShapeError

Matrix = np.ndarray
Vector = np.ndarray


def matrix(data) -> Matrix:
    """Build a matrix from nested lists (or anything array-like)."""
    m = np.array(data, dtype=np.float64, order="C")
    if m.ndim != 2:
        raise ShapeError(f"matrix needs 2 dimensions, got {m.ndim}")
    return m


def vector(data) -> Vector:
    v = np.array(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"vector needs 1 dimension, got {v.ndim}")
    return v


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def _check_2d(m: Matrix, name: str = "operand") -> None:
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ShapeError(f"{name} is not a 2-D matrix")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    _check_2d(a, "left operand")
    _check_2d(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul shapes do not chain: {a.shape[0]}x{a.shape[1]} by "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def sigmoid_map(m: np.ndarray) -> np.ndarray:
    """Elementwise logistic 1/(1+exp(-x)).

    Evaluated via exp(-|x|) so it saturates smoothly instead of
    overflowing for large |x|.
    """
    m = np.asarray(m, dtype=np.float64)
    z = np.exp(-np.abs(m))
    return np.where(m >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _check_same_shape(m: Matrix, n: Matrix) -> None:
    if m.shape != n.shape:
        raise ShapeError(f"shape mismatch: {m.shape} vs {n.shape}")


def elementwise(m: Matrix, n: Matrix, op: str) -> Matrix:
    _check_same_shape(m, n)
    if op == "add":
        return m + n
    if op == "sub":
        return m - n
    if op == "mul":
        return m * n
    raise ValueError(f"unknown elementwise op {op!r}")


def add(m: Matrix, n: Matrix) -> Matrix:
    return elementwise(m, n, "add")


def sub(m: Matrix, n: Matrix) -> Matrix:
    return elementwise(m, n, "sub")


def mul(m: Matrix, n: Matrix) -> Matrix:
    return elementwise(m, n, "mul")


def transpose(m: Matrix) -> Matrix:
    _check_2d(m)
    return np.ascontiguousarray(m.T)


def scale(m: np.ndarray, c: float) -> np.ndarray:
    return m * float(c)


def row_sums(m: Matrix) -> Vector:
    _check_2d(m)
    return m.sum(axis=1)


def outer(u: Vector, v: Vector) -> Matrix:
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError("outer product needs two vectors")
    return np.outer(u, v)
