"""
Dense float64 linear algebra helpers and the seeded random streams every
other module draws from.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np
import numpy.typing as npt

from fedsim.errors import ConfigurationError, NonFiniteError

Matrix = npt.NDArray[np.float64]
"""A 2-D, row-major float64 array."""

_MASK64 = (1 << 64) - 1


def ensure_finite(values: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Raise `NonFiniteError` if `values` holds NaN or Inf."""
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} contains non-finite values")

    return values


def as_matrix(
    values: Union[npt.ArrayLike, Matrix],
    rows: Union[int, None] = None,
    cols: Union[int, None] = None,
) -> Matrix:
    """
    Coerce values into a C-ordered float64 matrix.

    Args:
        values: Anything numpy can turn into a 2-D array.
        rows: Expected row count, if known.
        cols: Expected column count, if known.

    Returns:
        The validated matrix.
    """
    matrix = np.ascontiguousarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ConfigurationError(f"Expected a 2-D matrix, got {matrix.ndim} dimension(s)")

    if rows is not None and matrix.shape[0] != rows:
        raise ConfigurationError(f"Expected {rows} rows, got {matrix.shape[0]}")

    if cols is not None and matrix.shape[1] != cols:
        raise ConfigurationError(f"Expected {cols} columns, got {matrix.shape[1]}")

    return ensure_finite(matrix)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """
    Matrix product with float64 accumulation.

    Raises:
        ConfigurationError: When `a.cols != b.rows`.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(
            f"Cannot multiply a {a.shape[0]}x{a.shape[1]} matrix"
            f" by a {b.shape[0]}x{b.shape[1]} matrix"
        )

    return ensure_finite(a @ b, "matmul result")


class SeededRng:
    """
    A reproducible random stream identified by `(seed, stream_id)`.

    Draws come from numpy's counter-based Philox generator keyed by the
    128-bit value `(stream_id << 64) | seed`, so a stream yields the same
    sequence on every platform. Streams are not thread-safe; hand every
    parallel task its own stream via `split`.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= seed <= _MASK64 or not 0 <= stream_id <= _MASK64:
            raise ConfigurationError("seed and stream_id must be unsigned 64-bit integers")

        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._generator = np.random.Generator(
            np.random.Philox(key=(self.stream_id << 64) | self.seed)
        )

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id})"

    def split(self, label: str) -> SeededRng:
        """
        Derive an independent child stream.

        The child depends only on `(seed, stream_id, label)`, never on how many
        values this stream has produced.
        """
        digest = hashlib.blake2b(
            f"{self.seed}:{self.stream_id}:{label}".encode(), digest_size=8
        ).digest()
        return SeededRng(self.seed, int.from_bytes(digest, "little"))

    def uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> npt.NDArray[np.float64]:
        """Draw `n` values from `[lo, hi)`."""
        if not lo < hi:
            raise ConfigurationError(f"uniform() needs lo < hi, got lo={lo}, hi={hi}")

        if n < 0:
            raise ConfigurationError(f"Cannot draw {n} values")

        return self._generator.uniform(lo, hi, size=n)

    def normal(self, size) -> np.ndarray:
        """Standard normal draws of the given shape."""
        return self._generator.standard_normal(size)

    def permutation(self, n: int) -> npt.NDArray[np.int64]:
        """A random permutation of `range(n)`."""
        return self._generator.permutation(n).astype(np.int64)

    def integers(self, high: int, size=None):
        """Integers drawn uniformly from `[0, high)`."""
        return self._generator.integers(0, high, size=size)
