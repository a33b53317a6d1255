"""Row reduction with an explicit, relative pivot threshold.

All "with probability one" rank statements in this package are evaluated
through :func:`numerical_rank`, so the threshold lives in one place.
"""

import numpy as np

from .errors import InvalidInputError

#: Pivots smaller than ``RANK_TOL * max|A|`` are treated as zero.
RANK_TOL = 1e-10


def _as_finite_matrix(matrix):
    a = np.array(matrix, dtype=float, copy=True)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def rref(matrix, tol=RANK_TOL):
    """Reduced row echelon form by Gauss-Jordan elimination.

    Partial pivoting picks the largest remaining entry of each column; a
    column whose best pivot is below ``tol * max|A|`` is skipped and its
    remaining entries are zeroed.

    Parameters
    ----------
    matrix : array_like, shape (n, m)
    tol : float
        Relative pivot threshold.

    Returns
    -------
    E : ndarray, shape (n, m)
        The echelon form; rows past ``len(pivots)`` are exactly zero.
    pivots : list of int
        Pivot column of each nonzero row of ``E``, in row order.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    a = _as_finite_matrix(matrix)
    n_rows, n_cols = a.shape
    if a.size == 0:
        return a, []
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return np.zeros_like(a), []
    thresh = tol * scale

    pivots = []
    r = 0
    for c in range(n_cols):
        if r == n_rows:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= thresh:
            a[r:, c] = 0.0
            continue
        if p != r:
            a[[r, p], c:] = a[[p, r], c:]
        a[r, c:] /= a[r, c]
        col = a[:, c].copy()
        col[r] = 0.0
        a[:, c:] -= np.outer(col, a[r, c:])
        a[:, c] = 0.0
        a[r, c] = 1.0
        pivots.append(c)
        r += 1
    a[r:, :] = 0.0
    # entries that were only rounding noise after elimination
    a[np.abs(a) <= tol * max(1.0, np.max(np.abs(a)))] = 0.0
    return a, pivots


def numerical_rank(matrix, tol=RANK_TOL):
    """Number of pivots found by :func:`rref` with relative threshold ``tol``."""
    return len(rref(matrix, tol)[1])


def in_row_space(echelon, pivots, index, tol=RANK_TOL):
    """Whether the ``index``-th standard basis row lies in the row space of
    the matrix whose RREF is ``(echelon, pivots)``.

    Reducing ``e_index`` against the echelon rows leaves a zero residual iff
    ``index`` is a pivot column whose row has no weight on free columns, i.e.
    appending the basis row would not raise the rank.
    """
    if index not in pivots:
        return False
    row = echelon[pivots.index(index)]
    free = np.ones(row.shape[0], dtype=bool)
    free[pivots] = False
    return not np.any(np.abs(row[free]) > tol * max(1.0, np.max(np.abs(row))))
