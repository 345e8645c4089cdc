"""Shared numerical kernels: SPD solves and Khatri-Rao Gram shortcuts."""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = ["NumericalError", "solve_spd", "kr_gram"]


class NumericalError(RuntimeError):
    """A linear solve or factorization failed (non-finite or non-SPD input)."""


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m @ x = rhs`` for symmetric positive-definite ``m``.

    Uses a Cholesky factorization and surfaces failure as
    :class:`NumericalError`; there is deliberately no pseudo-inverse
    fallback.
    """
    m = np.asarray(m, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if not np.isfinite(m).all() or not np.isfinite(rhs).all():
        raise NumericalError("non-finite values in linear system")
    try:
        factor = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorization failed: {exc}") from exc
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


def kr_gram(outer_gram, block_gram, width: int) -> np.ndarray:
    """Gram matrix of a partition-wise Khatri-Rao product.

    For ``P = khatri_rao(F, G, R)`` with F holding R blocks of ``width``
    columns and G holding R single columns,

        P.T @ P == (F.T @ F) * kron(G.T @ G, ones((width, width)))

    which this computes from the two small Grams directly.
    """
    expand = np.kron(np.asarray(block_gram, dtype=np.float64), np.ones((width, width)))
    return np.asarray(outer_gram, dtype=np.float64) * expand
