"""Sparse symmetric solves and the small dense 2x2 toolkit."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrixError, SolverError

RESIDUAL_TOL = 1e-10
DET_TOL = 1e-12


class SpdFactorization:
    """One-shot factorization of a sparse SPD matrix, reused across solves.

    Wraps a sparse LU with a deterministic ordering; every solve is checked
    against the relative-residual contract.
    """

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        asym = abs(A - A.T)
        if asym.nnz and asym.max() > 1e-12 * max(abs(A).max(), 1.0):
            raise SolverError("matrix is not symmetric")
        self._A = A
        try:
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:  # singular factorization
            raise SolverError(f"factorization failed: {exc}") from exc
        diag = self._lu.U.diagonal()
        bad = np.flatnonzero(~(np.abs(diag) > 0.0))
        if bad.size:
            raise SolverError("zero pivot during factorization", index=int(bad[0]))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x))[0])
            raise SolverError("non-finite solution component", index=bad)
        bnorm = np.linalg.norm(b)
        if bnorm > 0.0:
            res = np.linalg.norm(self._A @ x - b) / bnorm
            if res > RESIDUAL_TOL:
                raise SolverError(
                    f"residual {res:.3e} exceeds contract {RESIDUAL_TOL:.0e}"
                )
        return x


def solve_spd(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A.

    Guarantees relative residual below ``RESIDUAL_TOL``; deterministic.
    """
    return SpdFactorization(A).solve(b)


# ---------------------------------------------------------------------------
# dense 2x2 kit; all functions broadcast over leading axes


def det2(m: np.ndarray) -> np.ndarray | float:
    m = np.asarray(m, dtype=float)
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def inv2(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    d = det2(m)
    if np.any(np.abs(d) <= DET_TOL):
        raise SingularMatrixError("2x2 matrix (near-)singular")
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out / d[..., None, None]


def cof2(m: np.ndarray) -> np.ndarray:
    """Cofactor matrix; satisfies cof(m) = det(m) * inv(m)^T."""
    m = np.asarray(m, dtype=float)
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 1, 0]
    out[..., 1, 0] = -m[..., 0, 1]
    return out
