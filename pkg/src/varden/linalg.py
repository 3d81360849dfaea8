"""Sparse direct solves and the zero-mean pressure constraint.

Thin layer over scipy's SuperLU: desk-scale meshes plus Newton tolerances of
1e-12..1e-14 make a direct factorization the right tool.  The global-mean
density coupling is a rank-one update handled by Sherman-Morrison so the
factorized matrix keeps its local sparsity.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _umfpack as _umf

__all__ = [
    "FactorizationError",
    "SparseLU",
    "lu_solve",
    "augment_zero_mean",
]


class FactorizationError(RuntimeError):
    pass


class SparseLU:
    """LU factorization with optional rank-one (a b^T) correction.

    Uses the system UMFPACK when present (far lower fill on the coupled
    saddle-point pattern than SuperLU's COLAMD) and scipy's SuperLU otherwise.
    """

    def __init__(self, A: sp.spmatrix, rank_one=None):
        self.shape = A.shape
        try:
            self._lu = None
            if _umf.available():
                try:
                    self._lu = _umf.UmfpackLU(A)
                    # the symmetric-strategy ordering can in principle hit
                    # poor pivots on an indefinite system; verify once
                    probe = np.arange(1.0, A.shape[0] + 1.0)
                    probe /= np.linalg.norm(probe)
                    x = self._lu.solve(probe)
                    err = np.linalg.norm(A @ x - probe)
                    if not np.isfinite(err) or err > 1e-8:
                        self._lu = None
                except RuntimeError:
                    self._lu = None
            if self._lu is None:
                self._lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(f"sparse LU failed: {exc}") from exc
        self._rank_one = rank_one
        if rank_one is not None:
            a, b = rank_one
            self._z = self._lu.solve(np.asarray(a, dtype=float))
            self._denom = 1.0 + float(b @ self._z)
            if abs(self._denom) < 1e-300:
                raise FactorizationError("singular rank-one update")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = self._lu.solve(np.asarray(rhs, dtype=float))
        if self._rank_one is None:
            return y
        _, b = self._rank_one
        return y - (b @ y) / self._denom * self._z


def lu_solve(A: sp.spmatrix, b: np.ndarray, rel_check: float | None = 1e-11
             ) -> np.ndarray:
    """Direct solve with a residual verification."""
    A = A.tocsc()
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix is {A.shape}, not square")
    x = SparseLU(A).solve(b)
    if rel_check is not None:
        nb = np.linalg.norm(b)
        if nb > 0:
            rel = np.linalg.norm(A @ x - b) / nb
            if rel > rel_check:
                raise FactorizationError(
                    f"solve residual {rel:.3e} exceeds {rel_check:.1e}"
                )
    return x


def augment_zero_mean(J: sp.spmatrix, pressure_dofs: np.ndarray,
                      mass_vector: np.ndarray) -> sp.csr_matrix:
    """Append one Lagrange multiplier row/column enforcing sum(m_i P_i) = 0.

    pressure_dofs are the global indices of the pressure block; mass_vector_i
    is the integral of pressure basis function i.
    """
    J = J.tocoo()
    n = J.shape[0]
    pressure_dofs = np.asarray(pressure_dofs, dtype=np.int64)
    m = np.asarray(mass_vector, dtype=float)
    if pressure_dofs.shape != m.shape:
        raise ValueError("pressure_dofs and mass_vector length mismatch")
    rows = np.concatenate([J.row, pressure_dofs, np.full(len(m), n)])
    cols = np.concatenate([J.col, np.full(len(m), n), pressure_dofs])
    vals = np.concatenate([J.data, m, m])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n + 1, n + 1)).tocsr()
