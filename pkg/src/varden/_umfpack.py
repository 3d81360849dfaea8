"""Minimal ctypes binding to the system UMFPACK (double/int32 variant).

Used as the default sparse LU backend; scipy's SuperLU remains the fallback.
"""
from __future__ import annotations

import ctypes
import ctypes.util

import numpy as np
import scipy.sparse as sp

__all__ = ["UmfpackLU", "available"]

_lib = None


def _load():
    global _lib
    if _lib is not None:
        return _lib
    for name in ("libumfpack.so.5", "libumfpack.so", "umfpack"):
        try:
            _libc = ctypes.CDLL(name, mode=ctypes.RTLD_GLOBAL)
            _libc.umfpack_di_symbolic
            _lib = _libc
            return _lib
        except OSError:
            continue
        except AttributeError:
            continue
    _lib = False
    return _lib


def available() -> bool:
    return bool(_load())


_UMFPACK_A = 0  # solve A x = b
_UMFPACK_CONTROL = 20
_UMFPACK_INFO = 90
_UMFPACK_STRATEGY = 5
_STRATEGY_SYMMETRIC = 3.0


class UmfpackLU:
    """LU factorization of a square CSC matrix via UMFPACK.

    The symmetric ordering strategy matches the structurally symmetric
    saddle-point pattern of the coupled Jacobian (including the bordering
    zero-mean row/column) and keeps the fill an order of magnitude below the
    unsymmetric default there.
    """

    def __init__(self, A: sp.spmatrix, strategy: float = _STRATEGY_SYMMETRIC):
        lib = _load()
        if not lib:
            raise RuntimeError("UMFPACK is not available")
        A = A.tocsc()
        A.sort_indices()
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = A.shape[0]
        self._Ap = np.ascontiguousarray(A.indptr, dtype=np.int32)
        self._Ai = np.ascontiguousarray(A.indices, dtype=np.int32)
        self._Ax = np.ascontiguousarray(A.data, dtype=np.float64)
        self._lib = lib
        self._control = np.zeros(_UMFPACK_CONTROL)
        lib.umfpack_di_defaults(self._control.ctypes.data_as(
            ctypes.POINTER(ctypes.c_double)))
        self._control[_UMFPACK_STRATEGY] = strategy
        info = np.zeros(_UMFPACK_INFO)
        sym = ctypes.c_void_p()
        status = lib.umfpack_di_symbolic(
            ctypes.c_int(self.n), ctypes.c_int(self.n),
            self._Ap.ctypes.data_as(ctypes.POINTER(ctypes.c_int)),
            self._Ai.ctypes.data_as(ctypes.POINTER(ctypes.c_int)),
            self._Ax.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
            ctypes.byref(sym),
            self._control.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
            info.ctypes.data_as(ctypes.POINTER(ctypes.c_double)))
        if status != 0:
            raise RuntimeError(f"umfpack symbolic failed (status {status})")
        num = ctypes.c_void_p()
        status = lib.umfpack_di_numeric(
            self._Ap.ctypes.data_as(ctypes.POINTER(ctypes.c_int)),
            self._Ai.ctypes.data_as(ctypes.POINTER(ctypes.c_int)),
            self._Ax.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
            sym, ctypes.byref(num),
            self._control.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
            info.ctypes.data_as(ctypes.POINTER(ctypes.c_double)))
        lib.umfpack_di_free_symbolic(ctypes.byref(sym))
        if status != 0:
            raise RuntimeError(f"umfpack numeric failed (status {status})")
        self._numeric = num

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.ascontiguousarray(b, dtype=np.float64)
        if b.ndim == 1:
            x = np.empty_like(b)
            status = self._lib.umfpack_di_solve(
                ctypes.c_int(_UMFPACK_A),
                self._Ap.ctypes.data_as(ctypes.POINTER(ctypes.c_int)),
                self._Ai.ctypes.data_as(ctypes.POINTER(ctypes.c_int)),
                self._Ax.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
                x.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
                b.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
                self._numeric,
                self._control.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
                None)
            if status != 0:
                raise RuntimeError(f"umfpack solve failed (status {status})")
            return x
        return np.stack([self.solve(col) for col in b.T], axis=1)

    def __del__(self):
        num = getattr(self, "_numeric", None)
        if num:
            try:
                self._lib.umfpack_di_free_numeric(ctypes.byref(num))
            except Exception:
                pass
