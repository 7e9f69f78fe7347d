"""Sparse direct factorization with an optional faster backend.

SuperLU (bundled with SciPy) is always available.  When ``pypardiso`` and
an MKL runtime can be loaded, PARDISO is used instead: its nested-dissection
ordering keeps fill and memory far lower on the large saddle-point systems.
Small systems stay on SuperLU, whose solves are a little more accurate.
``DIVDIVCH_SOLVER=superlu`` or ``=pardiso`` forces a choice.
"""
from __future__ import annotations

import glob
import logging
import os
import site
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

_PARDISO = None
SMALL = 50_000  # below this size SuperLU is used unless PARDISO is forced


def _find_mkl() -> str | None:
    roots = [sys.prefix, "/usr/local", "/usr"] + site.getsitepackages()
    for r in roots:
        for pat in ("lib/libmkl_rt.so*", "../../libmkl_rt.so*", "libmkl_rt.so*"):
            hits = sorted(glob.glob(os.path.join(r, pat)))
            if hits:
                return os.path.realpath(hits[0])
    return None


def _load_pardiso():
    global _PARDISO
    if _PARDISO is not None:
        return _PARDISO or None
    _PARDISO = False
    if os.environ.get("DIVDIVCH_SOLVER", "").lower() == "superlu":
        return None
    if "PYPARDISO_MKL_RT" not in os.environ:
        path = _find_mkl()
        if path:
            os.environ["PYPARDISO_MKL_RT"] = path
    try:
        from pypardiso import PyPardisoSolver
    except Exception as exc:  # ImportError or a missing MKL runtime
        log.debug("PARDISO unavailable: %s", exc)
        return None
    _PARDISO = PyPardisoSolver
    return _PARDISO


def backend() -> str:
    return "pardiso" if _load_pardiso() else "superlu"


class Factorization:
    """``solve(b)`` for a fixed square sparse matrix."""

    def __init__(self, A: sp.spmatrix, prefer: str | None = None):
        prefer = prefer or os.environ.get("DIVDIVCH_SOLVER", "").lower() or None
        if prefer is None and A.shape[0] < SMALL:
            prefer = "superlu"
        cls = _load_pardiso() if prefer in (None, "pardiso") else None
        self.shape = A.shape
        if cls is not None:
            self.kind = "pardiso"
            self._A = sp.csr_matrix(A)
            self._A.sort_indices()
            self._s = cls()
            self._s.set_iparm(8, 4)  # iterative refinement steps
            self._s.factorize(self._A)
        else:
            self.kind = "superlu"
            self._lu = spla.splu(sp.csc_matrix(A), permc_spec="COLAMD")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.kind == "pardiso":
            b = np.asarray(b, dtype=float)
            if b.ndim == 2:
                return np.column_stack([self._s.solve(self._A, np.ascontiguousarray(c)) for c in b.T])
            return self._s.solve(self._A, np.ascontiguousarray(b))
        return self._lu.solve(b)

    def __del__(self):
        s = getattr(self, "_s", None)
        if s is not None:
            try:
                s.free_memory(everything=True)
            except Exception:
                pass


def factorize(A: sp.spmatrix, prefer: str | None = None) -> Factorization:
    return Factorization(A, prefer)
