"""Sparse direct solves with a residual contract, and a dense oracle."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-10


class SolverFailure(RuntimeError):
    def __init__(self, message, best_residual=np.inf, stage=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.stage = stage


class SingularMatrixError(SolverFailure):
    pass


@dataclass
class SolveReport:
    solution: np.ndarray
    relative_residual: float
    iterations: int
    method: str

    def as_dict(self) -> dict:
        return {"relative_residual": self.relative_residual, "iterations": self.iterations,
                "method": self.method}


def _relative_residual(matrix, x, b) -> float:
    r = np.linalg.norm(matrix @ x - b)
    nb = np.linalg.norm(b)
    if nb == 0:
        return 0.0 if r == 0 else float(np.inf)
    return float(r / nb)


class LUSolver:
    """Reusable sparse LU factorisation of one matrix.

    Solves with the matrix or its transpose and checks the relative residual,
    applying iterative refinement steps when needed. Calls are serialised by
    an internal lock, so one handle may be shared between threads.
    """

    def __init__(self, matrix: sp.spmatrix):
        matrix = sp.csc_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got {matrix.shape}")
        self.matrix = matrix
        self._matrix_t = matrix.T.tocsc()
        self._lock = threading.Lock()
        try:
            self._lu = spla.splu(matrix, permc_spec="COLAMD")
        except RuntimeError as exc:  # "Factor is exactly singular"
            raise SingularMatrixError(str(exc), stage="factorise") from exc

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int = 5,
              transpose: bool = False) -> SolveReport:
        if not 0 < tol <= 1e-6:
            raise ValueError(f"tol must lie in (0, 1e-6], got {tol}")
        b = np.asarray(b, dtype=float)
        if not np.all(np.isfinite(b)):
            raise SolverFailure("right-hand side is not finite", stage="input")
        mat = self._matrix_t if transpose else self.matrix
        trans = "T" if transpose else "N"
        with self._lock:
            x = self._lu.solve(b, trans=trans)
            res = _relative_residual(mat, x, b)
            best_x, best = x, res
            it = 0
            while res > tol and it < max_iter:
                it += 1
                x = x + self._lu.solve(b - mat @ x, trans=trans)
                res = _relative_residual(mat, x, b)
                if res < best:
                    best_x, best = x, res
        if not np.isfinite(best) or best > tol:
            raise SolverFailure(f"residual {best:.3e} above tolerance {tol:.1e} after {it} refinements",
                                best_residual=best, stage="solve")
        return SolveReport(best_x, best, it, "splu" + ("-T" if transpose else ""))


def solve(system, tol: float = DEFAULT_TOL, max_iter: int = 5) -> SolveReport:
    """Solve ``system.matrix x = system.load``."""
    return LUSolver(system.matrix).solve(system.load, tol=tol, max_iter=max_iter)


def dense_solve(matrix, rhs, pivot_tol: float = 1e-12) -> np.ndarray:
    """Gaussian elimination with partial pivoting, for small oracle systems.

    A pivot smaller than ``pivot_tol * max|A|`` is treated as singular.
    """
    A = np.array(matrix, dtype=float)
    b = np.array(rhs, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or n > 64:
        raise ValueError(f"dense_solve takes square matrices up to 64x64, got {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale == 0:
        raise SingularMatrixError("zero matrix", stage="dense")
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[piv, k]) < pivot_tol * scale:
            raise SingularMatrixError(f"pivot {abs(A[piv, k]):.3e} below tolerance at column {k}",
                                      stage="dense")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            if f != 0.0:
                A[i, k:] -= f * A[k, k:]
                b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x
