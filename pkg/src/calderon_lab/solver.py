"""Sparse direct solves for the stiffness systems of the structured grid.

SuperLU's generic column orderings produce heavy fill on 3D grid graphs, so
unknowns are permuted by a geometric nested dissection of their grid indices
and factorised without further reordering.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem, ToleranceNotMet

LEAF = 64


def nested_dissection(ijk: np.ndarray) -> np.ndarray:
    """Elimination order for grid points with integer coordinates ``ijk``.

    Recursive bisection along the longest extent; the separating plane is
    ordered after both halves.
    """
    ijk = np.asarray(ijk, dtype=np.int64)
    order: list[np.ndarray] = []
    stack = [(np.arange(len(ijk)), False)]
    # iterative post-order traversal: (ids, expanded)
    while stack:
        ids, expanded = stack.pop()
        if expanded:
            order.append(ids)
            continue
        if len(ids) <= LEAF:
            order.append(ids)
            continue
        pts = ijk[ids]
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        ax = int(np.argmax(hi - lo))
        if hi[ax] == lo[ax]:
            order.append(ids)
            continue
        coord = pts[:, ax]
        mid = int(np.median(coord))
        if mid == lo[ax]:
            mid += 1
        left = ids[coord < mid]
        right = ids[coord > mid]
        sep = ids[coord == mid]
        # pushed in reverse so that left, right, separator are emitted in that order
        stack.append((sep, True))
        stack.append((right, False))
        stack.append((left, False))
    return np.concatenate(order) if order else np.zeros(0, dtype=np.int64)


class Factorization:
    """LU factors of a complex symmetric matrix with positive definite real part.

    Such matrices admit elimination without pivoting, so the diagonal pivot
    threshold is set to zero and the symmetric structure is kept.
    """

    def __init__(self, A: sp.spmatrix, ijk: np.ndarray | None = None, rtol: float = 1e-10):
        A = sp.csc_matrix(A)
        self.shape = A.shape
        self.rtol = rtol
        n = A.shape[0]
        self.perm = nested_dissection(ijk) if ijk is not None else np.arange(n)
        self.iperm = np.empty_like(self.perm)
        self.iperm[self.perm] = np.arange(n)
        self._A = A
        Ap = A[self.perm][:, self.perm].tocsc()
        Ap.sort_indices()
        if n == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(
                Ap,
                permc_spec="NATURAL",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc

    @property
    def fill(self) -> int:
        return 0 if self._lu is None else int(self._lu.L.nnz + self._lu.U.nnz)

    def _raw_solve(self, b: np.ndarray) -> np.ndarray:
        bp = b[self.perm]
        xp = self._lu.solve(np.ascontiguousarray(bp))
        return xp[self.iperm]

    def solve(self, b: np.ndarray, refine: int = 2) -> np.ndarray:
        """Solve with up to ``refine`` steps of iterative refinement.

        ``b`` may be a vector or a matrix of right-hand sides (columns).
        """
        b = np.asarray(b, dtype=complex)
        if self._lu is None:
            return np.zeros_like(b)
        x = self._raw_solve(b)
        bnorm = np.linalg.norm(b, axis=0)
        for _ in range(refine + 1):
            r = b - self._A @ x
            rel = np.max(np.linalg.norm(r, axis=0) / np.where(bnorm > 0, bnorm, 1.0))
            if rel <= self.rtol:
                return x
            x = x + self._raw_solve(r)
        r = b - self._A @ x
        rel = np.max(np.linalg.norm(r, axis=0) / np.where(bnorm > 0, bnorm, 1.0))
        if not np.isfinite(rel) or rel > self.rtol:
            raise ToleranceNotMet(f"relative residual {rel:.3e} above {self.rtol:.1e}")
        return x
