"""Discrete local Dirichlet-to-Neumann map on the measurement portion and its norms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .admittivity import Admittivity
from .domain import FlatPortion, tangential_axes
from .errors import EigSolveFailure, GramMismatch, IoError, UnsupportedTrace
from .fem import AssembledSystem, assemble, integrate_cells, region_cell_ids
from .mesh import OMEGA, DiscreteField, StructuredMesh

SOLVE_CHUNK = 64


def _p1_matrices(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1D linear-element mass and stiffness on nodes ``x``, restricted to interior nodes."""
    h = np.diff(x)
    n = len(x)
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for e, he in enumerate(h):
        i = [e, e + 1]
        M[np.ix_(i, i)] += he / 6 * np.array([[2, 1], [1, 2]])
        K[np.ix_(i, i)] += 1 / he * np.array([[1, -1], [-1, 1]])
    return M[1:-1, 1:-1], K[1:-1, 1:-1]


@dataclass
class BoundarySpace:
    """Nodal traces on the open portion (zero on its edge) with Q1 surface matrices."""

    mesh: StructuredMesh
    portion: FlatPortion
    nodes: np.ndarray        # global node ids, first tangential axis slowest
    mass: np.ndarray
    stiffness: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def coords(self) -> np.ndarray:
        return self.mesh.node_coords(self.nodes)

    def key(self) -> tuple:
        return (self.mesh.digest(), tuple(self.nodes.tolist()))

    def trace(self, data) -> np.ndarray:
        """Coefficient vector of ``data`` (callable on points or nodal vector)."""
        if callable(data):
            return np.asarray(data(self.coords), dtype=complex)
        v = np.asarray(data, dtype=complex)
        if v.shape != (self.n,):
            raise UnsupportedTrace(f"expected {self.n} portion coefficients, got shape {v.shape}")
        return v

    def lift(self, coeffs) -> DiscreteField:
        v = np.zeros(self.mesh.n_nodes, dtype=complex)
        v[self.nodes] = self.trace(coeffs)
        return DiscreteField(self.mesh, v, OMEGA, {"kind": "trace"})


def boundary_space(mesh: StructuredMesh) -> BoundarySpace:
    portion = mesh.domain.base.sigma
    nodes = mesh.portion_nodes(portion, strict=True)
    if len(nodes) == 0:
        raise ValueError("the measurement portion carries no interior nodes")
    mats = []
    for ta, (a, b) in zip(tangential_axes(portion.axis), portion.rect):
        x = mesh.axes[ta]
        mats.append(_p1_matrices(x[(x >= a - 1e-12) & (x <= b + 1e-12)]))
    (M1, K1), (M2, K2) = mats
    M = np.kron(M1, M2)
    K = np.kron(K1, M2) + np.kron(M1, K2)
    return BoundarySpace(mesh, portion, nodes, M, K)


@dataclass
class DtNMatrix:
    """Dense bilinear DtN matrix: ``values[g, f]`` pairs the response to data f with test g."""

    values: np.ndarray
    space: BoundarySpace
    provenance: dict = field(default_factory=dict)

    def __sub__(self, other: "DtNMatrix") -> np.ndarray:
        if self.space.key() != other.space.key():
            raise GramMismatch("DtN matrices live on different boundary spaces")
        return self.values - other.values

    def pair(self, f, g) -> complex:
        """<Lambda f, g> without conjugation."""
        return complex(self.space.trace(g) @ self.values @ self.space.trace(f))

    def symmetry_defect(self) -> float:
        return float(np.abs(self.values - self.values.T).max() / np.abs(self.values).max())

    def export(self, path) -> None:
        """JSON header ``path`` plus little-endian (re, im) f64 row-major data in ``path.bin``."""
        path = Path(path)
        header = {
            "n": self.space.n,
            "dof_coords": self.space.coords.tolist(),
            "mesh_digest": self.space.mesh.digest(),
            **self.provenance,
            "data": path.name + ".bin",
        }
        try:
            path.write_text(json.dumps(header, indent=1, sort_keys=True))
            inter = np.empty(self.values.shape + (2,), dtype="<f8")
            inter[..., 0] = self.values.real
            inter[..., 1] = self.values.imag
            path.with_name(path.name + ".bin").write_bytes(inter.tobytes(order="C"))
        except OSError as exc:
            raise IoError(str(exc)) from exc

    @staticmethod
    def read_values(path) -> np.ndarray:
        path = Path(path)
        header = json.loads(path.read_text())
        raw = np.frombuffer(path.with_name(header["data"]).read_bytes(), dtype="<f8")
        raw = raw.reshape(header["n"], header["n"], 2)
        return raw[..., 0] + 1j * raw[..., 1]


def dtn_from_system(sys: AssembledSystem, space: BoundarySpace) -> DtNMatrix:
    """Schur complement onto the portion DOFs; other boundary nodes carry zero data."""
    if sys.region != OMEGA:
        raise ValueError("the DtN map is defined on the inner domain system")
    loc = sys.nodes.local[space.nodes]
    K = sys.K.tocsr()
    # position of the portion nodes among the boundary nodes
    bpos = np.searchsorted(sys.bnd, loc)
    _, KIB = sys._split()
    rhs_all = -KIB[:, bpos]
    Kss = K[loc][:, loc].toarray()
    Ksi = K[loc][:, sys.inn]
    out = np.empty((space.n, space.n), dtype=complex)
    for start in range(0, space.n, SOLVE_CHUNK):
        cols = slice(start, min(start + SOLVE_CHUNK, space.n))
        uI = sys.factor.solve(rhs_all[:, cols].toarray())
        out[:, cols] = Kss[:, cols] + Ksi @ uI
    return DtNMatrix(out, space, {"admittivity": sys.adm.digest()})


def assemble_dtn(adm: Admittivity, mesh: StructuredMesh, space: BoundarySpace | None = None,
                 system: AssembledSystem | None = None) -> DtNMatrix:
    space = space if space is not None else boundary_space(mesh)
    sys = system if system is not None else assemble(adm, mesh, OMEGA)
    return dtn_from_system(sys, space)


@dataclass
class FractionalGram:
    """Spectral H^{1/2}_{00} Gram matrix on a boundary space."""

    space: BoundarySpace
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray   # mass-orthonormal
    N_half: np.ndarray
    N_minus_half: np.ndarray
    _chol: np.ndarray = field(repr=False)

    def norm(self, v) -> float:
        v = np.asarray(v)
        return float(np.sqrt(np.real(np.conj(v) @ self.N_half @ v)))


def build_fractional_gram(space: BoundarySpace) -> FractionalGram:
    try:
        mu, W = sla.eigh(space.stiffness, space.mass)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigSolveFailure(str(exc)) from exc
    if mu.min() <= 0:
        raise EigSolveFailure("surface Laplacian is not positive definite")
    MW = space.mass @ W
    N = (MW * np.sqrt(mu)) @ MW.T
    N = 0.5 * (N + N.T)
    Nm = (W / np.sqrt(mu)) @ W.T
    try:
        C = np.linalg.cholesky(N)
    except np.linalg.LinAlgError as exc:
        raise EigSolveFailure("fractional Gram matrix is not positive definite") from exc
    return FractionalGram(space, mu, W, N, 0.5 * (Nm + Nm.T), C)


def op_norm(D: np.ndarray, gram: FractionalGram) -> float:
    """sup |g^T D f| / (|f|_N |g|_N) over complex f, g."""
    D = np.asarray(D)
    if D.shape != gram.N_half.shape:
        raise GramMismatch("matrix and Gram matrix sizes differ")
    C = gram._chol
    X = sla.solve_triangular(C, D, lower=True)
    X = sla.solve_triangular(C, X.T, lower=True).T
    return float(np.linalg.norm(X, 2))


def op_norm_diff(L1: DtNMatrix, L2: DtNMatrix, gram: FractionalGram) -> float:
    if L1.space.key() != gram.space.key():
        raise GramMismatch("Gram matrix built on a different boundary space")
    return op_norm(L1 - L2, gram)


@dataclass
class AlessandriniResult:
    lhs: complex
    rhs: complex

    @property
    def residual(self) -> complex:
        return self.lhs - self.rhs

    @property
    def relative(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs), np.finfo(float).eps)
        return abs(self.residual) / scale


def alessandrini_residual(adm1: Admittivity, adm2: Admittivity, mesh: StructuredMesh, f, g,
                          space: BoundarySpace | None = None, dtn=None, systems=None,
                          order: int = 3) -> AlessandriniResult:
    """Both sides of <(L1 - L2) f, g> = int (sigma1 - sigma2) grad u1 . grad u2.

    u1 solves the first problem with data g, u2 the second with data f. The
    left side comes from the assembled DtN matrices, the right side from an
    independent volume quadrature.
    """
    space = space if space is not None else boundary_space(mesh)
    fv, gv = space.trace(f), space.trace(g)
    s1, s2 = systems if systems is not None else (assemble(adm1, mesh, OMEGA), assemble(adm2, mesh, OMEGA))
    L1, L2 = dtn if dtn is not None else (dtn_from_system(s1, space), dtn_from_system(s2, space))
    lhs = complex(gv @ (L1 - L2) @ fv)
    u1 = s1.solve(space.lift(gv).values[s1.nodes.ids][s1.bnd])
    u2 = s2.solve(space.lift(fv).values[s2.nodes.ids][s2.bnd])
    F1 = DiscreteField.from_local(mesh, OMEGA, u1)
    F2 = DiscreteField.from_local(mesh, OMEGA, u2)
    cells = region_cell_ids(mesh, OMEGA)

    def integrand(q):
        d = adm1.sigma_values(q.points, q.layers) - adm2.sigma_values(q.points, q.layers)
        g1 = F1.grad_in_cells(q.cells, q.xi)
        g2 = F2.grad_in_cells(q.cells, q.xi)
        return np.einsum("ni,nij,nj->n", g1, d, g2)

    rhs = complex(integrate_cells(mesh, cells, integrand, order).sum())
    return AlessandriniResult(lhs, rhs)
