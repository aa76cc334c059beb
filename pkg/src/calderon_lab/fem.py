"""Trilinear finite elements: assembly, Dirichlet and source solves, variational flux."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .admittivity import Admittivity
from .domain import FlatPortion, tangential_axes
from .errors import NotASolution
from .mesh import AUGMENTED, DiscreteField, NodeSet, StructuredMesh, shape_gradients, shape_values
from .solver import Factorization

CHUNK = 4096


def gauss01(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def local_rule(order: int, subdiv: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit cube, optionally composite over subdiv^3 subcells."""
    x, w = gauss01(order)
    s = (np.arange(subdiv)[:, None] + x[None, :]).ravel() / subdiv
    ws = np.tile(w, subdiv) / subdiv
    X, Y, Z = np.meshgrid(s, s, s, indexing="ij")
    WX, WY, WZ = np.meshgrid(ws, ws, ws, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1), (WX * WY * WZ).ravel()


@dataclass
class CellQuadrature:
    """Quadrature points of a batch of cells."""

    cells: np.ndarray    # flat cell id per point
    xi: np.ndarray       # local coordinates per point
    points: np.ndarray   # physical coordinates
    weights: np.ndarray  # physical weights
    layers: np.ndarray   # layer number per point
    owner: np.ndarray    # index into the batch's cell list per point


def iter_quadrature(mesh: StructuredMesh, cells: np.ndarray, order: int = 2, subdiv=None,
                    chunk_points: int = 200_000):
    """Yield :class:`CellQuadrature` batches covering ``cells``.

    ``subdiv`` is None, an int, or an int array aligned with ``cells``.
    """
    cells = np.asarray(cells, dtype=np.int64)
    if subdiv is None:
        subdiv = np.ones(len(cells), dtype=np.int64)
    elif np.isscalar(subdiv):
        subdiv = np.full(len(cells), int(subdiv), dtype=np.int64)
    else:
        subdiv = np.asarray(subdiv, dtype=np.int64)
    layers_all = mesh.cell_layer.ravel()
    for s in np.unique(subdiv):
        xi, w = local_rule(order, int(s))
        pos = np.flatnonzero(subdiv == s)
        step = max(1, chunk_points // len(w))
        for start in range(0, len(pos), step):
            idx = pos[start:start + step]
            c = cells[idx]
            lo, size = mesh.cell_geometry(c)
            pts = lo[:, None, :] + xi[None, :, :] * size[:, None, :]
            wts = w[None, :] * np.prod(size, axis=1)[:, None]
            nq = len(w)
            yield CellQuadrature(
                cells=np.repeat(c, nq),
                xi=np.tile(xi, (len(c), 1)),
                points=pts.reshape(-1, 3),
                weights=wts.ravel(),
                layers=np.repeat(layers_all[c], nq),
                owner=np.repeat(idx, nq),
            )


def integrate_cells(mesh: StructuredMesh, cells: np.ndarray, integrand: Callable,
                    order: int = 2, subdiv=None) -> np.ndarray:
    """Per-cell integrals of ``integrand(q)`` (values at the points of batch ``q``)."""
    out = np.zeros(len(cells), dtype=complex)
    for q in iter_quadrature(mesh, cells, order, subdiv):
        vals = np.asarray(integrand(q)) * q.weights
        out += np.bincount(q.owner, weights=vals.real, minlength=len(cells))
        out += 1j * np.bincount(q.owner, weights=vals.imag, minlength=len(cells))
    return out


def region_cell_ids(mesh: StructuredMesh, region: str) -> np.ndarray:
    return np.flatnonzero(mesh.region_cells(region).ravel())


def field_gradients(field: DiscreteField, q: CellQuadrature) -> np.ndarray:
    return field.grad_in_cells(q.cells, q.xi)


class AssembledSystem:
    """Stiffness matrix of one admittivity on one region, in local node numbering.

    The complex matrix ``K = Kr + i Ki`` is stored; :meth:`block` returns the
    equivalent real form ``[[Kr, -Ki], [Ki, Kr]]``.
    """

    def __init__(self, adm: Admittivity, mesh: StructuredMesh, region: str, K: sp.csr_matrix,
                 rtol: float = 1e-10):
        self.adm = adm
        self.mesh = mesh
        self.region = region
        self.K = K
        self.nodes: NodeSet = mesh.nodes(region)
        self.rtol = rtol
        self.bnd = np.flatnonzero(self.nodes.boundary)
        self.inn = np.flatnonzero(~self.nodes.boundary)
        self._KII = None
        self._KIB = None
        self._factor = None

    @property
    def Kr(self) -> sp.csr_matrix:
        return self.K.real.tocsr()

    @property
    def Ki(self) -> sp.csr_matrix:
        return self.K.imag.tocsr()

    def block(self) -> sp.csr_matrix:
        Kr, Ki = self.Kr, self.Ki
        return sp.bmat([[Kr, -Ki], [Ki, Kr]], format="csr")

    def _split(self):
        if self._KII is None:
            K = self.K.tocsr()
            self._KII = K[self.inn][:, self.inn].tocsc()
            self._KIB = K[self.inn][:, self.bnd].tocsr()
        return self._KII, self._KIB

    @property
    def factor(self) -> Factorization:
        if self._factor is None:
            KII, _ = self._split()
            self._factor = Factorization(KII, self.nodes.ijk[self.inn], rtol=self.rtol)
        return self._factor

    def boundary_coords(self) -> np.ndarray:
        return self.mesh.node_coords(self.nodes.ids[self.bnd])

    def solve(self, boundary_values=None, rhs=None) -> np.ndarray:
        """Local nodal solution with prescribed boundary values and load vector.

        ``boundary_values`` has one entry per boundary node (or is None for
        zero); ``rhs`` is a full local load vector. Both may carry a second
        axis for several right-hand sides.
        """
        _, KIB = self._split()
        n = self.nodes.n
        shape_tail = ()
        if boundary_values is not None:
            boundary_values = np.asarray(boundary_values, dtype=complex)
            shape_tail = boundary_values.shape[1:]
        if rhs is not None:
            rhs = np.asarray(rhs, dtype=complex)
            shape_tail = rhs.shape[1:]
        u = np.zeros((n,) + shape_tail, dtype=complex)
        b = np.zeros((len(self.inn),) + shape_tail, dtype=complex)
        if rhs is not None:
            b += rhs[self.inn]
        if boundary_values is not None:
            u[self.bnd] = boundary_values
            b -= KIB @ boundary_values
        u[self.inn] = self.factor.solve(b)
        return u

    def interior_residual(self, u_local: np.ndarray, rhs=None) -> float:
        """Relative residual of the interior rows: |(K u - b)_I| / (|K_I| |u| + |b_I|)."""
        r = (self.K @ u_local)[self.inn]
        bI = 0.0 if rhs is None else rhs[self.inn]
        r = r - bI
        KI = self.K[self.inn]
        scale = np.linalg.norm(abs(KI) @ np.abs(u_local)) + np.linalg.norm(bI)
        return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0


def assemble(adm: Admittivity, mesh: StructuredMesh, region: str = AUGMENTED,
             order: int = 2) -> AssembledSystem:
    """Element-by-element stiffness with a tensor Gauss rule (2x2x2 by default)."""
    ns = mesh.nodes(region)
    cells = region_cell_ids(mesh, region)
    xi, w = local_rule(order)
    G = shape_gradients(xi)
    layers_all = mesh.cell_layer.ravel()
    rows, cols, vals = [], [], []
    for start in range(0, len(cells), CHUNK):
        c = cells[start:start + CHUNK]
        lo, size = mesh.cell_geometry(c)
        pts = lo[:, None, :] + xi[None, :, :] * size[:, None, :]
        sig = adm.sigma_values(pts, layers_all[c][:, None])
        g = G[None, :, :, :] / size[:, None, None, :]
        t = np.einsum("cqai,cqij->cqaj", g, sig)
        Ke = np.einsum("cqaj,cqbj,q->cab", t, g, w) * np.prod(size, axis=1)[:, None, None]
        Ke = 0.5 * (Ke + Ke.transpose(0, 2, 1))
        loc = ns.local[mesh.cell_nodes(c)]
        rows.append(np.repeat(loc, 8, axis=1).ravel())
        cols.append(np.tile(loc, (1, 8)).ravel())
        vals.append(Ke.ravel())
    n = ns.n
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return AssembledSystem(adm, mesh, region, K)


def _boundary_values(sys: AssembledSystem, f) -> np.ndarray:
    if f is None:
        return np.zeros(len(sys.bnd), dtype=complex)
    if isinstance(f, DiscreteField):
        return f.values[sys.nodes.ids[sys.bnd]]
    if callable(f):
        return np.asarray(f(sys.boundary_coords()), dtype=complex)
    f = np.asarray(f, dtype=complex)
    if f.shape[0] == len(sys.bnd):
        return f
    if f.shape[0] == sys.nodes.n:
        return f[sys.bnd]
    if f.shape[0] == sys.mesh.n_nodes:
        return f[sys.nodes.ids[sys.bnd]]
    raise ValueError("boundary data has the wrong length")


def solve_dirichlet(sys: AssembledSystem, f, sigma_only: FlatPortion | None = None) -> DiscreteField:
    """Galerkin solution with Dirichlet data ``f`` on the region boundary.

    ``f`` is a callable on points, a DiscreteField, or a nodal vector. When
    ``sigma_only`` is given the data must vanish off that portion.
    """
    g = _boundary_values(sys, f)
    if sigma_only is not None:
        on = sigma_only.contains(sys.boundary_coords(), strict=True)
        if np.any(g[~on] != 0):
            raise ValueError("boundary data does not vanish outside the measurement portion")
    u = sys.solve(g)
    return DiscreteField.from_local(sys.mesh, sys.region, u, {"kind": "dirichlet"})


@dataclass
class FluxTrace:
    """Variational conormal flux on the nodes of a flat portion."""

    nodes: np.ndarray    # global node ids on the closed portion
    dual: np.ndarray     # (K u) at those nodes
    weights: np.ndarray  # lumped boundary mass of each node
    portion: FlatPortion

    @property
    def pointwise(self) -> np.ndarray:
        """Nodal flux density estimate dual / weight."""
        return self.dual / self.weights

    def pair(self, trace_values: np.ndarray) -> complex:
        """Bilinear pairing with nodal trace values on ``nodes``."""
        return complex(np.sum(self.dual * trace_values))


def lumped_face_mass(mesh: StructuredMesh, portion: FlatPortion) -> np.ndarray:
    """Row sums of the Q1 surface mass matrix on the closed portion, in portion_nodes order."""
    # each node's weight covers its full surface hat support, also on the portion edge
    t = tangential_axes(portion.axis)
    ws = []
    for ta, (a, b) in zip(t, portion.rect):
        x = mesh.axes[ta]
        idx = np.flatnonzero((x >= a - 1e-12) & (x <= b + 1e-12))
        left = x[idx] - x[np.maximum(idx - 1, 0)]
        right = x[np.minimum(idx + 1, len(x) - 1)] - x[idx]
        ws.append(0.5 * (left + right))
    return np.outer(ws[0], ws[1]).ravel()


def variational_flux(u: DiscreteField, sys: AssembledSystem, portion: FlatPortion,
                     tol: float = 1e-8) -> FluxTrace:
    """Flux functional phi -> int sigma grad u . grad phi as nodal dual values.

    The dual value at a portion node is the stiffness row applied to ``u``,
    which is the volume form tested against that node's hat function.
    """
    ul = u.values[sys.nodes.ids]
    res = sys.interior_residual(ul)
    if res > tol:
        raise NotASolution(f"interior residual {res:.2e} exceeds {tol:.1e}")
    nodes = sys.mesh.portion_nodes(portion, strict=False)
    loc = sys.nodes.local[nodes]
    if np.any(loc < 0) or np.any(~sys.nodes.boundary[loc]):
        raise ValueError("portion nodes are not boundary nodes of this system")
    dual = (sys.K @ ul)[loc]
    return FluxTrace(nodes, dual, lumped_face_mass(sys.mesh, portion), portion)


def load_vector(mesh: StructuredMesh, region: str, F=None, f=None, cells=None, order: int = 3,
                subdiv=None) -> np.ndarray:
    """Local load vector b_i = int F . grad(phi_i) + f phi_i.

    ``F(points, layers)`` returns complex vectors (n, 3), ``f(points, layers)``
    complex scalars (n,). Integration runs over ``cells`` (default: every cell
    of the region) with an optionally composite Gauss rule.
    """
    ns = mesh.nodes(region)
    if cells is None:
        cells = region_cell_ids(mesh, region)
    b = np.zeros(ns.n, dtype=complex)
    if F is None and f is None:
        return b
    for q in iter_quadrature(mesh, cells, order, subdiv):
        nodes = ns.local[mesh.cell_nodes(q.cells)]
        contrib = np.zeros(nodes.shape, dtype=complex)
        if F is not None:
            _, size = mesh.cell_geometry(q.cells)
            g = shape_gradients(q.xi) / size[:, None, :]
            Fv = np.asarray(F(q.points, q.layers), dtype=complex)
            contrib += np.einsum("nca,na->nc", g, Fv)
        if f is not None:
            fv = np.asarray(f(q.points, q.layers), dtype=complex)
            contrib += shape_values(q.xi) * fv[:, None]
        contrib *= q.weights[:, None]
        idx = nodes.ravel()
        b += np.bincount(idx, weights=contrib.real.ravel(), minlength=ns.n)
        b += 1j * np.bincount(idx, weights=contrib.imag.ravel(), minlength=ns.n)
    return b


def solve_with_source(adm: Admittivity, mesh: StructuredMesh, F=None, boundary_data=None,
                      f=None, region: str = AUGMENTED, system: AssembledSystem | None = None,
                      order: int = 3, cells=None, subdiv=None) -> DiscreteField:
    """Solve int sigma grad u . grad phi = int F . grad phi + f phi with u = g on the boundary."""
    sys = system if system is not None else assemble(adm, mesh, region)
    b = load_vector(mesh, sys.region, F, f, cells, order, subdiv)
    g = _boundary_values(sys, boundary_data)
    u = sys.solve(g, b)
    return DiscreteField.from_local(mesh, sys.region, u, {"kind": "source"})
