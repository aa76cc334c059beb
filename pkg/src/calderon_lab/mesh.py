"""Structured tensor-product hexahedral mesh over the augmented domain."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import AugmentedDomain, FlatPortion, layer_index_cells, tangential_axes
from .errors import IoError, ResolutionIncompatible

# regions a system can be assembled on
AUGMENTED = "augmented"
OMEGA = "omega"

# corner n of a cell sits at offset (n >> 2 & 1, n >> 1 & 1, n & 1)
CORNERS = np.array([[(n >> 2) & 1, (n >> 1) & 1, n & 1] for n in range(8)], dtype=np.int64)


def _refine_axis(axis: np.ndarray, focus: float, levels: int, width: float) -> np.ndarray:
    """Halve the intervals near ``focus`` repeatedly.

    At level l the intervals of the current finest size that overlap
    ``[focus - width*h_{l-1}, focus + width*h_{l-1}]`` are split, so spacing
    ``h_l`` extends to ``2*width*h_l`` on each side of the focus.
    """
    x = np.asarray(axis, dtype=float)
    hmin = np.min(np.diff(x))
    for _ in range(levels):
        d = np.diff(x)
        a = focus - width * hmin
        b = focus + width * hmin
        split = (x[:-1] < b - 1e-12 * hmin) & (x[1:] > a + 1e-12 * hmin) & (d > 0.75 * hmin)
        mids = 0.5 * (x[:-1] + x[1:])[split]
        x = np.sort(np.concatenate([x, mids]))
        hmin = hmin / 2
    return x


@dataclass(frozen=True)
class Refinement:
    """Graded refinement zone: ``levels`` halvings around ``point``."""

    point: tuple[float, float, float]
    levels: int
    width: float = 2.0


@dataclass(frozen=True)
class NodeSet:
    """Nodes of an assembly region in a compact local numbering."""

    ids: np.ndarray          # global flat node ids, sorted
    local: np.ndarray        # global id -> local index, -1 if absent
    boundary: np.ndarray     # bool per local node: on the region boundary
    ijk: np.ndarray          # integer grid coordinates per local node

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary


class StructuredMesh:
    """Tensor-product grid over the bounding box of the augmented domain.

    Cells outside the augmented domain are inactive. Layer numbers per cell
    follow the domain convention (0 for the slab, -1 inactive).
    """

    def __init__(self, domain: AugmentedDomain, axes: Sequence[np.ndarray], resolution: int,
                 refinements: Sequence[Refinement] = ()):
        self.domain = domain
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.resolution = resolution
        self.refinements = tuple(refinements)
        self.h = 1.0 / resolution
        self.shape = tuple(len(a) for a in self.axes)
        self.cell_shape = tuple(n - 1 for n in self.shape)
        self.sizes = tuple(np.diff(a) for a in self.axes)
        centers = [0.5 * (a[:-1] + a[1:]) for a in self.axes]
        grid = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)
        layer = layer_index_cells(domain.base, grid)
        layer[domain.slab.contains(grid)] = 0
        self.cell_layer = layer
        self._node_sets: dict[str, NodeSet] = {}
        for arr in (self.axes + (self.cell_layer,)):
            arr.setflags(write=False)

    # ---- sizes and indexing -------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    def flat(self, i, j, k) -> np.ndarray:
        ny, nz = self.shape[1], self.shape[2]
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def unflat(self, ids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.unravel_index(np.asarray(ids), self.shape)

    def node_coords(self, ids=None) -> np.ndarray:
        if ids is None:
            ids = np.arange(self.n_nodes)
        i, j, k = self.unflat(ids)
        return np.stack([self.axes[0][i], self.axes[1][j], self.axes[2][k]], axis=-1)

    def cell_ijk(self, cells) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.unravel_index(np.asarray(cells), self.cell_shape)

    def cell_nodes(self, cells) -> np.ndarray:
        """Global ids of the 8 corners of each flat cell id, shape (n, 8)."""
        ci, cj, ck = self.cell_ijk(cells)
        return self.flat(ci[:, None] + CORNERS[:, 0], cj[:, None] + CORNERS[:, 1],
                         ck[:, None] + CORNERS[:, 2])

    def cell_geometry(self, cells) -> tuple[np.ndarray, np.ndarray]:
        """Lower corner and edge lengths of flat cells, each shape (n, 3)."""
        ci, cj, ck = self.cell_ijk(cells)
        lo = np.stack([self.axes[0][ci], self.axes[1][cj], self.axes[2][ck]], axis=-1)
        size = np.stack([self.sizes[0][ci], self.sizes[1][cj], self.sizes[2][ck]], axis=-1)
        return lo, size

    def cell_centers(self, cells=None) -> np.ndarray:
        if cells is None:
            cells = np.arange(self.n_cells)
        lo, size = self.cell_geometry(cells)
        return lo + 0.5 * size

    # ---- regions -------------------------------------------------------------
    def region_cells(self, region: str) -> np.ndarray:
        """Boolean cell mask of a region, shape ``cell_shape``."""
        if region == AUGMENTED:
            return self.cell_layer >= 0
        if region == OMEGA:
            return self.cell_layer >= 1
        raise ValueError(f"unknown region {region!r}")

    def nodes(self, region: str) -> NodeSet:
        if region not in self._node_sets:
            self._node_sets[region] = self._build_nodes(self.region_cells(region))
        return self._node_sets[region]

    def _build_nodes(self, cmask: np.ndarray) -> NodeSet:
        nx, ny, nz = self.shape
        count = np.zeros(self.shape, dtype=np.int8)
        c = cmask.astype(np.int8)
        for di, dj, dk in CORNERS:
            count[di:nx - 1 + di, dj:ny - 1 + dj, dk:nz - 1 + dk] += c
        touched = count > 0
        full = np.zeros(self.shape, dtype=bool)
        full[1:-1, 1:-1, 1:-1] = count[1:-1, 1:-1, 1:-1] == 8
        ids = np.flatnonzero(touched.ravel())
        local = np.full(self.n_nodes, -1, dtype=np.int64)
        local[ids] = np.arange(len(ids))
        boundary = ~full.ravel()[ids]
        ijk = np.stack(self.unflat(ids), axis=-1)
        return NodeSet(ids, local, boundary, ijk)

    # ---- geometry queries ----------------------------------------------------
    def portion_nodes(self, portion: FlatPortion, strict: bool = True) -> np.ndarray:
        """Global ids of grid nodes on a flat portion (open rectangle if ``strict``)."""
        ax = portion.axis
        t = tangential_axes(ax)
        plane_idx = np.flatnonzero(np.isclose(self.axes[ax], portion.plane, atol=1e-12))
        if len(plane_idx) != 1:
            raise ResolutionIncompatible("portion plane is not a grid plane")
        sel = []
        for ta, (a, b) in zip(t, portion.rect):
            x = self.axes[ta]
            if strict:
                sel.append(np.flatnonzero((x > a + 1e-12) & (x < b - 1e-12)))
            else:
                sel.append(np.flatnonzero((x >= a - 1e-12) & (x <= b + 1e-12)))
        idx = [None, None, None]
        idx[ax] = plane_idx
        idx[t[0]] = sel[0]
        idx[t[1]] = sel[1]
        I, J, K = np.meshgrid(*idx, indexing="ij")
        # first tangential axis slowest, second fastest
        return np.squeeze(self.flat(I, J, K), axis=ax).reshape(-1)

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell id and local coordinates in [0,1]^3 of each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = []
        xi = []
        for a in range(3):
            ax = self.axes[a]
            i = np.clip(np.searchsorted(ax, x[:, a], side="right") - 1, 0, len(ax) - 2)
            idx.append(i)
            xi.append((x[:, a] - ax[i]) / (ax[i + 1] - ax[i]))
        cells = (idx[0] * self.cell_shape[1] + idx[1]) * self.cell_shape[2] + idx[2]
        return cells, np.stack(xi, axis=-1)

    def local_pitch(self, x) -> np.ndarray:
        """Largest edge of the cell containing each point."""
        cells, _ = self.locate(x)
        _, size = self.cell_geometry(cells)
        return size.max(axis=1)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.domain.geometry_dict(), sort_keys=True).encode())
        for a in self.axes:
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def domain_digest(self) -> str:
        blob = json.dumps(self.domain.geometry_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_mesh(domain: AugmentedDomain, resolution: int,
               refine: Sequence[Refinement] = ()) -> StructuredMesh:
    """Mesh the augmented domain with ``resolution`` cells per unit length.

    Every box face, portion edge and the slab must fall on grid planes, which
    holds whenever the domain pitch is a multiple of ``1/resolution``.
    """
    if resolution <= 0 or int(resolution) != resolution:
        raise ResolutionIncompatible("resolution must be a positive integer")
    q = domain.pitch * resolution
    if abs(q - round(q)) > 1e-9 * max(1.0, q) or round(q) < 1:
        raise ResolutionIncompatible(
            f"pitch {domain.pitch:g} is not a multiple of 1/{resolution}"
        )
    bb = domain.bounding_box
    axes = []
    for a in range(3):
        n = int(round((bb.hi[a] - bb.lo[a]) * resolution))
        ax = bb.lo[a] + np.arange(n + 1) / resolution
        ax[-1] = bb.hi[a]
        axes.append(ax)
    for r in refine:
        for a in range(3):
            axes[a] = _refine_axis(axes[a], r.point[a], r.levels, r.width)
    return StructuredMesh(domain, axes, int(resolution), refine)


def shape_values(xi: np.ndarray) -> np.ndarray:
    """Trilinear shape functions at local points, shape (n, 8)."""
    xi = np.atleast_2d(xi)
    f = np.where(CORNERS[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    return f.prod(axis=2)


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Reference gradients d(phi_n)/d(xi_a), shape (n, 8, 3)."""
    xi = np.atleast_2d(xi)
    f = np.where(CORNERS[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    df = np.where(CORNERS[None, :, :] == 1, 1.0, -1.0) * np.ones_like(f)
    out = np.empty(f.shape)
    out[..., 0] = df[..., 0] * f[..., 1] * f[..., 2]
    out[..., 1] = f[..., 0] * df[..., 1] * f[..., 2]
    out[..., 2] = f[..., 0] * f[..., 1] * df[..., 2]
    return out


@dataclass
class DiscreteField:
    """Complex nodal field on a mesh; nodes outside ``region`` hold zero."""

    mesh: StructuredMesh
    values: np.ndarray
    region: str = AUGMENTED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError("field must hold one value per grid node")
        self.values = v

    @classmethod
    def from_local(cls, mesh: StructuredMesh, region: str, local_values, meta=None):
        ns = mesh.nodes(region)
        v = np.zeros(mesh.n_nodes, dtype=complex)
        v[ns.ids] = local_values
        return cls(mesh, v, region, dict(meta or {}))

    def local(self, region: str | None = None) -> np.ndarray:
        return self.values[self.mesh.nodes(region or self.region).ids]

    def at(self, x) -> np.ndarray:
        cells, xi = self.mesh.locate(x)
        nodes = self.mesh.cell_nodes(cells)
        return np.einsum("nc,nc->n", shape_values(xi), self.values[nodes])

    def grad_at(self, x) -> np.ndarray:
        cells, xi = self.mesh.locate(x)
        return self.grad_in_cells(cells, xi)

    def grad_in_cells(self, cells, xi) -> np.ndarray:
        nodes = self.mesh.cell_nodes(cells)
        _, size = self.mesh.cell_geometry(cells)
        g = shape_gradients(xi) / size[:, None, :]
        return np.einsum("nca,nc->na", g, self.values[nodes])

    def value_in_cells(self, cells, xi) -> np.ndarray:
        nodes = self.mesh.cell_nodes(cells)
        return np.einsum("nc,nc->n", shape_values(xi), self.values[nodes])


def save_field(field: DiscreteField, path) -> None:
    """Write ``path`` (raw little-endian f64, order i, j, k, re/im) and ``path.json``."""
    path = Path(path)
    m = field.mesh
    data = np.empty(m.shape + (2,), dtype="<f8")
    v = field.values.reshape(m.shape)
    data[..., 0] = v.real
    data[..., 1] = v.imag
    side = {
        "shape": list(m.shape),
        "resolution": m.resolution,
        "pitch": 1.0 / m.resolution,
        "axes": [a.tolist() for a in m.axes],
        "domain_digest": m.domain_digest(),
        "mesh_digest": m.digest(),
        "region": field.region,
        "meta": field.meta,
    }
    try:
        path.write_bytes(data.tobytes(order="C"))
        path.with_name(path.name + ".json").write_text(json.dumps(side, indent=1, sort_keys=True))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_field(path, mesh: StructuredMesh) -> DiscreteField:
    """Read a field written by :func:`save_field`; the mesh must match the sidecar."""
    path = Path(path)
    side = json.loads(path.with_name(path.name + ".json").read_text())
    if side["mesh_digest"] != mesh.digest():
        raise ValueError("field was stored for a different mesh")
    raw = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(tuple(side["shape"]) + (2,))
    values = (raw[..., 0] + 1j * raw[..., 1]).ravel()
    return DiscreteField(mesh, values, side["region"], side["meta"])
