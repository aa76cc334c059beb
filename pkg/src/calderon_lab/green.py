"""Green functions of div(sigma grad .) on the augmented domain.

G(., y) = chi H(., y) + R(., y), where H is a closed-form kernel with pole y
for a frozen coefficient sigma0, chi is a smooth radial cutoff about y (or
identically one) and R solves a regular Dirichlet problem:

    int sigma grad R . grad phi = - int (chi (sigma - sigma0) grad H + H sigma grad chi) . grad phi
                                  + int (grad chi . sigma0 grad H) phi,
    R = -chi H on the outer boundary.

With chi = 1 this is the plain singular/regular splitting. With a cutoff
ball inside the slab (where sigma = sigma0 = I) the load lives in an
annulus only, and G restricted to the rest of the mesh is an exact discrete
solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admittivity import Admittivity
from .domain import AugmentedDomain
from .errors import LadderTooFine, PoleOutsideRegion
from .fem import AssembledSystem, assemble, load_vector, region_cell_ids
from .fundamental import FrozenCoefficients, Kernel, eval_H, frame_with_normal, laplace_kernel, sphere_rule
from .mesh import AUGMENTED, DiscreteField, StructuredMesh


@dataclass(frozen=True)
class Cutoff:
    """Smooth radial cutoff: 1 for |x-y| <= inner, 0 for |x-y| >= outer (C2 quintic)."""

    inner: float
    outer: float

    def __post_init__(self):
        if not 0 < self.inner < self.outer:
            raise ValueError("cutoff radii must satisfy 0 < inner < outer")

    def _s(self, rho):
        return np.clip((rho - self.inner) / (self.outer - self.inner), 0.0, 1.0)

    def value(self, x, y) -> np.ndarray:
        rho = np.linalg.norm(np.asarray(x, float) - y, axis=-1)
        s = self._s(rho)
        return 1.0 - s ** 3 * (10 - 15 * s + 6 * s * s)

    def grad(self, x, y) -> np.ndarray:
        d = np.asarray(x, float) - y
        rho = np.linalg.norm(d, axis=-1)
        s = self._s(rho)
        dchi = -30.0 * s * s * (1 - s) ** 2 / (self.outer - self.inner)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[..., None] > 0, d / rho[..., None], 0.0)
        return dchi[..., None] * unit


@dataclass
class GreenField:
    """Composed Green function G = chi H + R with pole ``pole``."""

    pole: np.ndarray
    kernel: Kernel
    cutoff: Cutoff | None
    regular: DiscreteField
    adm: Admittivity
    meta: dict = field(default_factory=dict)

    @property
    def mesh(self) -> StructuredMesh:
        return self.regular.mesh

    def _chi(self, x):
        if self.cutoff is None:
            return np.ones(np.asarray(x).shape[:-1])
        return self.cutoff.value(x, self.pole)

    def singular_value(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        out = np.zeros(len(x), dtype=complex)
        chi = self._chi(x)
        nz = chi != 0
        if np.any(nz):
            out[nz] = chi[nz] * kernel_value(self.kernel, x[nz])
        return out

    def singular_grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        out = np.zeros(x.shape, dtype=complex)
        if self.cutoff is None:
            return self.kernel.grad(x)
        chi = self._chi(x)
        nz = chi != 0
        if np.any(nz):
            xn = x[nz]
            out[nz] = (chi[nz, None] * self.kernel.grad(xn)
                       + self.kernel.value(xn)[:, None] * self.cutoff.grad(xn, self.pole))
        return out

    def value(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return self.singular_value(x) + self.regular.at(x)

    def grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return self.singular_grad(x) + self.regular.grad_at(x)

    def grad_in_cells(self, cells, xi, points) -> np.ndarray:
        return self.singular_grad(points) + self.regular.grad_in_cells(cells, xi)

    def nodal(self, ids) -> np.ndarray:
        """Composed values at grid nodes (the pole must not be a node)."""
        ids = np.asarray(ids)
        return self.singular_value(self.mesh.node_coords(ids)) + self.regular.values[ids]

    def flux(self, radius: float, n_theta: int = 32, n_phi: int = 64) -> complex:
        """Outward flux of -sigma grad G through the sphere of ``radius`` about the pole."""
        pts, nrm, w = sphere_rule(self.pole, radius, np.array([0.0, 0.0, 1.0]), n_theta, n_phi)
        cells, _ = self.mesh.locate(pts)
        layers = self.mesh.cell_layer.ravel()[cells]
        sig = self.adm.sigma_values(pts, layers)
        g = self.grad(pts)
        return complex(-np.sum(np.einsum("nij,nj,ni->n", sig, g, nrm) * w))


def kernel_value(kernel: Kernel, x) -> np.ndarray:
    """Kernel values that tolerate points on the frozen plane (H is continuous there)."""
    x = np.atleast_2d(np.asarray(x, float))
    if kernel.is_laplace:
        return kernel.value(x)
    fc = kernel.fc
    zf = fc.to_frame(x)[:, 2]
    on = np.abs(zf) <= 1e-12 * max(1.0, float(np.max(np.abs(x))))
    out = np.empty(len(x), dtype=complex)
    if np.any(~on):
        out[~on] = kernel.value(x[~on])
    if np.any(on):
        sy = float(np.sign(fc.to_frame(kernel.y)[2]))
        out[on] = eval_H(fc, x[on], kernel.y, "value", branch_sides=(1.0, sy))
    return out


def default_cutoff(domain: AugmentedDomain, y, fraction: float = 0.95) -> Cutoff:
    """Largest ball about ``y`` avoiding the closed outer box and the outer boundary."""
    y = np.asarray(y, float)
    rad = fraction * min(float(domain.dist_to_omega(y)), float(domain.dist_to_outer_boundary(y)))
    return Cutoff(0.5 * rad, rad)


def _near_pole_subdiv(mesh: StructuredMesh, cells: np.ndarray, y: np.ndarray, levels: int = 4,
                      reach: float = 1.0) -> np.ndarray:
    lo, size = mesh.cell_geometry(cells)
    d = np.linalg.norm(np.maximum(np.maximum(lo - y, y - (lo + size)), 0.0), axis=1)
    diag = np.linalg.norm(size, axis=1)
    sub = np.ones(len(cells), dtype=np.int64)
    sub[d < reach * diag] = levels
    return sub


def _load_for_pole(adm, mesh, region, kernel: Kernel, cutoff: Cutoff | None, order: int,
                   quad_center=None) -> np.ndarray:
    y = kernel.y
    cells = region_cell_ids(mesh, region)
    laplace = kernel.is_laplace
    if cutoff is not None:
        lo, size = mesh.cell_geometry(cells)
        d = np.linalg.norm(np.maximum(np.maximum(lo - y, y - (lo + size)), 0.0), axis=1)
        cells = cells[d < cutoff.outer]
    elif laplace:
        # sigma0 = I coincides with sigma in the slab
        cells = cells[mesh.cell_layer.ravel()[cells] > 0]
    if cutoff is None:
        center = y if quad_center is None else np.asarray(quad_center, float)
        subdiv = _near_pole_subdiv(mesh, cells, center)
    else:
        # the load vanishes inside the inner cutoff ball, so it is smooth
        subdiv = None

    def F(pts, layers):
        out = np.zeros(pts.shape, dtype=complex)
        sig = adm.sigma_values(pts, layers)
        diff = sig - kernel.sigma0(pts)
        chi = np.ones(len(pts)) if cutoff is None else cutoff.value(pts, y)
        need = (np.abs(diff).reshape(len(pts), -1).max(axis=1) > 0) & (chi > 0)
        if np.any(need):
            g = kernel.grad(pts[need])
            out[need] = -chi[need, None] * np.einsum("nij,nj->ni", diff[need], g)
        if cutoff is not None:
            gc = cutoff.grad(pts, y)
            act = np.any(gc != 0, axis=1)
            if np.any(act):
                Hv = kernel.value(pts[act])
                out[act] -= Hv[:, None] * np.einsum("nij,nj->ni", sig[act], gc[act])
        return out

    def f(pts, layers):
        out = np.zeros(len(pts), dtype=complex)
        gc = cutoff.grad(pts, y)
        act = np.any(gc != 0, axis=1)
        if np.any(act):
            p = pts[act]
            s0g = np.einsum("nij,nj->ni", kernel.sigma0(p), kernel.grad(p))
            out[act] = np.einsum("ni,ni->n", gc[act], s0g)
        return out

    return load_vector(mesh, region, F, None if cutoff is None else f, cells, order, subdiv)


def compute_greens(adm: Admittivity, mesh: StructuredMesh, poles, *,
                   frozen=None, cutoff="auto", system: AssembledSystem | None = None,
                   check_region: bool = True, snap: bool | None = None, order: int | None = None,
                   quad_center=None) -> list[GreenField]:
    """Green functions for several poles sharing one factorisation.

    Without ``frozen`` the kernel is the Laplace fundamental solution (the
    slab coefficient) and poles must lie in the pole region of the slab.
    With ``frozen`` (one FrozenCoefficients for all poles, or a sequence with
    one entry per pole, None meaning Laplace) the two-phase kernel is used
    and poles may sit anywhere off the frozen plane. ``cutoff`` is ``"auto"``
    (largest ball in the slab for the Laplace kernel, none otherwise),
    ``None`` (chi = 1) or a :class:`Cutoff`. Poles sitting on grid nodes are
    moved to the centre of their cell; ``snap=True`` does this for every pole
    and ``snap=False`` never moves a pole.
    ``quad_center`` fixes the point around which composite quadrature is
    applied (useful when differencing in the pole).
    """
    domain = mesh.domain
    sys = system if system is not None else assemble(adm, mesh, AUGMENTED)
    poles = np.atleast_2d(np.asarray(poles, float)).copy()
    cells, xi = mesh.locate(poles)
    on_node = np.all((np.abs(xi) < 1e-12) | (np.abs(xi - 1) < 1e-12), axis=1)
    move = on_node if snap is None else np.full(len(poles), bool(snap))
    if np.any(move):
        poles[move] = mesh.cell_centers(cells[move])
    if frozen is None or isinstance(frozen, FrozenCoefficients):
        frozen_list = [frozen] * len(poles)
    else:
        frozen_list = list(frozen)
        if len(frozen_list) != len(poles):
            raise ValueError("one frozen coefficient set per pole is required")
    kernels = []
    cutoffs = []
    for y, fc in zip(poles, frozen_list):
        if fc is None:
            if check_region and not bool(domain.in_pole_region(y)):
                raise PoleOutsideRegion(f"pole {y} is not in the pole region of the slab")
            k = laplace_kernel(y)
            c = default_cutoff(domain, y) if isinstance(cutoff, str) else cutoff
        else:
            k = Kernel(fc, y)
            c = None if isinstance(cutoff, str) else cutoff
        kernels.append(k)
        cutoffs.append(c)
    ns = sys.nodes
    bcoords = sys.boundary_coords()
    loads = np.zeros((ns.n, len(poles)), dtype=complex)
    bvals = np.zeros((len(sys.bnd), len(poles)), dtype=complex)
    for j, (k, c) in enumerate(zip(kernels, cutoffs)):
        q = order if order is not None else (4 if c is not None else 3)
        loads[:, j] = _load_for_pole(adm, mesh, sys.region, k, c, q, quad_center)
        chi = np.ones(len(bcoords)) if c is None else c.value(bcoords, k.y)
        nz = chi > 0
        bvals[nz, j] = -chi[nz] * kernel_value(k, bcoords[nz])
    U = sys.solve(bvals, loads)
    out = []
    for j, (y, k, c, fc) in enumerate(zip(poles, kernels, cutoffs, frozen_list)):
        R = DiscreteField.from_local(mesh, sys.region, U[:, j], {"kind": "green_regular"})
        out.append(GreenField(y, k, c, R, adm, {"regime": "slab" if fc is None else "frozen"}))
    return out


def compute_green(adm: Admittivity, mesh: StructuredMesh, pole, **kwargs) -> GreenField:
    return compute_greens(adm, mesh, [pole], **kwargs)[0]


def frozen_at_portion(adm: Admittivity, domain: AugmentedDomain, owner: int, point=None
                      ) -> FrozenCoefficients:
    """Freeze the coefficient at a point of the portion on box ``owner``.

    The frame normal e3' points into the box (the inner layer D_{owner+1});
    ``gamma_minus`` is the outer layer value (1 in the slab for owner 0).
    """
    base = domain.base
    portion = base.portion(owner)
    P = portion.center if point is None else np.asarray(point, float)
    inner = owner + 1
    g_plus = complex(adm.gammas[inner - 1](P))
    g_minus = 1.0 + 0j if owner == 0 else complex(adm.gammas[owner - 1](P))
    A0 = adm.anisotropy(P)
    frame = frame_with_normal(-portion.normal)
    return FrozenCoefficients(g_minus, g_plus, A0, P, frame)


def frozen_at_point(adm: Admittivity, domain: AugmentedDomain, y) -> FrozenCoefficients | None:
    """Single-phase freeze of the coefficient at ``y`` (None in the slab, where it is the identity)."""
    y = np.asarray(y, float)
    layer = domain.layer_index(y, on_interface="lower")
    if layer == 0:
        return None
    g = complex(adm.gammas[layer - 1](y))
    # the interface plane of a single-phase kernel is irrelevant; keep it far away
    far = y - 1e3 * np.array([0.0, 0.0, 1.0])
    return FrozenCoefficients(g, g, adm.anisotropy(y), far, np.eye(3))


@dataclass
class BoundReport:
    level: int
    c_value: float
    c_grad: float
    n_used: int
    n_excluded_floor: int
    n_excluded_margin: int


def pointwise_bound_report(G: GreenField, samples, margin: float | None = None,
                           floor: float = 3.0) -> BoundReport:
    """Empirical constants sup |G| |x-y| and sup |grad G| |x-y|^2 over ``samples``.

    Samples closer than ``margin`` (default r0) to the outer boundary or closer
    than ``floor`` local mesh pitches to the pole are dropped.
    """
    x = np.atleast_2d(np.asarray(samples, float))
    domain = G.mesh.domain
    margin = domain.r0 if margin is None else margin
    inside = domain.contains(x) & (domain.dist_to_outer_boundary(x) >= margin - 1e-12)
    dist = np.linalg.norm(x - G.pole, axis=1)
    resolved = dist >= floor * G.mesh.local_pitch(x)
    use = inside & resolved
    xs = x[use]
    d = dist[use]
    if len(xs) == 0:
        c0 = c1 = float("nan")
    else:
        c0 = float(np.max(np.abs(G.value(xs)) * d))
        c1 = float(np.max(np.linalg.norm(G.grad(xs), axis=1) * d ** 2))
    return BoundReport(G.mesh.resolution, c0, c1, int(use.sum()),
                       int((inside & ~resolved).sum()), int((~inside).sum()))


@dataclass
class AsymptoticReport:
    interface: int
    P: np.ndarray
    radii: np.ndarray
    x_bar: np.ndarray
    y_bar: np.ndarray
    remainder: np.ndarray        # |G - H| |x - y|
    remainder_grad: np.ndarray   # |grad_x (G - H)| |x - y|^2
    remainder_mixed: np.ndarray  # |grad_x grad_y (G - H)| |x - y|^3
    theta1: float
    theta2: float
    theta3: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.remainder) < 0))


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def asymptotic_exponent_fit(adm: Admittivity, mesh: StructuredMesh, interface: int, ladder,
                            point=None, system: AssembledSystem | None = None,
                            mixed: bool = True) -> AsymptoticReport:
    """Decay of the remainder G - H near the portion on box ``interface``.

    For each r the pole is y = Q - r e3' (outer layer) and the observation
    point its mirror x = Q + r e3' (inner layer), with H the two-phase kernel
    frozen at Q. Returns fitted log-log slopes against |x - y| = 2r.
    """
    domain = mesh.domain
    fc = frozen_at_portion(adm, domain, interface, point)
    e3 = fc.normal
    Q = fc.origin
    radii = np.asarray(sorted(ladder, reverse=True), float)
    sys = system if system is not None else assemble(adm, mesh, AUGMENTED)
    rem, remg, remm, xs, ys = [], [], [], [], []
    for r in radii:
        y = Q - r * e3
        x = Q + r * e3
        hloc = float(mesh.local_pitch(y[None])[0])
        if r < 4 * hloc - 1e-12:
            raise LadderTooFine(f"r = {r:g} is below 4h = {4 * hloc:g} at the pole")
        poles = [y]
        if mixed:
            delta = 0.5 * hloc
            for a in range(3):
                e = np.zeros(3)
                e[a] = delta
                poles += [y + e, y - e]
        Gs = compute_greens(adm, mesh, poles, frozen=fc, cutoff=None, system=sys,
                            quad_center=y)
        G = Gs[0]
        # chi = 1, so G - H is the regular part
        diff = G.regular.at(x[None])[0]
        gdiff = G.regular.grad_at(x[None])[0]
        rem.append(abs(diff) * 2 * r)
        remg.append(np.linalg.norm(gdiff) * (2 * r) ** 2)
        if mixed:
            M = np.zeros((3, 3), dtype=complex)
            for a in range(3):
                gp = Gs[1 + 2 * a].regular.grad_at(x[None])[0]
                gm = Gs[2 + 2 * a].regular.grad_at(x[None])[0]
                M[:, a] = (gp - gm) / (2 * delta)
            remm.append(np.linalg.norm(M) * (2 * r) ** 3)
        xs.append(x)
        ys.append(y)
    dist = 2 * radii
    t3 = fit_slope(dist, remm) if mixed else float("nan")
    return AsymptoticReport(
        interface, Q, radii, np.array(xs), np.array(ys), np.array(rem), np.array(remg),
        np.array(remm) if mixed else np.full(len(radii), np.nan),
        fit_slope(dist, rem), fit_slope(dist, remg), t3,
    )
