"""Probe functionals built from pairs of Green functions.

* S_k(y, z): volume integral of (sigma1 - sigma2) grad G1(., y) . grad G2(., z)
  over U_k, the union of layers deeper than k.
* S_0 in boundary form and the misfit functional over two pole grids.
* The split of S_{M-1}(w, w) into a part near the probe point and the rest.
* A three-sphere ratio checker for discrete solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admittivity import Admittivity, sup_norm_diff
from .domain import AugmentedDomain
from .errors import (BallOutsideDomain, GridOutsidePoleRegion, LadderTooFine, NotASolution,
                     PoleTooClose, RadiiOrdering)
from .fem import AssembledSystem, assemble, integrate_cells, iter_quadrature, load_vector
from .fundamental import sphere_rule
from .green import (GreenField, compute_greens, fit_slope, frozen_at_point,
                    frozen_at_portion)
from .mesh import OMEGA, DiscreteField, StructuredMesh


def u_cells(mesh: StructuredMesh, k: int) -> np.ndarray:
    """Cells of U_k (layers k+1 and deeper)."""
    return np.flatnonzero(mesh.cell_layer.ravel() > k)


def w_cells(mesh: StructuredMesh, k: int) -> np.ndarray:
    """Cells of W_k (slab and layers 1..k)."""
    return np.flatnonzero(mesh.cell_layer.ravel() <= k)


def _dist_to_u(domain: AugmentedDomain, k: int, x) -> np.ndarray:
    return domain.base.boxes[k].distance(x)


def _check_poles(mesh: StructuredMesh, k: int, poles) -> None:
    poles = np.atleast_2d(poles)
    d = _dist_to_u(mesh.domain, k, poles)
    h = mesh.local_pitch(poles)
    bad = d < 2 * h - 1e-12
    if np.any(bad):
        raise PoleTooClose(f"pole {poles[bad][0]} is within 2h of U_{k}")


def _greens(adm: Admittivity, mesh: StructuredMesh, poles, system: AssembledSystem,
            cutoff=None, frozen=None, quad_center=None) -> list[GreenField]:
    """Green fields with a kernel chosen per pole.

    Poles in the slab pole region use the Laplace kernel with a cutoff;
    other poles use the coefficient frozen at the pole unless ``frozen`` is
    given.
    """
    dom = mesh.domain
    poles = np.atleast_2d(np.asarray(poles, float))
    if frozen is None:
        frozen = [None if bool(dom.in_pole_region(y)) else frozen_at_point(adm, dom, y) for y in poles]
    return compute_greens(adm, mesh, poles, frozen=frozen, cutoff="auto" if cutoff is None else cutoff,
                          system=system, check_region=False, quad_center=quad_center)


def _sk_integral(adm1, adm2, mesh, cells, G1: GreenField, G2: GreenField, order: int = 3) -> np.ndarray:
    def integrand(q):
        d = adm1.sigma_values(q.points, q.layers) - adm2.sigma_values(q.points, q.layers)
        g1 = G1.grad_in_cells(q.cells, q.xi, q.points)
        g2 = G2.grad_in_cells(q.cells, q.xi, q.points)
        return np.einsum("ni,nij,nj->n", g1, d, g2)

    return integrate_cells(mesh, cells, integrand, order)


@dataclass
class SingularSolution:
    k: int
    cells: np.ndarray
    green1: GreenField
    green2: GreenField
    value: complex


def eval_Sk(adm1: Admittivity, adm2: Admittivity, mesh: StructuredMesh, k: int, y, z,
            systems=None, greens=None, order: int = 3) -> SingularSolution:
    """S_k(y, z) by cell quadrature over U_k."""
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    _check_poles(mesh, k, np.stack([y, z]))
    s1, s2 = systems if systems is not None else (assemble(adm1, mesh), assemble(adm2, mesh))
    if greens is None:
        G1 = _greens(adm1, mesh, [y], s1)[0]
        G2 = _greens(adm2, mesh, [z], s2)[0]
    else:
        G1, G2 = greens
    cells = u_cells(mesh, k)
    val = complex(_sk_integral(adm1, adm2, mesh, cells, G1, G2, order).sum())
    return SingularSolution(k, cells, G1, G2, val)


def _shifted(p, axis: int, delta: float) -> list[np.ndarray]:
    e = np.zeros(3)
    e[axis] = delta
    return [p + e, p - e]


def _pole_derivative_greens(adm, mesh, p, axis, system, frozen=None):
    """Green fields at p +- delta e_axis, delta = local pitch / 2.

    Slab poles use the plain splitting (no cutoff): its load depends smoothly
    on the pole, so the differences converge like delta^2. A cutoff ball
    sliding across under-resolved cells would not.
    """
    delta = 0.5 * float(mesh.local_pitch(p[None])[0])
    dom = mesh.domain
    if frozen is None and bool(dom.in_pole_region(p)):
        Gs = compute_greens(adm, mesh, _shifted(p, axis, delta), cutoff=None, system=system,
                            check_region=False, snap=False)
    else:
        fc = frozen if frozen is not None else frozen_at_point(adm, dom, p)
        Gs = compute_greens(adm, mesh, _shifted(p, axis, delta), frozen=fc, cutoff=None,
                            system=system, quad_center=p)
    return Gs, delta


class _DifferenceField:
    """(G(p + delta e) - G(p - delta e)) / (2 delta) as a field of x."""

    def __init__(self, Gp: GreenField, Gm: GreenField, delta: float):
        self.Gp, self.Gm, self.delta = Gp, Gm, delta

    def grad_in_cells(self, cells, xi, points):
        return (self.Gp.grad_in_cells(cells, xi, points)
                - self.Gm.grad_in_cells(cells, xi, points)) / (2 * self.delta)


def eval_Sk_mixed(adm1: Admittivity, adm2: Admittivity, mesh: StructuredMesh, k: int, y, z,
                  h_idx: int, l_idx: int, systems=None, frozen=(None, None), order: int = 3) -> complex:
    """d^2 S_k / dy_h dz_l by central differences of whole Green fields (axes 0-based)."""
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    _check_poles(mesh, k, np.stack([y, z]))
    s1, s2 = systems if systems is not None else (assemble(adm1, mesh), assemble(adm2, mesh))
    G1s, d1 = _pole_derivative_greens(adm1, mesh, y, h_idx, s1, frozen[0])
    G2s, d2 = _pole_derivative_greens(adm2, mesh, z, l_idx, s2, frozen[1])
    D1 = _DifferenceField(G1s[0], G1s[1], d1)
    D2 = _DifferenceField(G2s[0], G2s[1], d2)
    return complex(_sk_integral(adm1, adm2, mesh, u_cells(mesh, k), D1, D2, order).sum())


def sk_field(adm1: Admittivity, adm2: Admittivity, mesh: StructuredMesh, k: int, z,
             systems=None) -> DiscreteField:
    """Discrete field y -> S_k(y, z) through the sigma1 adjoint problem.

    Its nodal values solve K1 w = b with b(phi) = int_{U_k} (sigma1 - sigma2)
    grad phi . grad G2(., z), so w is an exact discrete solution at every
    node whose hat function misses U_k.
    """
    s1, s2 = systems if systems is not None else (assemble(adm1, mesh), assemble(adm2, mesh))
    G2 = _greens(adm2, mesh, [z], s2)[0]

    def F(pts, layers):
        d = adm1.sigma_values(pts, layers) - adm2.sigma_values(pts, layers)
        return np.einsum("nij,nj->ni", d, G2.grad(pts))

    b = load_vector(mesh, s1.region, F, None, u_cells(mesh, k), order=3)
    w = s1.solve(None, b)
    return DiscreteField.from_local(mesh, s1.region, w, {"kind": "sk_field", "k": k, "z": list(map(float, z))})


def sk_field_residual(field: DiscreteField, system: AssembledSystem, k: int, margin: float = 2.0) -> float:
    """Relative sigma1 residual of a field on nodes at least ``margin`` h inside W_k."""
    mesh = system.mesh
    ids = system.nodes.ids[system.inn]
    x = mesh.node_coords(ids)
    keep = _dist_to_u(mesh.domain, k, x) >= margin * mesh.local_pitch(x) - 1e-12
    keep &= mesh.domain.dist_to_outer_boundary(x) > 1e-12
    u = field.values[system.nodes.ids]
    Ku = system.K @ u
    scale = abs(system.K) @ np.abs(u)
    rows = system.inn[keep]
    return float(np.linalg.norm(Ku[rows]) / np.linalg.norm(scale[rows]))


@dataclass
class PoleGrid:
    points: np.ndarray
    weights: np.ndarray


def gauss_grid(lo, hi, n: int = 3) -> PoleGrid:
    """Tensor Gauss-Legendre nodes and weights on a box."""
    t, w = np.polynomial.legendre.leggauss(n)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    axes = [lo[a] + (hi[a] - lo[a]) * (t + 1) / 2 for a in range(3)]
    wts = [w * (hi[a] - lo[a]) / 2 for a in range(3)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", *wts).ravel()
    return PoleGrid(P, W)


def default_pole_grids(domain: AugmentedDomain, n: int = 3) -> tuple[PoleGrid, PoleGrid]:
    """Two disjoint side-by-side halves of the pole region's bounding box."""
    c = domain.pole_centers
    h = domain.pitch
    lo = c.min(axis=0) - h / 2
    hi = c.max(axis=0) + h / 2
    t = [a for a in range(3) if a != domain.base.sigma.axis][0]
    mid = 0.5 * (lo[t] + hi[t])
    hi_y = hi.copy()
    hi_y[t] = mid
    lo_z = lo.copy()
    lo_z[t] = mid
    return gauss_grid(lo, hi_y, n), gauss_grid(lo_z, hi, n)


@dataclass
class MisfitResult:
    grid_y: PoleGrid
    grid_z: PoleGrid
    S0: np.ndarray            # boundary form, shape (len(grid_y), len(grid_z))
    J: float
    S0_volume: np.ndarray | None = None

    @property
    def form_mismatch(self) -> float:
        if self.S0_volume is None:
            return float("nan")
        scale = np.maximum(np.abs(self.S0), np.abs(self.S0_volume))
        scale = np.where(scale > 0, scale, 1.0)
        return float(np.max(np.abs(self.S0 - self.S0_volume) / scale))


def _check_grid(domain: AugmentedDomain, grid: PoleGrid) -> None:
    ok = domain.in_pole_region(grid.points)
    if not np.all(ok):
        raise GridOutsidePoleRegion(f"grid point {grid.points[~ok][0]} is outside the pole region")


def _sigma_data(G: list[GreenField], sys_omega: AssembledSystem, nodes: np.ndarray, tol: float = 1e-8):
    """Traces and variational fluxes of Green fields on the portion nodes."""
    ids = sys_omega.nodes.ids
    U = np.stack([g.regular.values[ids] + 0 for g in G], axis=1)
    # inside the outer box G coincides with its regular part (the cutoff vanishes there)
    for j, g in enumerate(G):
        res = sys_omega.interior_residual(U[:, j])
        if res > tol:
            raise NotASolution(f"Green field {j} is not a discrete solution in the domain ({res:.1e})")
    loc = sys_omega.nodes.local[nodes]
    return U[loc], (sys_omega.K @ U)[loc]


def misfit(adm1: Admittivity, adm2: Admittivity, mesh: StructuredMesh, grid_y: PoleGrid,
           grid_z: PoleGrid, systems=None, with_volume: bool = False) -> MisfitResult:
    """Boundary-form S_0 on all pole pairs and the misfit J = sum w_y w_z |S_0|^2."""
    dom = mesh.domain
    _check_grid(dom, grid_y)
    _check_grid(dom, grid_z)
    if systems is None:
        systems = (assemble(adm1, mesh), assemble(adm2, mesh),
                   assemble(adm1, mesh, OMEGA), assemble(adm2, mesh, OMEGA))
    s1, s2, o1, o2 = systems
    G1 = compute_greens(adm1, mesh, grid_y.points, system=s1)
    G2 = compute_greens(adm2, mesh, grid_z.points, system=s2)
    nodes = mesh.portion_nodes(dom.base.sigma, strict=False)
    V1, D1 = _sigma_data(G1, o1, nodes)
    V2, D2 = _sigma_data(G2, o2, nodes)
    S0 = D1.T @ V2 - V1.T @ D2
    J = float(np.einsum("i,j,ij->", grid_y.weights, grid_z.weights, np.abs(S0) ** 2))
    vol = None
    if with_volume:
        vol = np.zeros_like(S0)
        for q in iter_quadrature(mesh, u_cells(mesh, 0), order=2):
            d = adm1.sigma_values(q.points, q.layers) - adm2.sigma_values(q.points, q.layers)
            g1 = np.stack([g.grad_in_cells(q.cells, q.xi, q.points) for g in G1])
            g2 = np.stack([g.grad_in_cells(q.cells, q.xi, q.points) for g in G2])
            vol += np.einsum("ank,nkl,bnl,n->ab", g1, d, g2, q.weights, optimize=True)
    return MisfitResult(grid_y, grid_z, S0, J, vol)


@dataclass
class PeelingReport:
    M: int
    P: np.ndarray
    rho: float
    radii: np.ndarray
    probes: np.ndarray
    S: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    variant: str
    E: float
    slope_I1: float = float("nan")
    caccioppoli: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def additivity_defect(self) -> float:
        return float(np.max(np.abs(self.I1 + self.I2 - self.S)))


def peeling_split(adm1: Admittivity, adm2: Admittivity, mesh: StructuredMesh, M: int, r,
                  variant: str = "value", systems=None, rho: float | None = None) -> PeelingReport:
    """Split S_{M-1}(w, w) at w = P + r nu into the part near P in D_M and the rest.

    P is the centre of the portion between D_{M-1} and D_M, nu its normal
    pointing into D_{M-1}. ``r`` may be a single radius or a ladder; with
    several radii the log-log slope of |I1| is fitted.
    """
    if variant not in ("value", "mixed_nn"):
        raise ValueError("variant must be 'value' or 'mixed_nn'")
    dom = mesh.domain
    radii = np.atleast_1d(np.asarray(r, float))
    owner = M - 1
    portion = dom.base.portion(owner)
    P = portion.center
    nu = portion.normal
    rho = dom.r0 / 4 if rho is None else rho
    s1, s2 = systems if systems is not None else (assemble(adm1, mesh), assemble(adm2, mesh))
    fc1 = frozen_at_portion(adm1, dom, owner)
    fc2 = frozen_at_portion(adm2, dom, owner)
    cells = u_cells(mesh, M - 1)
    centers = mesh.cell_centers(cells)
    near = (np.linalg.norm(centers - P, axis=1) < rho) & (mesh.cell_layer.ravel()[cells] == M)
    E = sup_norm_diff(adm1, adm2, dom.base).E
    n_axis = portion.axis
    S, I1, I2, probes = [], [], [], []
    for rr in radii:
        w = P + rr * nu
        hloc = float(mesh.local_pitch(w[None])[0])
        if rr < 4 * hloc - 1e-12 or rr >= dom.r0 / 2:
            raise LadderTooFine(f"r = {rr:g} must lie in [4h, r0/2) with 4h = {4 * hloc:g}")
        if variant == "value":
            G1 = compute_greens(adm1, mesh, [w], frozen=fc1, cutoff=None, system=s1)[0]
            G2 = compute_greens(adm2, mesh, [w], frozen=fc2, cutoff=None, system=s2)[0]
        else:
            G1s, d1 = _pole_derivative_greens(adm1, mesh, w, n_axis, s1, fc1)
            G2s, d2 = _pole_derivative_greens(adm2, mesh, w, n_axis, s2, fc2)
            G1 = _DifferenceField(G1s[0], G1s[1], d1)
            G2 = _DifferenceField(G2s[0], G2s[1], d2)
        per_cell = _sk_integral(adm1, adm2, mesh, cells, G1, G2)
        i1 = complex(per_cell[near].sum())
        i2 = complex(per_cell[~near].sum())
        S.append(i1 + i2)
        I1.append(i1)
        I2.append(i2)
        probes.append(w)
    I1 = np.array(I1)
    I2 = np.array(I2)
    slope = fit_slope(radii, np.abs(I1)) if len(radii) > 1 and np.all(I1 != 0) else float("nan")
    cac = np.abs(I2) * rho / E if E > 0 else np.zeros(len(radii))
    return PeelingReport(M, P, rho, radii, np.array(probes), np.array(S), I1, I2, variant, E,
                         slope, cac)


@dataclass
class ThreeSphereReport:
    x0: np.ndarray
    radii: tuple[float, float, float]
    norms: tuple[float, float, float]
    s: float
    lam: float
    delta: float
    C_min: float

    @property
    def delta_in_unit_interval(self) -> bool:
        return 0.0 < self.delta < 1.0

    @property
    def trivial(self) -> bool:
        return self.norms[1] == 0.0


def ball_l2_norm(v: DiscreteField, x0, radius: float, n_r: int = 16, n_theta: int = 24,
                 n_phi: int = 48) -> float:
    """L2 norm on a ball by a radial Gauss rule times a spherical product rule."""
    t, w = np.polynomial.legendre.leggauss(n_r)
    rs = radius * (t + 1) / 2
    wr = w * radius / 2
    total = 0.0
    for rk, wk in zip(rs, wr):
        pts, _, ws = sphere_rule(np.asarray(x0, float), rk, np.array([0.0, 0.0, 1.0]), n_theta, n_phi)
        total += wk * np.sum(np.abs(v.at(pts)) ** 2 * ws)
    return float(np.sqrt(total))


def three_sphere_delta(r1: float, r2: float, r3: float, s: float, lam: float) -> float:
    return ((2 * r2 / lam) ** (-s) - r3 ** (-s)) / (r1 ** (-s) - r3 ** (-s))


def three_sphere_check(v: DiscreteField, x0, r1: float, r2: float, r3: float, s: float = 1.0,
                       lam: float | None = None, system: AssembledSystem | None = None,
                       residual_tol: float = 1e-8) -> ThreeSphereReport:
    """Smallest C with |v|_{r2} <= C |v|_{r1}^delta |v|_{r3}^(1 - delta)."""
    if not 0 < r1 < r2 < r3:
        raise RadiiOrdering("radii must satisfy 0 < r1 < r2 < r3")
    dom = v.mesh.domain
    x0 = np.asarray(x0, float)
    if not bool(dom.contains(x0)) or float(dom.dist_to_outer_boundary(x0)) < r3:
        raise BallOutsideDomain(f"ball of radius {r3:g} about {x0} leaves the domain")
    if system is not None:
        res = system.interior_residual(v.values[system.nodes.ids])
        if res > residual_tol:
            raise NotASolution(f"interior residual {res:.2e}")
    lam = dom.base.apriori.lam if lam is None else lam
    n1, n2, n3 = (ball_l2_norm(v, x0, r) for r in (r1, r2, r3))
    delta = three_sphere_delta(r1, r2, r3, s, lam)
    if n2 == 0.0:
        C = 0.0
    elif n1 == 0.0 or n3 == 0.0:
        C = float("inf")
    else:
        C = n2 / (n1 ** delta * n3 ** (1 - delta))
    return ThreeSphereReport(x0, (r1, r2, r3), (n1, n2, n3), s, lam, delta, C)
