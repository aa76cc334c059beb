"""Closed-form kernels: Laplace fundamental solution and the two-phase anisotropic kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPoints, NotSPD, OnInterface

INV_4PI = 1.0 / (4.0 * np.pi)
EIG_CLIP = 1e-14
ON_PLANE_TOL = 1e-13


def _dist(d: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0):
        raise CoincidentPoints("kernel evaluated at its pole")
    return r


def eval_Gamma(x, y) -> np.ndarray:
    """1 / (4 pi |x - y|), normalised so that -Laplace(Gamma) is the unit point mass."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return INV_4PI / _dist(d)


def grad_Gamma(d) -> np.ndarray:
    """Gradient of Gamma as a function of the difference vector ``d = x - y``."""
    d = np.asarray(d, dtype=float)
    r = _dist(d)
    return -INV_4PI * d / (r ** 3)[..., None]


def hess_Gamma(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    r = _dist(d)
    outer = d[..., :, None] * d[..., None, :]
    return INV_4PI * (3.0 * outer / (r ** 5)[..., None, None]
                      - np.eye(3) / (r ** 3)[..., None, None])


@dataclass(frozen=True)
class AnisotropicMap:
    """Linear map straightening the anisotropy: Ltilde = R sqrt(A^-1)."""

    Ltilde: np.ndarray
    Lstar: np.ndarray
    J: np.ndarray
    detJ: float
    R: np.ndarray


def _rotation_to_e3(u: np.ndarray) -> np.ndarray:
    """Rotation taking the unit vector ``u`` to e3 and fixing span{u, e3}^perp."""
    e3 = np.array([0.0, 0.0, 1.0])
    k = np.cross(u, e3)
    s = np.linalg.norm(k)
    c = float(np.dot(u, e3))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about e1
        return np.diag([1.0, -1.0, -1.0])
    k = k / s
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * Kx + (1 - c) * (Kx @ Kx)


def build_anisotropic_map(A0) -> AnisotropicMap:
    A0 = np.asarray(A0, dtype=float)
    if A0.shape != (3, 3) or not np.allclose(A0, A0.T, rtol=0, atol=1e-12 * np.abs(A0).max()):
        raise NotSPD("matrix is not symmetric")
    ev, V = np.linalg.eigh(0.5 * (A0 + A0.T))
    if ev[0] <= 0:
        raise NotSPD(f"smallest eigenvalue {ev[0]:.3e} is not positive")
    ev = np.maximum(ev, EIG_CLIP)
    sqrtA = (V * np.sqrt(ev)) @ V.T
    J = (V / np.sqrt(ev)) @ V.T
    v = sqrtA[:, 2]
    R = _rotation_to_e3(v / np.linalg.norm(v))
    L = R @ J
    Ls = L.copy()
    Ls[2] *= -1.0
    return AnisotropicMap(L, Ls, J, float(np.prod(1.0 / np.sqrt(ev))), R)


@dataclass(frozen=True)
class FrozenCoefficients:
    """Two-phase coefficient gamma0 * A0 with a flat interface through ``origin``.

    ``frame`` is an orthogonal matrix with rows e1', e2', e3'; frame coordinates
    are ``frame @ (x - origin)``. ``gamma_plus`` holds on the side e3' > 0.
    """

    gamma_minus: complex
    gamma_plus: complex
    A0: np.ndarray
    origin: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma_minus", complex(self.gamma_minus))
        object.__setattr__(self, "gamma_plus", complex(self.gamma_plus))
        object.__setattr__(self, "A0", np.asarray(self.A0, dtype=float))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        Q = np.asarray(self.frame, dtype=float)
        if not np.allclose(Q @ Q.T, np.eye(3), atol=1e-12) or np.linalg.det(Q) < 0:
            raise ValueError("frame must be a proper rotation")
        object.__setattr__(self, "frame", Q)
        if abs(self.gamma_minus + self.gamma_plus) == 0:
            raise ValueError("gamma + gamma_tilde must not vanish")
        object.__setattr__(self, "_map", build_anisotropic_map(Q @ self.A0 @ Q.T))

    @property
    def amap(self) -> AnisotropicMap:
        return self._map

    @property
    def normal(self) -> np.ndarray:
        """World direction of e3' (pointing into the gamma_plus side)."""
        return self.frame[2]

    @classmethod
    def single_phase(cls, gamma: complex = 1.0, A0=None, origin=(0, 0, 0), frame=None):
        return cls(gamma, gamma, np.eye(3) if A0 is None else A0, np.asarray(origin, float),
                   np.eye(3) if frame is None else frame)

    def to_frame(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.origin) @ self.frame.T

    def side(self, x) -> np.ndarray:
        return np.sign(self.to_frame(x)[..., 2])

    def gamma0(self, x) -> np.ndarray:
        xf3 = self.to_frame(x)[..., 2]
        return np.where(xf3 > 0, self.gamma_plus, self.gamma_minus)

    def sigma0(self, x) -> np.ndarray:
        return self.gamma0(x)[..., None, None] * self.A0


def frame_with_normal(e3: np.ndarray) -> np.ndarray:
    """Proper rotation whose third row is the unit vector ``e3``."""
    e3 = np.asarray(e3, dtype=float)
    e3 = e3 / np.linalg.norm(e3)
    trial = np.eye(3)[int(np.argmin(np.abs(e3)))]
    e1 = trial - np.dot(trial, e3) * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3])


def _branch_coeffs(fc: FrozenCoefficients, xs: np.ndarray, ys: np.ndarray):
    g, gt = fc.gamma_minus, fc.gamma_plus
    up = (xs > 0) & (ys > 0)
    lo = (xs < 0) & (ys < 0)
    c1 = np.where(up, 1 / gt, np.where(lo, 1 / g, 2 / (g + gt)))
    c2 = np.where(up, (gt - g) / (gt * (gt + g)), np.where(lo, (g - gt) / (g * (gt + g)), 0.0))
    return c1.astype(complex), c2.astype(complex)


def eval_H(fc: FrozenCoefficients, x, y, order: str = "value", branch_sides=None):
    """Two-phase fundamental solution and its derivatives.

    ``x`` has shape (..., 3); ``y`` has shape (3,) or broadcasts with ``x``.
    ``order`` is one of ``value``, ``gradient_x``, ``gradient_y``, ``mixed_xy``;
    the mixed derivative returns d^2 H / dx_i dy_j as a (..., 3, 3) array.
    ``branch_sides`` = (sx, sy) forces the half-space of x and y, which allows
    evaluating one-sided limits exactly on the interface.
    """
    xf = fc.to_frame(x)
    yf = fc.to_frame(y)
    xf, yf = np.broadcast_arrays(xf, yf)
    if branch_sides is None:
        scale = max(1.0, float(np.max(np.abs(xf))), float(np.max(np.abs(yf))))
        if np.any(np.abs(xf[..., 2]) <= ON_PLANE_TOL * scale) or np.any(
                np.abs(yf[..., 2]) <= ON_PLANE_TOL * scale):
            raise OnInterface("point on the interface plane; perturb it off the plane")
        sx, sy = np.sign(xf[..., 2]), np.sign(yf[..., 2])
    else:
        sx = np.broadcast_to(float(branch_sides[0]), xf.shape[:-1])
        sy = np.broadcast_to(float(branch_sides[1]), xf.shape[:-1])
    c1, c2 = _branch_coeffs(fc, sx, sy)
    mp = fc.amap
    L, Ls, Q = mp.Ltilde, mp.Lstar, fc.frame
    a = xf @ L.T
    d1 = a - yf @ L.T
    d2 = a - yf @ Ls.T
    # the reflected term only enters the same-side branches, where d2 never vanishes
    use2 = c2 != 0
    d2 = np.where(use2[..., None], d2, 1.0)
    J = mp.detJ
    if order == "value":
        return J * (c1 * eval_Gamma(d1, 0.0) + c2 * np.where(use2, eval_Gamma(d2, 0.0), 0.0))
    if order == "gradient_x":
        g = c1[..., None] * grad_Gamma(d1) + c2[..., None] * grad_Gamma(d2)
        return J * (g @ L) @ Q
    if order == "gradient_y":
        g = c1[..., None] * (grad_Gamma(d1) @ L) + c2[..., None] * (grad_Gamma(d2) @ Ls)
        return -J * g @ Q
    if order == "mixed_xy":
        H1 = L.T @ hess_Gamma(d1) @ L
        H2 = L.T @ hess_Gamma(d2) @ Ls
        M = c1[..., None, None] * H1 + c2[..., None, None] * H2
        return -J * (Q.T @ M @ Q)
    raise ValueError(f"unknown order {order!r}")


class Kernel:
    """Singular part with pole ``y``: value, gradients and the frozen tensor sigma0."""

    def __init__(self, fc: FrozenCoefficients, y):
        self.fc = fc
        self.y = np.asarray(y, dtype=float)

    @property
    def is_laplace(self) -> bool:
        fc = self.fc
        return (fc.gamma_minus == 1 and fc.gamma_plus == 1 and np.array_equal(fc.A0, np.eye(3)))

    def value(self, x):
        if self.is_laplace:
            return eval_Gamma(x, self.y).astype(complex)
        return eval_H(self.fc, x, self.y, "value")

    def grad(self, x):
        if self.is_laplace:
            return grad_Gamma(np.asarray(x, float) - self.y).astype(complex)
        return eval_H(self.fc, x, self.y, "gradient_x")

    def grad_y(self, x):
        if self.is_laplace:
            return -grad_Gamma(np.asarray(x, float) - self.y).astype(complex)
        return eval_H(self.fc, x, self.y, "gradient_y")

    def mixed(self, x):
        if self.is_laplace:
            return -hess_Gamma(np.asarray(x, float) - self.y).astype(complex)
        return eval_H(self.fc, x, self.y, "mixed_xy")

    def sigma0(self, x):
        return self.fc.sigma0(x)

    def moved(self, y) -> "Kernel":
        return Kernel(self.fc, y)


def laplace_kernel(y) -> Kernel:
    return Kernel(FrozenCoefficients.single_phase(), y)


def sphere_rule(center, radius, axis, n_theta=48, n_phi=96, split_cos=None):
    """Quadrature on a sphere with polar axis ``axis``.

    Returns points, outward normals and area weights. ``split_cos`` splits the
    polar integration at the latitude cos(theta) = split_cos so that a
    kink across a plane orthogonal to ``axis`` is integrated accurately.
    """
    Q = frame_with_normal(axis)
    cuts = [0.0, np.pi]
    if split_cos is not None and -1 < split_cos < 1:
        cuts = [0.0, float(np.arccos(split_cos)), np.pi]
    xg, wg = np.polynomial.legendre.leggauss(n_theta)
    thetas, wts = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        thetas.append(0.5 * (b - a) * (xg + 1) + a)
        wts.append(0.5 * (b - a) * wg)
    th = np.concatenate(thetas)
    wt = np.concatenate(wts)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    W = np.outer(wt * np.sin(th), np.full(n_phi, 2 * np.pi / n_phi)) * radius ** 2
    nf = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    n = nf.reshape(-1, 3) @ Q  # frame -> world
    return np.asarray(center, float) + radius * n, n, W.ravel()


def conormal_flux(kernel: Kernel, radius: float, n_theta: int = 48, n_phi: int = 96) -> complex:
    """Outward flux of -sigma0 grad H through a sphere about the pole."""
    fc = kernel.fc
    yf3 = fc.to_frame(kernel.y)[2]
    split = -yf3 / radius if radius > abs(yf3) else None
    pts, nrm, w = sphere_rule(kernel.y, radius, fc.normal, n_theta, n_phi, split)
    # points exactly on the interface plane are avoided by the Gauss nodes
    g = kernel.grad(pts)
    s0 = kernel.sigma0(pts)
    flux = -np.einsum("nij,nj,ni->n", s0, g, nrm)
    return complex(np.sum(flux * w))


@dataclass
class TransmissionReport:
    value_jump: float
    flux_jump: float
    pde_residual: float
    limit_jump: float
    delta: float


def transmission_residuals(fc: FrozenCoefficients, y, interface_points, delta: float = 1e-4,
                           interior_points=None, eta: float = 1e-4) -> TransmissionReport:
    """Transmission checks for the two-phase kernel with pole ``y``.

    One-sided values and conormal fluxes at the interface are extrapolated
    linearly from offsets delta and 2*delta on each side; the PDE residual is
    a central-difference divergence of the analytic flux at ``interior_points``.
    """
    y = np.asarray(y, float)
    x0 = np.atleast_2d(np.asarray(interface_points, float))
    n = fc.normal
    A0 = fc.A0

    def one_side(s):
        v1 = eval_H(fc, x0 + s * delta * n, y)
        v2 = eval_H(fc, x0 + 2 * s * delta * n, y)
        g1 = eval_H(fc, x0 + s * delta * n, y, "gradient_x")
        g2 = eval_H(fc, x0 + 2 * s * delta * n, y, "gradient_x")
        gam = fc.gamma_plus if s > 0 else fc.gamma_minus
        f1 = gam * (g1 @ A0 @ n)
        f2 = gam * (g2 @ A0 @ n)
        return 2 * v1 - v2, 2 * f1 - f2

    vp, fp = one_side(+1)
    vm, fm = one_side(-1)
    vscale = np.maximum(np.abs(vp), np.abs(vm))
    fscale = np.maximum(np.abs(fp), np.abs(fm))
    value_jump = float(np.max(np.abs(vp - vm) / vscale))
    flux_jump = float(np.max(np.abs(fp - fm) / np.maximum(fscale, 1e-300)))

    ys = np.sign(fc.to_frame(y)[2])
    lim_p = eval_H(fc, x0, y, branch_sides=(1.0, ys))
    lim_m = eval_H(fc, x0, y, branch_sides=(-1.0, ys))
    limit_jump = float(np.max(np.abs(lim_p - lim_m) / np.abs(lim_p)))

    pde = 0.0
    if interior_points is not None:
        xi = np.atleast_2d(np.asarray(interior_points, float))
        div = np.zeros(len(xi), dtype=complex)
        scale = np.zeros(len(xi))
        for a in range(3):
            e = np.zeros(3)
            e[a] = eta
            Fp = np.einsum("nij,nj->ni", fc.sigma0(xi + e), eval_H(fc, xi + e, y, "gradient_x"))
            Fm = np.einsum("nij,nj->ni", fc.sigma0(xi - e), eval_H(fc, xi - e, y, "gradient_x"))
            div += (Fp[:, a] - Fm[:, a]) / (2 * eta)
            scale += np.abs(Fp[:, a]) / np.linalg.norm(xi - y, axis=1)
        pde = float(np.max(np.abs(div) / scale))
    return TransmissionReport(value_jump, flux_jump, pde, limit_jump, delta)
