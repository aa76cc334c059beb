"""Piecewise-affine complex admittivity sigma = gamma * A and its a-priori checks."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import AprioriData, AugmentedDomain, GEOM_TOL, LayeredDomain
from .errors import AnisotropyMismatch, LayerMismatch


@dataclass(frozen=True)
class AffineComplexScalar:
    """gamma(x) = s + S . x with complex offset and complex gradient."""

    s: complex
    S: tuple[complex, complex, complex] = (0j, 0j, 0j)

    def __post_init__(self):
        object.__setattr__(self, "s", complex(self.s))
        S = tuple(complex(v) for v in self.S)
        if len(S) != 3:
            raise ValueError("gradient must have three components")
        object.__setattr__(self, "S", S)

    @property
    def grad(self) -> np.ndarray:
        return np.asarray(self.S, dtype=complex)

    def __call__(self, x) -> np.ndarray | complex:
        x = np.asarray(x, dtype=float)
        return self.s + x @ self.grad

    def __add__(self, other: "AffineComplexScalar") -> "AffineComplexScalar":
        return AffineComplexScalar(self.s + other.s, tuple(self.grad + other.grad))

    def __sub__(self, other: "AffineComplexScalar") -> "AffineComplexScalar":
        return AffineComplexScalar(self.s - other.s, tuple(self.grad - other.grad))

    def scale(self, c: complex) -> "AffineComplexScalar":
        return AffineComplexScalar(c * self.s, tuple(c * self.grad))

    def to_dict(self) -> dict:
        g = self.grad
        return {
            "s_r": self.s.real,
            "s_i": self.s.imag,
            "S_r": [float(v) for v in g.real],
            "S_i": [float(v) for v in g.imag],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffineComplexScalar":
        S_r = np.asarray(d.get("S_r", [0.0, 0.0, 0.0]), dtype=float)
        S_i = np.asarray(d.get("S_i", [0.0, 0.0, 0.0]), dtype=float)
        return cls(complex(d.get("s_r", 0.0), d.get("s_i", 0.0)), tuple(S_r + 1j * S_i))


@dataclass(frozen=True, eq=False)
class AnisotropyField:
    """Symmetric matrix field A(x) = A0 + sum_k x_k * linear[k]."""

    A0: np.ndarray
    linear: np.ndarray | None = None

    def __post_init__(self):
        A0 = np.array(self.A0, dtype=float)
        if A0.shape != (3, 3) or not np.allclose(A0, A0.T, atol=1e-14):
            raise ValueError("A0 must be a symmetric 3x3 matrix")
        object.__setattr__(self, "A0", 0.5 * (A0 + A0.T))
        if self.linear is not None:
            L = np.array(self.linear, dtype=float)
            if L.shape != (3, 3, 3) or not np.allclose(L, L.transpose(0, 2, 1), atol=1e-14):
                raise ValueError("linear part must be three symmetric 3x3 matrices")
            if np.all(L == 0):
                L = None
            else:
                L = 0.5 * (L + L.transpose(0, 2, 1))
            object.__setattr__(self, "linear", L)

    @classmethod
    def identity(cls) -> "AnisotropyField":
        return cls(np.eye(3))

    @property
    def kind(self) -> str:
        return "constant" if self.linear is None else "affine"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(self.A0, x.shape[:-1] + (3, 3)).copy()
        if self.linear is not None:
            out += np.einsum("...k,kij->...ij", x, self.linear)
        return out

    def lipschitz_seminorm(self) -> float:
        """Lipschitz constant of x -> A(x) in the spectral norm."""
        if self.linear is None:
            return 0.0
        # sup over unit directions of ||sum_k v_k L_k||_2, sampled densely on the sphere
        rng = np.random.default_rng(0)
        v = rng.normal(size=(4000, 3))
        v = np.vstack([v / np.linalg.norm(v, axis=1, keepdims=True), np.eye(3)])
        mats = np.einsum("nk,kij->nij", v, self.linear)
        return float(np.max(np.abs(np.linalg.eigvalsh(mats))))

    def same_as(self, other: "AnisotropyField") -> bool:
        if not np.array_equal(self.A0, other.A0):
            return False
        if (self.linear is None) != (other.linear is None):
            return False
        return self.linear is None or np.array_equal(self.linear, other.linear)

    def __eq__(self, other) -> bool:
        return isinstance(other, AnisotropyField) and self.same_as(other)

    __hash__ = None

    def to_dict(self) -> dict:
        d = {"A0": self.A0.tolist()}
        if self.linear is not None:
            d["linear"] = self.linear.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "AnisotropyField":
        if d is None:
            return cls.identity()
        return cls(np.asarray(d["A0"], dtype=float), d.get("linear"))


@dataclass(frozen=True)
class BlockTensor:
    """Real 6x6 form [[sr, -si], [si, sr]] of a complex 3x3 matrix."""

    sr: np.ndarray
    si: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.sr, -self.si], [self.si, self.sr]])

    def quadratic_form(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.matrix @ xi)


@dataclass(frozen=True)
class Admittivity:
    """Per-layer affine gammas (layers 1..N+1) and a shared anisotropy field.

    In the exterior slab (layer 0) the coefficient is extended by
    gamma = 1 and A = I.
    """

    gammas: tuple[AffineComplexScalar, ...]
    anisotropy: AnisotropyField = field(default_factory=AnisotropyField.identity)
    extended: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(self.gammas))
        if not self.gammas:
            raise ValueError("at least one layer is required")

    @property
    def n_layers(self) -> int:
        return len(self.gammas)

    def gamma_values(self, x, layers) -> np.ndarray:
        """Vectorised gamma; ``layers`` broadcasts against the points of ``x``."""
        x = np.asarray(x, dtype=float)
        layers = np.broadcast_to(np.asarray(layers), x.shape[:-1])
        out = np.ones(x.shape[:-1], dtype=complex)
        for m, g in enumerate(self.gammas, start=1):
            sel = layers == m
            if np.any(sel):
                out[sel] = g(x[sel])
        if np.any((layers < 0) | (layers > self.n_layers)):
            raise LayerMismatch("layer index out of range")
        return out

    def sigma_values(self, x, layers) -> np.ndarray:
        """Complex 3x3 tensors at the points ``x``."""
        x = np.asarray(x, dtype=float)
        layers = np.broadcast_to(np.asarray(layers), x.shape[:-1])
        g = self.gamma_values(x, layers)
        A = self.anisotropy(x)
        if self.extended and np.any(layers == 0):
            A[layers == 0] = np.eye(3)
        return g[..., None, None] * A

    def perturbed(self, delta: Sequence[AffineComplexScalar], t: float) -> "Admittivity":
        return Admittivity(
            tuple(g + d.scale(t) for g, d in zip(self.gammas, delta)),
            self.anisotropy,
            self.extended,
        )

    def scaled(self, c: float) -> "Admittivity":
        return Admittivity(tuple(g.scale(c) for g in self.gammas), self.anisotropy, self.extended)

    def to_dict(self) -> dict:
        return {
            "layers": [g.to_dict() for g in self.gammas],
            "anisotropy": self.anisotropy.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Admittivity":
        return cls(
            tuple(AffineComplexScalar.from_dict(v) for v in d["layers"]),
            AnisotropyField.from_dict(d.get("anisotropy")),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _layer_closure_contains(domain, x, layer: int) -> bool:
    aug = domain if isinstance(domain, AugmentedDomain) else None
    dom = aug.base if aug is not None else domain
    tol = GEOM_TOL * 10
    if layer == 0:
        return aug is not None and bool(aug.slab.contains(x, tol))
    if not 1 <= layer <= dom.n_layers + 1:
        return False
    if not bool(dom.boxes[layer - 1].contains(x, tol)):
        return False
    if layer <= dom.n_layers:
        return not bool(dom.boxes[layer].contains(x, -tol))
    return True


def eval_gamma(adm: Admittivity, x, layer: int, domain=None) -> complex:
    """gamma at ``x`` on layer ``layer``; layer 0 is the slab extension."""
    x = np.asarray(x, dtype=float)
    if domain is not None and not _layer_closure_contains(domain, x, layer):
        raise LayerMismatch(f"{x} is not in the closure of layer {layer}")
    if not 0 <= layer <= adm.n_layers:
        raise LayerMismatch(f"layer {layer} out of range")
    return complex(adm.gamma_values(x[None], layer)[0])


def eval_sigma(adm: Admittivity, x, layer: int, domain=None) -> tuple[np.ndarray, BlockTensor]:
    x = np.asarray(x, dtype=float)
    g = eval_gamma(adm, x, layer, domain)
    A = np.eye(3) if layer == 0 and adm.extended else adm.anisotropy(x)
    s = g * A
    return s, BlockTensor(s.real.copy(), s.imag.copy())


@dataclass
class AssumptionCheck:
    clause: str
    passed: bool
    value: float | None = None
    witness: object = None
    detail: str = ""


@dataclass
class AprioriReport:
    checks: list[AssumptionCheck]
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, clause: str) -> AssumptionCheck:
        for c in self.checks:
            if c.clause == clause:
                return c
        raise KeyError(clause)


BOUNDS = "Bounds on gamma"
LIPSCHITZ = "Lipschitz continuity of A"
ELLIPTICITY = "Uniform ellipticity condition"
VISIBILITY = "Visibility condition"


def _layer_sample_points(domain: LayeredDomain, m: int, extra=None) -> np.ndarray:
    pts = [b.vertices() for b in domain.layer_pieces(m)]
    if extra is not None:
        pts.append(extra)
    return np.unique(np.vstack(pts), axis=0)


def validate_apriori(
    adm: Admittivity,
    apriori: AprioriData,
    domain: LayeredDomain,
    nodes_by_layer: dict | None = None,
    visibility: str = "either",
    margin: float = 1.0,
) -> AprioriReport:
    """Check the a-priori assumptions and report each clause with a witness.

    The checks use the vertices of the convex box decomposition of every
    layer, which is exact for affine gamma. ``nodes_by_layer`` optionally adds
    mesh nodes per layer. ``margin`` > 1 tightens every bound by that
    factor. ``visibility="both"`` demands that adjacent layers differ in the
    real and in the imaginary part; ``"either"`` only that they differ.
    """
    if visibility not in ("either", "both"):
        raise ValueError("visibility must be 'either' or 'both'")
    checks = []
    warnings = []
    gb = apriori.gamma_bar
    lam = apriori.lam
    nl = domain.n_layers + 1
    if adm.n_layers != nl:
        raise LayerMismatch(f"admittivity has {adm.n_layers} layers, domain has {nl}")

    worst_low = (np.inf, None, None)
    worst_high = (-np.inf, None, None)
    ell_low = (np.inf, None, None)
    ell_high = (-np.inf, None, None)
    spd_ok = True
    for m in range(1, nl + 1):
        extra = None if nodes_by_layer is None else nodes_by_layer.get(m)
        pts = _layer_sample_points(domain, m, extra)
        g = adm.gammas[m - 1](pts)
        i = int(np.argmin(g.real))
        if g.real[i] < worst_low[0]:
            worst_low = (float(g.real[i]), pts[i], m)
        i = int(np.argmax(np.abs(g)))
        if abs(g[i]) > worst_high[0]:
            worst_high = (float(abs(g[i])), pts[i], m)
        A = adm.anisotropy(pts)
        ev_A = np.linalg.eigvalsh(A)
        if np.any(ev_A[:, 0] <= 0):
            spd_ok = False
        # eigenvalues of gamma^r A; gamma^r may be negative which is caught by (a)
        ev = g.real[:, None] * ev_A
        lo = ev.min(axis=1)
        hi = ev.max(axis=1)
        i = int(np.argmin(lo))
        if lo[i] < ell_low[0]:
            ell_low = (float(lo[i]), pts[i], m)
        i = int(np.argmax(hi))
        if hi[i] > ell_high[0]:
            ell_high = (float(hi[i]), pts[i], m)

    ok_low = worst_low[0] >= margin / gb
    ok_high = worst_high[0] <= gb / margin
    checks.append(AssumptionCheck(
        BOUNDS, ok_low and ok_high, worst_low[0],
        worst_low[1] if not ok_low else (worst_high[1] if not ok_high else None),
        f"min Re gamma = {worst_low[0]:.6g} (layer {worst_low[2]}), "
        f"max |gamma| = {worst_high[0]:.6g} (layer {worst_high[2]}), gamma_bar = {gb:g}",
    ))

    r0 = apriori.r0
    sup_A = 0.0
    for m in range(1, nl + 1):
        pts = _layer_sample_points(domain, m)
        sup_A = max(sup_A, float(np.max(np.abs(np.linalg.eigvalsh(adm.anisotropy(pts))))))
    normA = sup_A + r0 * adm.anisotropy.lipschitz_seminorm()
    checks.append(AssumptionCheck(
        LIPSCHITZ, spd_ok and normA <= apriori.A_bar / margin, normA, None,
        f"||A||_C01 = {normA:.6g}, A_bar = {apriori.A_bar:g}" + ("" if spd_ok else "; A not SPD"),
    ))

    ok_e = ell_low[0] >= margin / lam and ell_high[0] <= lam / margin
    checks.append(AssumptionCheck(
        ELLIPTICITY, ok_e and spd_ok, ell_low[0],
        None if ok_e else (ell_low[1] if ell_low[0] < margin / lam else ell_high[1]),
        f"spectrum of Re sigma in [{ell_low[0]:.6g}, {ell_high[0]:.6g}], lambda = {lam:g}",
    ))

    bad_pairs = []
    notes = []
    for m in range(2, nl + 1):
        a, b = adm.gammas[m - 2], adm.gammas[m - 1]
        d_re = a.s.real != b.s.real or np.any(a.grad.real != b.grad.real)
        d_im = a.s.imag != b.s.imag or np.any(a.grad.imag != b.grad.imag)
        ok = (d_re and d_im) if visibility == "both" else (d_re or d_im)
        notes.append(f"D{m - 1}/D{m}: real {'differs' if d_re else 'equal'}, "
                     f"imag {'differs' if d_im else 'equal'}")
        if not ok:
            bad_pairs.append((m - 1, m))
    checks.append(AssumptionCheck(
        VISIBILITY, not bad_pairs, None, bad_pairs[0] if bad_pairs else None, "; ".join(notes),
    ))

    # the sigma^i lower bound assumed near interfaces in the three-sphere setting
    for m in range(1, nl + 1):
        g = adm.gammas[m - 1](_layer_sample_points(domain, m))
        if np.min(g.imag) < 1.0 / lam:
            warnings.append(
                f"layer {m}: Im gamma drops below 1/lambda; the three-sphere statement near "
                "interfaces assumes a lower bound on the imaginary part"
            )
    return AprioriReport(checks, warnings)


@dataclass(frozen=True)
class SupNormDiff:
    E: float
    witness: np.ndarray
    layer: int


def sup_norm_diff(adm1: Admittivity, adm2: Admittivity, domain: LayeredDomain) -> SupNormDiff:
    """Exact max of |gamma1 - gamma2| over the domain (vertex rule per convex piece)."""
    if not adm1.anisotropy.same_as(adm2.anisotropy):
        raise AnisotropyMismatch("the two admittivities use different anisotropy fields")
    if adm1.n_layers != adm2.n_layers:
        raise LayerMismatch("admittivities have different layer counts")
    best = (-1.0, None, 0)
    for m in range(1, adm1.n_layers + 1):
        diff = adm1.gammas[m - 1] - adm2.gammas[m - 1]
        pts = _layer_sample_points(domain, m)
        v = np.abs(diff(pts))
        i = int(np.argmax(v))
        if v[i] > best[0]:
            best = (float(v[i]), pts[i], m)
    return SupNormDiff(best[0], best[1], best[2])

