"""Layered box geometry: nested boxes, layers, flat portions and the augmented domain."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    DisconnectedLayer,
    FootprintMismatch,
    GridMisaligned,
    MissingPortion,
    NestingViolation,
    OffsetOutOfRange,
    OutsideDomain,
    PortionOutsideFace,
    PortionTooSmall,
    SlabTooThin,
)

FACES = ("-x", "+x", "-y", "+y", "-z", "+z")
_AXIS = {"x": 0, "y": 1, "z": 2}

# relative tolerance used for all coordinate comparisons
GEOM_TOL = 1e-9


class _BoundaryMarker:
    """Sentinel returned by :func:`layer_index` for points on an interface plane."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOUNDARY"


BOUNDARY = _BoundaryMarker()


def face_axis(face: str) -> tuple[int, int]:
    """Return ``(axis, side)`` for a face label such as ``"-z"``."""
    if face not in FACES:
        raise ValueError(f"unknown face {face!r}")
    return _AXIS[face[1]], (1 if face[0] == "+" else -1)


def tangential_axes(axis: int) -> tuple[int, int]:
    return tuple(i for i in range(3) if i != axis)


@dataclass(frozen=True)
class AprioriData:
    n_layers: int
    r0: float
    M0: float = 1.0
    lam: float = 10.0
    gamma_bar: float = 10.0
    A_bar: float = 10.0
    dimension: int = 3

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be positive")
        if not (self.lam > 1 and self.gamma_bar > 1 and self.A_bar > 0 and self.r0 > 0):
            raise ValueError("a-priori constants must satisfy lam>1, gamma_bar>1, A_bar>0, r0>0")
        if self.dimension != 3:
            raise ValueError("only dimension 3 is supported")


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_arr + self.hi_arr)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        """Closed-box membership, enlarged by ``tol`` (negative ``tol`` shrinks)."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo_arr - tol) & (x <= self.hi_arr + tol), axis=-1)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from ``x`` to the closed box (zero inside)."""
        x = np.asarray(x, dtype=float)
        d = np.maximum(np.maximum(self.lo_arr - x, x - self.hi_arr), 0.0)
        return np.linalg.norm(d, axis=-1)

    def vertices(self) -> np.ndarray:
        return np.array(
            [[(self.lo, self.hi)[b][a] for a, b in enumerate(bits)]
             for bits in np.ndindex(2, 2, 2)],
            dtype=float,
        )

    def face_plane(self, face: str) -> float:
        axis, side = face_axis(face)
        return self.hi[axis] if side > 0 else self.lo[axis]


@dataclass(frozen=True)
class Rect3:
    """Axis-aligned planar rectangle embedded in 3-space."""

    axis: int
    plane: float
    lo: tuple[float, float]
    hi: tuple[float, float]

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = tangential_axes(self.axis)
        dn = x[..., self.axis] - self.plane
        d0 = np.maximum(np.maximum(self.lo[0] - x[..., t[0]], x[..., t[0]] - self.hi[0]), 0.0)
        d1 = np.maximum(np.maximum(self.lo[1] - x[..., t[1]], x[..., t[1]] - self.hi[1]), 0.0)
        return np.sqrt(dn * dn + d0 * d0 + d1 * d1)


@dataclass(frozen=True)
class FlatPortion:
    """Planar rectangle ``rect`` on face ``face`` of the box of index ``owner``.

    ``rect`` is given in the two tangential coordinates of the face, in
    increasing axis order. ``plane`` is filled in when the portion is bound
    to a domain.
    """

    owner: int
    face: str
    rect: tuple[tuple[float, float], tuple[float, float]]
    plane: float | None = None

    def __post_init__(self):
        face_axis(self.face)
        r = tuple(tuple(float(v) for v in pair) for pair in self.rect)
        if len(r) != 2 or any(len(p) != 2 or p[0] >= p[1] for p in r):
            raise ValueError(f"bad portion rectangle {self.rect}")
        object.__setattr__(self, "rect", r)

    @property
    def axis(self) -> int:
        return face_axis(self.face)[0]

    @property
    def normal(self) -> np.ndarray:
        axis, side = face_axis(self.face)
        n = np.zeros(3)
        n[axis] = side
        return n

    @property
    def sides(self) -> tuple[float, float]:
        return (self.rect[0][1] - self.rect[0][0], self.rect[1][1] - self.rect[1][0])

    @property
    def center(self) -> np.ndarray:
        if self.plane is None:
            raise ValueError("portion is not bound to a domain")
        c = np.zeros(3)
        c[self.axis] = self.plane
        for t, (a, b) in zip(tangential_axes(self.axis), self.rect):
            c[t] = 0.5 * (a + b)
        return c

    def as_rect3(self) -> Rect3:
        return Rect3(self.axis, self.plane, (self.rect[0][0], self.rect[1][0]),
                     (self.rect[0][1], self.rect[1][1]))

    def contains(self, x, tol: float = 1e-12, strict: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        on = np.abs(x[..., self.axis] - self.plane) <= tol
        for t, (a, b) in zip(tangential_axes(self.axis), self.rect):
            if strict:
                on &= (x[..., t] > a + tol) & (x[..., t] < b - tol)
            else:
                on &= (x[..., t] >= a - tol) & (x[..., t] <= b + tol)
        return on


def _is_multiple(v: float, h: float) -> bool:
    q = v / h
    return abs(q - round(q)) <= GEOM_TOL * max(1.0, abs(q))


def _box_shell_pieces(outer: Box, inner: Box | None) -> list[Box]:
    """Convex decomposition of ``outer \\ inner`` into at most 26 boxes."""
    if inner is None:
        return [outer]
    cuts = [
        (outer.lo[a], inner.lo[a], inner.hi[a], outer.hi[a]) for a in range(3)
    ]
    pieces = []
    for idx in np.ndindex(3, 3, 3):
        if idx == (1, 1, 1):
            continue
        lo = tuple(cuts[a][idx[a]] for a in range(3))
        hi = tuple(cuts[a][idx[a] + 1] for a in range(3))
        if all(h_ > l_ for l_, h_ in zip(lo, hi)):
            pieces.append(Box(lo, hi))
    return pieces


def _box_faces(box: Box, hole: Rect3 | None = None) -> list[Rect3]:
    """The six faces of ``box`` as rectangles; ``hole`` is cut out of its face."""
    rects = []
    for face in FACES:
        axis, side = face_axis(face)
        plane = box.hi[axis] if side > 0 else box.lo[axis]
        t = tangential_axes(axis)
        lo = (box.lo[t[0]], box.lo[t[1]])
        hi = (box.hi[t[0]], box.hi[t[1]])
        if hole is not None and hole.axis == axis and abs(hole.plane - plane) < 1e-12:
            # split the face into up to four rectangles around the hole
            parts = [
                ((lo[0], lo[1]), (hole.lo[0], hi[1])),
                ((hole.hi[0], lo[1]), (hi[0], hi[1])),
                ((hole.lo[0], lo[1]), (hole.hi[0], hole.lo[1])),
                ((hole.lo[0], hole.hi[1]), (hole.hi[0], hi[1])),
            ]
            for plo, phi in parts:
                if phi[0] > plo[0] and phi[1] > plo[1]:
                    rects.append(Rect3(axis, plane, plo, phi))
        else:
            rects.append(Rect3(axis, plane, lo, hi))
    return rects


@dataclass(frozen=True)
class LayeredDomain:
    boxes: tuple[Box, ...]
    portions: tuple[FlatPortion, ...]
    pitch: float
    apriori: AprioriData

    @property
    def n_layers(self) -> int:
        """Number N of inner boxes; the layers are D_1..D_{N+1}."""
        return len(self.boxes) - 1

    @property
    def omega(self) -> Box:
        return self.boxes[0]

    @property
    def sigma(self) -> FlatPortion:
        return self.portion(0)

    def portion(self, owner: int) -> FlatPortion:
        for p in self.portions:
            if p.owner == owner:
                return p
        raise MissingPortion(f"no flat portion on box {owner}")

    def layer_pieces(self, m: int) -> list[Box]:
        """Convex box decomposition of layer D_m (1 <= m <= N+1)."""
        if not 1 <= m <= self.n_layers + 1:
            raise ValueError(f"layer {m} out of range")
        inner = self.boxes[m] if m <= self.n_layers else None
        return _box_shell_pieces(self.boxes[m - 1], inner)

    def boundary_rects(self) -> list[Rect3]:
        return _box_faces(self.omega)

    def dist_to_boundary(self, x) -> np.ndarray:
        """Distance to the boundary of the outermost box."""
        x = np.asarray(x, dtype=float)
        return np.min(np.stack([r.distance(x) for r in self.boundary_rects()]), axis=0)

    def layer_index(self, x, on_interface: str = "marker"):
        return layer_index(self, x, on_interface=on_interface)

    def geometry_dict(self) -> dict:
        return {
            "boxes": [[list(b.lo), list(b.hi)] for b in self.boxes],
            "portions": [
                {"owner": p.owner, "face": p.face, "rect": [list(r) for r in p.rect]}
                for p in self.portions
            ],
            "pitch": self.pitch,
            "r0": self.apriori.r0,
        }


def build_layered_domain(
    boxes: Sequence,
    portions: Sequence,
    pitch: float,
    apriori: AprioriData,
) -> LayeredDomain:
    """Validate and assemble a nested-box domain.

    ``boxes`` are ``Box`` objects or ``(lo, hi)`` pairs, outermost first.
    ``portions`` are ``FlatPortion`` objects or dicts with keys
    ``owner``, ``face`` and ``rect``.
    """
    boxes = tuple(b if isinstance(b, Box) else Box(*b) for b in boxes)
    plist = []
    for p in portions:
        if not isinstance(p, FlatPortion):
            p = FlatPortion(int(p["owner"]), p["face"], p["rect"])
        plist.append(p)
    h = float(pitch)
    if h <= 0:
        raise ValueError("pitch must be positive")
    if len(boxes) != apriori.n_layers + 1:
        raise ValueError(
            f"expected {apriori.n_layers + 1} boxes for N={apriori.n_layers}, got {len(boxes)}"
        )

    for i, b in enumerate(boxes):
        for v in b.lo + b.hi:
            if not _is_multiple(v, h):
                raise GridMisaligned(f"box {i} coordinate {v} is not a multiple of pitch {h}")

    for m in range(len(boxes) - 1):
        outer, inner = boxes[m], boxes[m + 1]
        margin = min(
            min(inner.lo[a] - outer.lo[a], outer.hi[a] - inner.hi[a]) for a in range(3)
        )
        if margin < 2 * h - GEOM_TOL * h:
            raise NestingViolation(
                f"box {m + 1} sits only {margin:g} inside box {m}; need at least 2h = {2 * h:g}"
            )

    bound = []
    owners = set()
    for p in plist:
        if not 0 <= p.owner < len(boxes):
            raise MissingPortion(f"portion owner {p.owner} has no box")
        if p.owner in owners:
            raise ValueError(f"duplicate flat portion on box {p.owner}")
        owners.add(p.owner)
        box = boxes[p.owner]
        for t, (a, b) in zip(tangential_axes(p.axis), p.rect):
            if not (a > box.lo[t] + GEOM_TOL and b < box.hi[t] - GEOM_TOL):
                raise PortionOutsideFace(
                    f"portion on box {p.owner} face {p.face} is not strictly inside the face"
                )
            for v in (a, b):
                if not _is_multiple(v, h):
                    raise GridMisaligned(f"portion coordinate {v} is not a multiple of pitch {h}")
        if min(p.sides) < apriori.r0 / 3 - GEOM_TOL:
            raise PortionTooSmall(
                f"portion on box {p.owner} has side {min(p.sides):g} < r0/3 = {apriori.r0 / 3:g}"
            )
        bound.append(replace(p, plane=box.face_plane(p.face)))
    for m in range(len(boxes)):
        if m not in owners:
            raise MissingPortion(f"no flat portion on box {m}")

    dom = LayeredDomain(boxes, tuple(sorted(bound, key=lambda q: q.owner)), h, apriori)
    _check_connected(dom)
    return dom


def _check_connected(dom: LayeredDomain) -> None:
    h = dom.pitch
    lo = dom.omega.lo_arr
    shape = tuple(int(round(v)) for v in (dom.omega.hi_arr - lo) / h)
    centers = [lo[a] + h * (np.arange(shape[a]) + 0.5) for a in range(3)]
    grid = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)
    labels = layer_index_cells(dom, grid)
    for m in range(1, dom.n_layers + 2):
        _, count = ndimage.label(labels == m)
        if count != 1:
            raise DisconnectedLayer(f"layer D_{m} has {count} connected components")


def layer_index_cells(dom: LayeredDomain, centers: np.ndarray) -> np.ndarray:
    """Layer number for points known to lie off every interface (cell centres)."""
    c = np.asarray(centers, dtype=float)
    out = np.full(c.shape[:-1], -1, dtype=np.int64)
    inside = dom.omega.contains(c)
    out[inside] = 1
    for m in range(1, dom.n_layers + 1):
        out[dom.boxes[m].contains(c)] = m + 1
    return out


def layer_index(domain, x, on_interface: str = "marker"):
    """Return the layer number containing ``x``.

    Works on a :class:`LayeredDomain` (layers 1..N+1) or an
    :class:`AugmentedDomain` (which adds layer 0 for the slab). Points on an
    interface or boundary plane return :data:`BOUNDARY`, or with
    ``on_interface="lower"`` the lowest adjacent layer number.
    """
    aug = domain if isinstance(domain, AugmentedDomain) else None
    dom = aug.base if aug is not None else domain
    x = np.asarray(x, dtype=float)
    tol = GEOM_TOL * max(1.0, float(np.max(np.abs(dom.omega.hi_arr - dom.omega.lo_arr))))

    in_slab = aug is not None and bool(aug.slab.contains(x, tol))
    if not in_slab and not bool(dom.omega.contains(x, tol)):
        raise OutsideDomain(f"{x} is outside the domain")
    if in_slab and bool(aug.slab.contains(x, -tol)):
        return 0
    touching = [0] if in_slab else []
    deepest = 0
    for m, box in enumerate(dom.boxes):
        if not bool(box.contains(x, tol)):
            break
        if not bool(box.contains(x, -tol)):
            touching.extend([m, m + 1] if m > 0 else [1])
            break
        deepest = m + 1
    if touching:
        return min(touching) if on_interface == "lower" else BOUNDARY
    return deepest


@dataclass(frozen=True)
class AugmentedDomain:
    base: LayeredDomain
    slab: Box
    depth: float
    pole_centers: np.ndarray = field(repr=False, compare=False)

    @property
    def sigma_rect(self) -> Rect3:
        return self.base.sigma.as_rect3()

    @property
    def pitch(self) -> float:
        return self.base.pitch

    @property
    def r0(self) -> float:
        return self.base.apriori.r0

    @property
    def bounding_box(self) -> Box:
        lo = np.minimum(self.base.omega.lo_arr, self.slab.lo_arr)
        hi = np.maximum(self.base.omega.hi_arr, self.slab.hi_arr)
        return Box(tuple(lo), tuple(hi))

    def outer_boundary_rects(self) -> list[Rect3]:
        hole = self.sigma_rect
        return _box_faces(self.base.omega, hole) + _box_faces(self.slab, hole)

    def dist_to_outer_boundary(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.min(np.stack([r.distance(x) for r in self.outer_boundary_rects()]), axis=0)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return self.base.omega.contains(x, tol) | self.slab.contains(x, tol)

    def in_slab(self, x, tol: float = 0.0) -> np.ndarray:
        return self.slab.contains(x, tol)

    def dist_to_omega(self, x) -> np.ndarray:
        """Distance from ``x`` to the closed outer box (zero inside)."""
        return self.base.omega.distance(x)

    def in_pole_region(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.slab.contains(x, tol) & (self.dist_to_omega(x) >= self.r0 / 2 - tol)

    def layer_index(self, x, on_interface: str = "marker"):
        return layer_index(self, x, on_interface=on_interface)

    def geometry_dict(self) -> dict:
        d = self.base.geometry_dict()
        d["slab"] = [list(self.slab.lo), list(self.slab.hi)]
        return d


def augment(domain: LayeredDomain, depth: float, footprint=None) -> AugmentedDomain:
    """Attach the exterior slab along the face containing the measurement portion.

    The footprint defaults to the portion rectangle itself; a user-supplied
    footprint must cover it, lie strictly inside the face and align to the grid.
    """
    h = domain.pitch
    r0 = domain.apriori.r0
    if depth < r0 - GEOM_TOL * r0:
        raise SlabTooThin(f"slab depth {depth:g} < r0 = {r0:g}")
    if not _is_multiple(depth, h):
        raise GridMisaligned(f"slab depth {depth} is not a multiple of pitch {h}")
    sig = domain.sigma
    rect = sig.rect if footprint is None else tuple(tuple(map(float, p)) for p in footprint)
    box = domain.omega
    t = tangential_axes(sig.axis)
    for (a, b), (sa, sb), ax in zip(rect, sig.rect, t):
        if not (a <= sa + GEOM_TOL and b >= sb - GEOM_TOL):
            raise FootprintMismatch("slab footprint does not cover the measurement portion")
        if not (a > box.lo[ax] + GEOM_TOL and b < box.hi[ax] - GEOM_TOL):
            raise FootprintMismatch("slab footprint must lie strictly inside the face")
        if not (_is_multiple(a, h) and _is_multiple(b, h)):
            raise FootprintMismatch("slab footprint is not grid aligned")
    if footprint is not None and any(
        abs(a - sa) > GEOM_TOL or abs(b - sb) > GEOM_TOL for (a, b), (sa, sb) in zip(rect, sig.rect)
    ):
        # the Green trace on the shared face is only meaningful on the portion itself
        raise FootprintMismatch("slab footprint must coincide with the measurement portion")
    lo = [0.0] * 3
    hi = [0.0] * 3
    for ax, (a, b) in zip(t, rect):
        lo[ax], hi[ax] = a, b
    axis, side = face_axis(sig.face)
    if side > 0:
        lo[axis], hi[axis] = sig.plane, sig.plane + depth
    else:
        lo[axis], hi[axis] = sig.plane - depth, sig.plane
    slab = Box(tuple(lo), tuple(hi))

    shape = [int(round((hi[a] - lo[a]) / h)) for a in range(3)]
    cs = [lo[a] + h * (np.arange(shape[a]) + 0.5) for a in range(3)]
    centers = np.stack(np.meshgrid(*cs, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = box.distance(centers) >= r0 / 2 - 1e-12
    return AugmentedDomain(domain, slab, float(depth), centers[keep])


def probe_point(domain, portion: FlatPortion, r: float, point=None) -> np.ndarray:
    """Return ``P + r * nu`` with ``nu`` the outward normal of the owning box.

    ``P`` is the portion centre unless ``point`` is given. Positive ``r``
    moves outward, negative ``r`` moves into the owning box.
    """
    dom = domain.base if isinstance(domain, AugmentedDomain) else domain
    r0 = dom.apriori.r0
    if abs(r) >= r0 / 2:
        raise OffsetOutOfRange(f"|r| = {abs(r):g} must be below r0/2 = {r0 / 2:g}")
    p = portion.center if point is None else np.asarray(point, dtype=float)
    if point is not None and not portion.contains(p):
        raise ValueError("supplied point is not on the portion")
    x = p + r * portion.normal
    if isinstance(domain, AugmentedDomain):
        if not bool(domain.contains(x)):
            raise OffsetOutOfRange("probe point leaves the augmented domain")
    elif not bool(dom.omega.contains(x)):
        raise OffsetOutOfRange("probe point leaves the domain")
    return x
