"""Ready-made geometries and coefficients used by the examples, tests and CLI defaults."""

from __future__ import annotations

import numpy as np

from .admittivity import AffineComplexScalar, Admittivity, AnisotropyField
from .domain import AprioriData, AugmentedDomain, augment, build_layered_domain


def two_layer_domain(r0: float = 0.5, depth: float = 0.5, pitch: float = 1 / 16,
                     lam: float = 10.0, gamma_bar: float = 10.0, A_bar: float = 10.0
                     ) -> AugmentedDomain:
    """Unit cube with a centred inner box [0.25, 0.75]^3 and a slab below x3 = 0.

    The measurement portion is [0.125, 0.875]^2 on the bottom face and the
    inner portion is [0.3125, 0.6875]^2 on the bottom face of the inner box.
    """
    apriori = AprioriData(n_layers=1, r0=r0, lam=lam, gamma_bar=gamma_bar, A_bar=A_bar)
    dom = build_layered_domain(
        boxes=[((0, 0, 0), (1, 1, 1)), ((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))],
        portions=[
            {"owner": 0, "face": "-z", "rect": ((0.125, 0.875), (0.125, 0.875))},
            {"owner": 1, "face": "-z", "rect": ((0.3125, 0.6875), (0.3125, 0.6875))},
        ],
        pitch=pitch,
        apriori=apriori,
    )
    return augment(dom, depth)


def constant_admittivity(values, A0=None) -> Admittivity:
    """Layer-wise constant gammas."""
    aniso = AnisotropyField.identity() if A0 is None else AnisotropyField(np.asarray(A0, float))
    return Admittivity(tuple(AffineComplexScalar(complex(v)) for v in values), aniso)


def affine_admittivity(layers, A0=None) -> Admittivity:
    """``layers`` is a list of ``(s, (S1, S2, S3))`` pairs."""
    aniso = AnisotropyField.identity() if A0 is None else AnisotropyField(np.asarray(A0, float))
    return Admittivity(tuple(AffineComplexScalar(s, S) for s, S in layers), aniso)
