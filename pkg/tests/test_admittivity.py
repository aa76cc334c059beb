import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calderon_lab.admittivity import (BOUNDS, ELLIPTICITY, VISIBILITY, AffineComplexScalar,
                                      Admittivity, AnisotropyField, eval_gamma, eval_sigma,
                                      sup_norm_diff, validate_apriori)
from calderon_lab.domain import AprioriData
from calderon_lab.errors import AnisotropyMismatch, LayerMismatch
from calderon_lab.presets import affine_admittivity, constant_admittivity

from conftest import small_domain

AUG = small_domain()
DOM = AUG.base
AP = AprioriData(n_layers=1, r0=0.5, lam=10, gamma_bar=10)


def dense_grid(n=41):
    t = np.linspace(0, 1, n)
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)


def test_eval_gamma_examples():
    adm = affine_admittivity([(1.0, (0, 0, 0)), (1 + 0.5j, (0.2, 0, 0))])
    assert eval_gamma(adm, [0.1, 0.1, 0.1], 1) == 1
    assert eval_gamma(adm, [0.5, 0.5, 0.5], 2, DOM) == pytest.approx(1.1 + 0.5j)
    assert eval_gamma(adm, [0.5, 0.5, -0.3], 0, AUG) == 1
    with pytest.raises(LayerMismatch):
        eval_gamma(adm, [0.1, 0.1, 0.1], 2, DOM)


def test_eval_sigma_examples():
    s, blk = eval_sigma(constant_admittivity([2, 2]), [0.5, 0.5, 0.5], 2)
    assert np.allclose(s, 2 * np.eye(3))
    assert np.allclose(blk.matrix, np.kron(np.eye(2), 2 * np.eye(3)))
    s, blk = eval_sigma(constant_admittivity([1 + 1j, 1 + 1j], np.diag([4, 1, 1])), [0.5] * 3, 1)
    assert np.allclose(blk.sr, np.diag([4, 1, 1]))
    assert np.allclose(blk.si, np.diag([4, 1, 1]))


def test_pure_imaginary_gamma_evaluates_but_fails_validation():
    adm = constant_admittivity([1j, 2j])
    s, _ = eval_sigma(adm, [0.5] * 3, 1)
    assert np.allclose(s.real, 0)
    rep = validate_apriori(adm, AP, DOM)
    assert not rep[BOUNDS].passed
    assert not rep[ELLIPTICITY].passed


def test_bounds_violation():
    rep = validate_apriori(constant_admittivity([0.05, 2]), AP, DOM)
    assert not rep[BOUNDS].passed
    assert rep[BOUNDS].value == pytest.approx(0.05)


def test_visibility_violation():
    rep = validate_apriori(constant_admittivity([2, 2]), AP, DOM)
    assert not rep[VISIBILITY].passed
    assert rep[VISIBILITY].witness == (1, 2)
    # "both" additionally requires the imaginary parts to differ
    adm = constant_admittivity([2 + 1j, 3 + 1j])
    assert validate_apriori(adm, AP, DOM).passed
    assert not validate_apriori(adm, AP, DOM, visibility="both")[VISIBILITY].passed


def test_affine_pair_passes_and_matches_dense_sampling():
    adm = affine_admittivity([(1.0, (0, 0, 0)), (2.0, (1.0, 0, 0))])
    rep = validate_apriori(adm, AP, DOM)
    assert rep.passed
    # oracle: dense sampling of each layer
    x = dense_grid()
    inner = np.all((x >= 0.25) & (x <= 0.75), axis=1)
    g = np.where(inner, 2 + x[:, 0], 1.0)
    assert rep[BOUNDS].value == pytest.approx(g.min())
    assert np.max(np.abs(g)) <= 10


def test_sup_norm_diff_identical():
    adm = affine_admittivity([(2 + 1j, (0.1, 0, 0)), (3, (0, 0, 0))])
    assert sup_norm_diff(adm, adm, DOM).E == 0


def test_sup_norm_diff_affine_against_dense_grid():
    a1 = affine_admittivity([(1.1, (0.2, 0, 0)), (1.1, (0.2, 0, 0))])
    a2 = constant_admittivity([1.0, 1.0])
    res = sup_norm_diff(a1, a2, DOM)
    t = np.linspace(0, 1, 64)
    brute = np.max(np.abs(0.1 + 0.2 * t))
    assert res.E == pytest.approx(0.3)
    assert res.E == pytest.approx(brute)
    assert res.witness[0] == pytest.approx(1.0)


def test_sup_norm_diff_inner_layer_only():
    a1 = constant_admittivity([2, 3 + 0.1j])
    a2 = constant_admittivity([2, 3])
    res = sup_norm_diff(a1, a2, DOM)
    assert res.E == pytest.approx(0.1)
    assert res.layer == 2


def test_sup_norm_diff_needs_common_anisotropy():
    a1 = constant_admittivity([2, 3])
    a2 = constant_admittivity([2, 3], np.diag([2.0, 1, 1]))
    with pytest.raises(AnisotropyMismatch):
        sup_norm_diff(a1, a2, DOM)


def test_anisotropy_field_affine_part():
    lin = np.zeros((3, 3, 3))
    lin[0] = np.diag([0.1, 0, 0])
    A = AnisotropyField(np.eye(3), lin)
    assert A.kind == "affine"
    assert np.allclose(A(np.array([2.0, 0, 0])), np.diag([1.2, 1, 1]))
    assert A.lipschitz_seminorm() == pytest.approx(0.1)
    assert AnisotropyField.from_dict(A.to_dict()).same_as(A)


def test_serialisation_round_trip():
    adm = affine_admittivity([(2 + 1j, (0.1, -0.2, 0.3j)), (5, (0, 0, 0))])
    back = Admittivity.from_dict(adm.to_dict())
    assert back == adm
    assert back.digest() == adm.digest()
    assert back.gammas[0](np.array([0.3, 0.2, 0.1])) == adm.gammas[0](np.array([0.3, 0.2, 0.1]))


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=8, max_size=8), st.lists(finite, min_size=6, max_size=6))
def test_block_form_identity(coef, xi):
    """C xi . xi == Re(sigma) xi1 . xi1 + Re(sigma) xi2 . xi2 for symmetric sigma."""
    g = AffineComplexScalar(complex(coef[0] + 4, coef[1]), (coef[2], coef[3], coef[4] + 1j * coef[5]))
    B = np.array([[2.0, 0.3 * coef[6], 0], [0.3 * coef[6], 1.5, 0.1 * coef[7]], [0, 0.1 * coef[7], 1.0]])
    adm = Admittivity((g, g), AnisotropyField(B))
    _, blk = eval_sigma(adm, [0.4, 0.5, 0.6], 1)
    xi = np.asarray(xi)
    expected = xi[:3] @ blk.sr @ xi[:3] + xi[3:] @ blk.sr @ xi[3:]
    assert blk.quadratic_form(xi) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=8, max_size=8), st.floats(0.1, 10))
def test_sup_norm_diff_scaling_and_grid_bound(coef, c):
    a1 = affine_admittivity([(3 + 1j, (0, 0, 0)), (4, (0, 0, 0))])
    a2 = affine_admittivity([(3 + coef[0] + 1j * coef[1], (coef[2], coef[3], 1j * coef[4])),
                             (4 + coef[5], (coef[6], 0, coef[7]))])
    E = sup_norm_diff(a1, a2, DOM).E
    assert sup_norm_diff(a1.scaled(c), a2.scaled(c), DOM).E == pytest.approx(c * E, rel=1e-12)
    # brute force on a grid of pitch h: never above the exact max, within 2 Lip h below it
    n = 17
    x = dense_grid(n)
    closed_inner = np.all((x >= 0.25) & (x <= 0.75), axis=1)
    open_inner = np.all((x > 0.25) & (x < 0.75), axis=1)
    d1 = np.abs((a1.gammas[0] - a2.gammas[0])(x[~open_inner]))
    d2 = np.abs((a1.gammas[1] - a2.gammas[1])(x[closed_inner]))
    lip = max(np.linalg.norm(g.grad) for g in (a1.gammas[0] - a2.gammas[0], a1.gammas[1] - a2.gammas[1]))
    brute = max(d1.max(), d2.max())
    assert brute <= E + 1e-12
    assert E - brute <= 2 * lip / (n - 1) + 1e-12
