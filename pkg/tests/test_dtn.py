import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calderon_lab.dtn import (DtNMatrix, FractionalGram, alessandrini_residual, assemble_dtn,
                              boundary_space, build_fractional_gram, op_norm, op_norm_diff)
from calderon_lab.errors import GramMismatch, UnsupportedTrace
from calderon_lab.fem import assemble
from calderon_lab.mesh import OMEGA, build_mesh
from calderon_lab.presets import constant_admittivity


@pytest.fixture(scope="module")
def space8(mesh8):
    return boundary_space(mesh8)


@pytest.fixture(scope="module")
def gram8(space8):
    return build_fractional_gram(space8)


@pytest.fixture(scope="module")
def dtn8(pair, mesh8, space8):
    return assemble_dtn(pair[0], mesh8, space8), assemble_dtn(pair[1], mesh8, space8)


def test_space_size_and_matrices(space8, mesh16):
    # portion [0.125, 0.875]^2 has 6 cells per side at 8 cells per unit
    assert space8.n == 25
    assert boundary_space(mesh16).n == 121
    for A in (space8.mass, space8.stiffness):
        assert np.allclose(A, A.T)
        assert np.linalg.eigvalsh(A).min() > 0


def sine_spectrum(n, h):
    theta = np.arange(1, n) * np.pi / n
    mu1 = 6 / h ** 2 * (1 - np.cos(theta)) / (2 + np.cos(theta))
    return np.sort((mu1[:, None] + mu1[None, :]).ravel())


@pytest.mark.parametrize("res,cells", [(8, 6), (16, 12)])
def test_spectrum_matches_discrete_sine_oracle(domain, res, cells):
    gram = build_fractional_gram(boundary_space(build_mesh(domain, res)))
    expected = sine_spectrum(cells, 1 / res)
    assert np.max(np.abs(np.sort(gram.eigenvalues) - expected) / expected) <= 1e-10


def test_half_gram_scaling(space8, gram8):
    w = gram8.eigenvectors[:, 0]
    mu = gram8.eigenvalues[0]
    assert w @ gram8.N_half @ w == pytest.approx(np.sqrt(mu) * (w @ space8.mass @ w), rel=1e-12)
    assert np.linalg.eigvalsh(gram8.N_half).min() > 0
    assert np.allclose(gram8.N_minus_half @ gram8.N_half, np.eye(space8.n), atol=1e-10)


def test_identical_admittivities_give_zero(pair, mesh8, space8, gram8):
    a = assemble_dtn(pair[0], mesh8, space8)
    b = assemble_dtn(pair[0], mesh8, space8)
    assert np.all(a - b == 0)
    assert op_norm_diff(a, b, gram8) == 0


def test_scaling_with_constant(mesh8, space8, pair):
    L = assemble_dtn(pair[0], mesh8, space8)
    Lc = assemble_dtn(pair[0].scaled(2.5), mesh8, space8)
    assert np.max(np.abs(Lc.values - 2.5 * L.values)) <= 1e-12 * np.abs(L.values).max()


def test_bilinear_symmetry(dtn8):
    for L in dtn8:
        assert L.symmetry_defect() <= 1e-9


def test_schur_complement_against_volume_form(pair, mesh8, space8, dtn8, rng):
    """<Lambda f, g> equals the volume form of the f-solution against any lifting of g."""
    adm = pair[0]
    sys = assemble(adm, mesh8, OMEGA)
    f = rng.normal(size=space8.n) + 1j * rng.normal(size=space8.n)
    g = rng.normal(size=space8.n)
    u = sys.solve(space8.lift(f).values[sys.nodes.ids][sys.bnd])
    phi = space8.lift(g).values[sys.nodes.ids]
    # any interior values for the lifting give the same number
    phi[sys.inn] = rng.normal(size=len(sys.inn))
    form = phi @ (sys.K @ u)
    assert dtn8[0].pair(f, g) == pytest.approx(form, rel=1e-10)


def test_op_norm_zero_and_unit(gram8):
    n = gram8.N_half.shape[0]
    assert op_norm(np.zeros((n, n)), gram8) == 0
    assert op_norm(1.7 * gram8.N_half, gram8) == pytest.approx(1.7, rel=1e-12)


def gram_from_matrix(N):
    mu, W = np.linalg.eigh(N)
    return FractionalGram(None, mu, W, N, np.linalg.inv(N), np.linalg.cholesky(N))


def brute_force_norm(D, N, rng, samples=100_000, starts=20, sweeps=200):
    """Random-pair search followed by alternating maximisation from the best samples."""
    n = len(D)
    Ninv = np.linalg.inv(N)

    def nrm(v):
        return np.sqrt(np.real(np.einsum("...i,ij,...j->...", v.conj(), N, v)))

    F = rng.normal(size=(samples, n)) + 1j * rng.normal(size=(samples, n))
    G = rng.normal(size=(samples, n)) + 1j * rng.normal(size=(samples, n))
    ratio = np.abs(np.einsum("si,ij,sj->s", G, D, F)) / (nrm(F) * nrm(G))
    best = ratio.max()
    for f in F[np.argsort(ratio)[-starts:]]:
        for _ in range(sweeps):
            # optimal g for fixed f is N^{-1} conj(D f); symmetric step for f
            g = Ninv @ np.conj(D @ f)
            f = Ninv @ np.conj(D.T @ g)
            f /= nrm(f)
        g = Ninv @ np.conj(D @ f)
        best = max(best, abs(g @ D @ f) / (nrm(f) * nrm(g)))
    return ratio.max(), best


def test_op_norm_against_brute_force(rng):
    n = 6
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    D = B + B.T
    R = rng.normal(size=(n, n))
    N = R @ R.T + n * np.eye(n)
    eps = op_norm(D, gram_from_matrix(N))
    sampled, refined = brute_force_norm(D, N, rng)
    assert sampled <= eps * (1 + 1e-12)
    assert abs(refined - eps) <= 0.02 * eps


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 32 - 1))
def test_op_norm_homogeneity(cr, ci, seed):
    rng = np.random.default_rng(seed)
    n = 5
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    R = rng.normal(size=(n, n))
    gram = gram_from_matrix(R @ R.T + np.eye(n))
    c = complex(cr, ci)
    D = B + B.T
    assert op_norm(c * D, gram) == pytest.approx(abs(c) * op_norm(D, gram), rel=1e-10, abs=1e-300)


def test_norm_is_definite(gram8):
    n = gram8.N_half.shape[0]
    D = np.zeros((n, n), dtype=complex)
    D[3, 7] = D[7, 3] = 1e-13
    assert op_norm(D, gram8) > 0


def test_gram_mismatch(pair, mesh16, dtn8, gram8):
    L16 = assemble_dtn(pair[0], mesh16)
    with pytest.raises(GramMismatch):
        op_norm_diff(L16, L16, gram8)
    with pytest.raises(GramMismatch):
        dtn8[0] - L16
    with pytest.raises(GramMismatch):
        op_norm(np.zeros((3, 3)), gram8)


def test_refinement_stability(pair, dtn8, gram8, mesh16):
    eps8 = op_norm_diff(*dtn8, gram8)
    space = boundary_space(mesh16)
    eps16 = op_norm_diff(assemble_dtn(pair[0], mesh16, space), assemble_dtn(pair[1], mesh16, space),
                         build_fractional_gram(space))
    assert abs(eps16 - eps8) <= 0.2 * eps8


def test_alessandrini_identical_pair(pair, mesh8, space8, rng):
    f = rng.normal(size=space8.n)
    g = rng.normal(size=space8.n) + 1j * rng.normal(size=space8.n)
    res = alessandrini_residual(pair[0], pair[0], mesh8, f, g, space8)
    assert abs(res.lhs) <= 1e-12 and abs(res.rhs) <= 1e-12


def test_alessandrini_generic_and_swap(pair, mesh8, space8, rng):
    for _ in range(3):
        f = rng.normal(size=space8.n) + 1j * rng.normal(size=space8.n)
        g = rng.normal(size=space8.n) + 1j * rng.normal(size=space8.n)
        res = alessandrini_residual(pair[0], pair[1], mesh8, f, g, space8)
        assert res.relative <= 1e-8
        assert abs(res.lhs) > 1e-3
        swapped = alessandrini_residual(pair[1], pair[0], mesh8, g, f, space8)
        # swapping the roles flips the sign of both sides
        assert abs(swapped.lhs + res.lhs) <= 1e-9 * abs(res.lhs)
        assert abs(swapped.rhs + res.rhs) <= 1e-9 * abs(res.rhs)


def test_alessandrini_smooth_data(pair, mesh8, space8):
    def f(x):
        return np.sin(np.pi * (x[:, 0] - 0.125) / 0.75) * np.sin(np.pi * (x[:, 1] - 0.125) / 0.75)

    def g(x):
        return (x[:, 0] - 0.125) * (0.875 - x[:, 0]) * (x[:, 1] - 0.125) * (0.875 - x[:, 1]) * (1 + 2j * x[:, 0])

    assert alessandrini_residual(pair[0], pair[1], mesh8, f, g, space8).relative <= 1e-8


def test_unsupported_trace(pair, mesh8, space8):
    with pytest.raises(UnsupportedTrace):
        alessandrini_residual(pair[0], pair[1], mesh8, np.ones(space8.n + 1), np.ones(space8.n), space8)


def test_export_round_trip(tmp_path, dtn8):
    L = dtn8[0]
    path = tmp_path / "dtn.json"
    L.export(path)
    head = json.loads(path.read_text())
    assert head["n"] == L.space.n
    assert len(head["dof_coords"]) == L.space.n
    raw = np.frombuffer((tmp_path / "dtn.json.bin").read_bytes(), dtype="<f8")
    assert raw[0] == L.values[0, 0].real and raw[1] == L.values[0, 0].imag
    assert raw[2] == L.values[0, 1].real
    assert np.array_equal(DtNMatrix.read_values(path), L.values)


def test_constant_scaling_of_laplace(mesh8, space8):
    L1 = assemble_dtn(constant_admittivity([1, 1]), mesh8, space8)
    L3 = assemble_dtn(constant_admittivity([3, 3]), mesh8, space8)
    assert np.allclose(L3.values, 3 * L1.values, rtol=1e-12, atol=0)
    assert np.all(np.abs(L1.values.imag) == 0)
