import numpy as np
import pytest
from scipy import integrate

from calderon_lab.admittivity import sup_norm_diff
from calderon_lab.dtn import assemble_dtn, boundary_space
from calderon_lab.errors import (BallOutsideDomain, GridOutsidePoleRegion, LadderTooFine, PoleTooClose,
                                 RadiiOrdering)
from calderon_lab.fem import assemble, solve_dirichlet
from calderon_lab.green import compute_greens
from calderon_lab.mesh import OMEGA, build_mesh
from calderon_lab.presets import affine_admittivity, constant_admittivity, two_layer_domain
from calderon_lab.probes import (PoleGrid, _sk_integral, default_pole_grids, eval_Sk, eval_Sk_mixed,
                                 gauss_grid, misfit, peeling_split, sk_field, sk_field_residual,
                                 three_sphere_check, three_sphere_delta, u_cells)

Y = np.array([0.3125, 0.4375, -0.4375])
Z = np.array([0.6875, 0.5625, -0.5625])


@pytest.fixture(scope="module")
def systems8(pair, mesh8):
    return assemble(pair[0], mesh8), assemble(pair[1], mesh8)


def test_sk_vanishes_for_identical_pair(pair, mesh8):
    assert eval_Sk(pair[0], pair[0], mesh8, 0, Y, Z).value == 0


def test_s0_volume_equals_dtn_pairing(pair, mesh8, systems8):
    """S_0(y, z) against <(L1 - L2) G2|_Sigma, G1|_Sigma> from the assembled DtN matrices."""
    res = eval_Sk(pair[0], pair[1], mesh8, 0, Y, Z, systems=systems8)
    space = boundary_space(mesh8)
    L1 = assemble_dtn(pair[0], mesh8, space)
    L2 = assemble_dtn(pair[1], mesh8, space)
    t1 = res.green1.nodal(space.nodes)
    t2 = res.green2.nodal(space.nodes)
    pairing = t1 @ (L1 - L2) @ t2
    assert abs(res.value - pairing) <= 1e-6 * abs(pairing)
    assert abs(res.value) > 0


def bound_ratios(adm1, adm2, mesh):
    """|S_0(y, y)| d(y) / E for poles approaching the domain along a vertical line."""
    dom = mesh.domain
    E = sup_norm_diff(adm1, adm2, dom.base).E
    systems = (assemble(adm1, mesh), assemble(adm2, mesh))
    out = []
    for z in (-0.59375, -0.46875, -0.34375):
        y = np.array([0.46875, 0.46875, z])
        s = eval_Sk(adm1, adm2, mesh, 0, y, y, systems=systems).value
        out.append(abs(s) * float(dom.base.boxes[0].distance(y[None])[0]) / E)
    return np.array(out)


def test_sk_bound_sweep(pair, mesh8, mesh16):
    coarse = bound_ratios(*pair, mesh8)
    fine = bound_ratios(*pair, mesh16)
    assert np.all(np.isfinite(coarse)) and np.all(coarse > 0)
    assert 0.5 <= fine.max() / coarse.max() <= 2


def test_pole_too_close(pair, mesh8):
    with pytest.raises(PoleTooClose):
        eval_Sk(pair[0], pair[1], mesh8, 0, [0.5, 0.5, -0.1], Z)


def test_mixed_zero_and_symmetry(pair, mesh8, systems8):
    assert eval_Sk_mixed(pair[0], pair[0], mesh8, 0, Y, Z, 2, 2) == 0
    a = eval_Sk_mixed(pair[0], pair[1], mesh8, 0, Y, Z, 2, 0, systems=systems8)
    b = eval_Sk_mixed(pair[1], pair[0], mesh8, 0, Z, Y, 0, 2, systems=systems8[::-1])
    # swapping the roles flips the sign of sigma1 - sigma2
    assert abs(a + b) <= 1e-6 * abs(a)


def nested_difference(adm1, adm2, mesh, systems, y, z, delta):
    """Four-point central difference of S_0 in (y_3, z_3) from plain-splitting Green fields."""
    e = np.array([0, 0, delta])
    G1 = compute_greens(adm1, mesh, [y + e, y - e], cutoff=None, system=systems[0], snap=False)
    G2 = compute_greens(adm2, mesh, [z + e, z - e], cutoff=None, system=systems[1], snap=False)
    cells = u_cells(mesh, 0)
    S = [[_sk_integral(adm1, adm2, mesh, cells, g1, g2).sum() for g2 in G2] for g1 in G1]
    return (S[0][0] - S[0][1] - S[1][0] + S[1][1]) / (4 * delta ** 2)


def test_mixed_matches_nested_differences(pair, mesh8, systems8):
    h = 1 / 8
    deltas = (h, h / 2, h / 4, h / 8)
    vals = [nested_difference(pair[0], pair[1], mesh8, systems8, Y, Z, d) for d in deltas]
    # Richardson: successive differences shrink like delta^2
    jumps = np.abs(np.diff(vals))
    assert np.polyfit(np.log(deltas[:-1]), np.log(jumps), 1)[0] >= 1.8
    mixed = eval_Sk_mixed(pair[0], pair[1], mesh8, 0, Y, Z, 2, 2, systems=systems8)
    assert abs(mixed - vals[1]) <= 1e-10 * abs(mixed)


def test_sk_field_is_discrete_solution(pair, mesh8, systems8):
    w = sk_field(pair[0], pair[1], mesh8, 0, Z, systems=systems8)
    assert sk_field_residual(w, systems8[0], 0) <= 1e-6
    # its value at a pole reproduces S_0 by reciprocity of the discrete problem
    res = eval_Sk(pair[0], pair[1], mesh8, 0, Y, Z, systems=systems8)
    assert abs(w.at(Y[None])[0] - res.value) <= 0.05 * abs(res.value)


@pytest.fixture(scope="module")
def grids(mesh8):
    return default_pole_grids(mesh8.domain)


@pytest.fixture(scope="module")
def misfit_systems(pair, mesh8):
    a1, a2 = pair
    return (assemble(a1, mesh8), assemble(a2, mesh8), assemble(a1, mesh8, OMEGA), assemble(a2, mesh8, OMEGA))


def test_default_grids_are_disjoint_and_inside(mesh8, grids):
    gy, gz = grids
    assert len(gy.points) == len(gz.points) == 27
    assert np.all(mesh8.domain.in_pole_region(np.vstack([gy.points, gz.points])))
    assert gy.points[:, 0].max() < gz.points[:, 0].min()
    assert gy.weights.sum() == pytest.approx(gz.weights.sum())


def test_misfit_identical_pair(pair, mesh8, grids):
    res = misfit(pair[0], pair[0], mesh8, *grids)
    assert res.J <= 1e-16
    # the grids differ, so S_0 vanishes through discrete reciprocity, i.e. to rounding
    assert np.abs(res.S0).max() <= 1e-15


def test_misfit_forms_agree(pair, mesh8, grids, misfit_systems):
    res = misfit(pair[0], pair[1], mesh8, *grids, systems=misfit_systems, with_volume=True)
    assert res.form_mismatch <= 1e-6
    assert res.J > 0


def test_misfit_swap_invariance(pair, mesh8, grids, misfit_systems):
    s1, s2, o1, o2 = misfit_systems
    a = misfit(pair[0], pair[1], mesh8, *grids, systems=misfit_systems)
    b = misfit(pair[1], pair[0], mesh8, grids[1], grids[0], systems=(s2, s1, o2, o1))
    assert np.max(np.abs(np.abs(a.S0) - np.abs(b.S0.T))) <= 1e-8 * np.abs(a.S0).max()
    assert b.J == pytest.approx(a.J, rel=1e-8)


def test_misfit_quadratic_in_perturbation(pair, mesh8, grids):
    base = pair[0]
    s1 = assemble(base, mesh8)
    o1 = assemble(base, mesh8, OMEGA)
    Js = []
    ts = (1e-2, 1e-3, 1e-4)
    for t in ts:
        other = affine_admittivity([(2 + 1j + t * (1 + 0.5j), (0.3, 0.2, 0.4)),
                                    (5 + 2j + t * (0.5 - 1j), (0.1, -0.3, 0.5))])
        sys = (s1, assemble(other, mesh8), o1, assemble(other, mesh8, OMEGA))
        Js.append(misfit(base, other, mesh8, *grids, systems=sys).J)
    slope = np.polyfit(np.log(ts), np.log(Js), 1)[0]
    assert abs(slope - 2) <= 0.1


def test_grid_outside_pole_region(pair, mesh8, grids):
    bad = PoleGrid(np.array([[0.5, 0.5, 0.5]]), np.ones(1))
    with pytest.raises(GridOutsidePoleRegion):
        misfit(pair[0], pair[1], mesh8, bad, grids[1])
    near = gauss_grid([0.4, 0.4, -0.2], [0.6, 0.6, -0.1], 2)
    with pytest.raises(GridOutsidePoleRegion):
        misfit(pair[0], pair[1], mesh8, grids[0], near)


@pytest.fixture(scope="module")
def peel_mesh():
    return build_mesh(two_layer_domain(r0=1.0, depth=1.0), 16)


PEEL1 = affine_admittivity([(2 + 1j, (0.3, 0.2, 0.4)), (5 + 2j, (0.1, -0.3, 0.5))])
PEEL2 = affine_admittivity([(2.2 + 1j, (0.3, 0.2, 0.4)), (5 + 2j, (0.1, -0.3, 0.5))])


def half_ball_oracle(r, rho):
    """int over {|x| < rho, x3 > 0} of |grad Gamma(x - w)|^2 with w = -r e3."""
    def f(th, s):
        return s * s * np.sin(th) / (s * s + r * r + 2 * s * r * np.cos(th)) ** 2

    v, _ = integrate.dblquad(f, 0, rho, 0, np.pi / 2, epsabs=1e-13, epsrel=1e-11)
    return 2 * np.pi * v / (16 * np.pi ** 2)


def peeling_oracle(r, rho=0.25):
    # frozen two-phase kernel across the portion: grad H = 2/(1 + gamma) grad Gamma on the far side
    g1 = 2 + 1j + 0.3 * 0.5 + 0.2 * 0.5
    g2 = g1 + 0.2
    return -0.2 * (2 / (1 + g1)) * (2 / (1 + g2)) * half_ball_oracle(r, rho)


def test_peeling_zero_pair(peel_mesh):
    rep = peeling_split(PEEL1, PEEL1, peel_mesh, 1, 0.25)
    assert rep.I1[0] == 0 and rep.I2[0] == 0


def test_peeling_additivity_and_oracle(peel_mesh):
    rep = peeling_split(PEEL1, PEEL2, peel_mesh, 1, 0.25)
    assert rep.additivity_defect == 0
    assert rep.E == pytest.approx(0.2)
    assert rep.rho == 0.25
    assert np.allclose(rep.probes[0], [0.5, 0.5, -0.25])
    orc = peeling_oracle(0.25)
    assert abs(rep.I1[0] / orc - 1) <= 0.25
    assert np.isfinite(rep.caccioppoli[0])


def test_peeling_mixed_variant(peel_mesh):
    rep = peeling_split(PEEL1, PEEL2, peel_mesh, 1, 0.25, variant="mixed_nn")
    assert rep.additivity_defect <= 1e-15 * np.abs(rep.S).max()
    assert abs(rep.I1[0]) > 0


def test_peeling_ladder_too_fine(peel_mesh):
    with pytest.raises(LadderTooFine):
        peeling_split(PEEL1, PEEL2, peel_mesh, 1, [0.25, 0.125])
    with pytest.raises(LadderTooFine):
        peeling_split(PEEL1, PEEL2, peel_mesh, 1, 0.5)
    with pytest.raises(ValueError):
        peeling_split(PEEL1, PEEL2, peel_mesh, 1, 0.25, variant="gradient")


def test_three_sphere_trivial(mesh8, unit_adm):
    sys = assemble(unit_adm, mesh8)
    v = solve_dirichlet(sys, lambda x: np.zeros(len(x)))
    rep = three_sphere_check(v, [0.5, 0.5, 0.5], 0.1, 0.15, 0.3, system=sys)
    assert rep.trivial and rep.C_min == 0


def test_three_sphere_linear_oracle(mesh8, unit_adm):
    sys = assemble(unit_adm, mesh8)
    v = solve_dirichlet(sys, lambda x: x[:, 0] - 0.5)
    rep = three_sphere_check(v, [0.5, 0.5, 0.5], 0.1, 0.15, 0.3, s=1.0, lam=1.0, system=sys)
    for r, n in zip(rep.radii, rep.norms):
        assert n == pytest.approx(np.sqrt(4 * np.pi / 15 * r ** 5), rel=1e-10)
    assert rep.delta == pytest.approx(three_sphere_delta(0.1, 0.15, 0.3, 1.0, 1.0))
    assert 0 <= rep.delta < 1
    assert rep.C_min <= 10


def test_three_sphere_delta_formula():
    d = three_sphere_delta(0.1, 0.15, 0.3, 1.0, 10.0)
    assert d == pytest.approx(((0.03) ** -1 - 0.3 ** -1) / (0.1 ** -1 - 0.3 ** -1))


def test_three_sphere_errors(mesh8, unit_adm):
    sys = assemble(unit_adm, mesh8)
    v = solve_dirichlet(sys, lambda x: x[:, 0])
    with pytest.raises(RadiiOrdering):
        three_sphere_check(v, [0.5, 0.5, 0.5], 0.2, 0.15, 0.3)
    with pytest.raises(BallOutsideDomain):
        three_sphere_check(v, [0.5, 0.5, 0.5], 0.1, 0.2, 0.6)


def test_three_sphere_family_bounded(mesh16, unit_adm):
    sys = assemble(unit_adm, mesh16)
    rng = np.random.default_rng(11)
    C = []
    for _ in range(10):
        k = rng.normal(size=(3, 3))
        a = rng.normal(size=4)

        def data(x, k=k, a=a):
            # harmonic: exp(k.x) with |Re k| = |Im k| and Re k orthogonal to Im k
            u, w = k[0], k[1] - (k[1] @ k[0]) / (k[0] @ k[0]) * k[0]
            w *= np.linalg.norm(u) / np.linalg.norm(w)
            return a[0] + a[1] * x[:, 0] + np.real(np.exp(x @ (u + 1j * w)) * (a[2] + 1j * a[3]))

        v = solve_dirichlet(sys, data)
        C.append(three_sphere_check(v, [0.5, 0.5, 0.5], 0.1, 0.15, 0.3, system=sys).C_min)
    C = np.array(C)
    assert np.all(np.isfinite(C)) and C.min() > 0
    assert C.max() / C.min() <= 100
