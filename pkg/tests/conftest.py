import numpy as np
import pytest

from calderon_lab.domain import AprioriData, augment, build_layered_domain
from calderon_lab.mesh import build_mesh
from calderon_lab.presets import affine_admittivity, constant_admittivity

# acceptance outcomes collected by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def small_domain(depth=0.75, r0=0.5, pitch=0.125, inner_rect=(0.375, 0.625)):
    """Unit cube around [0.25, 0.75]^3, measurement portion on the bottom face."""
    apriori = AprioriData(n_layers=1, r0=r0)
    dom = build_layered_domain(
        boxes=[((0, 0, 0), (1, 1, 1)), ((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))],
        portions=[
            {"owner": 0, "face": "-z", "rect": ((0.125, 0.875), (0.125, 0.875))},
            {"owner": 1, "face": "-z", "rect": (inner_rect, inner_rect)},
        ],
        pitch=pitch,
        apriori=apriori,
    )
    return augment(dom, depth)


@pytest.fixture(scope="session")
def domain():
    return small_domain()


@pytest.fixture(scope="session")
def mesh8(domain):
    return build_mesh(domain, 8)


@pytest.fixture(scope="session")
def mesh16(domain):
    return build_mesh(domain, 16)


@pytest.fixture(scope="session")
def pair():
    a1 = affine_admittivity([(2 + 1j, (0.3, 0.2, 0.4)), (5 + 2j, (0.1, -0.3, 0.5))])
    a2 = affine_admittivity([(2.3 + 0.8j, (0.1, 0.2, 0.4)), (4.5 + 2.2j, (0.1, 0.3, 0.2))])
    return a1, a2


@pytest.fixture(scope="session")
def unit_adm():
    return constant_admittivity([1.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
