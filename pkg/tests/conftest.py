import warnings

import numpy as np
import pytest

from impstab.mesh import ProblemSpec, assemble_operator, build_mesh, default_gamma
from impstab.schedule import ObservabilityConstants, build_schedule
from impstab.spectral import eigendecompose

BENCH = dict(alpha=0.5, beta=1.0, mu=0.5, degeneracy="WD", omega_a=0.5, horizon_T=1.0)


def make_basis(alpha, beta, mu, degeneracy="WD", n=400, omega_a=0.5, gamma=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec = ProblemSpec(alpha, beta, mu, degeneracy, omega_a)
        mesh = build_mesh(n, default_gamma(alpha) if gamma is None else gamma)
        basis = eigendecompose(assemble_operator(spec, mesh))
    return spec, basis


@pytest.fixture(scope="session")
def laplace_2000():
    """alpha = 0, mu = 0 on a uniform mesh: the Dirichlet Laplacian."""
    return make_basis(0.0, 1.0, 0.0, "WD", n=2000)


@pytest.fixture(scope="session")
def laplace_small():
    return make_basis(0.0, 1.0, 0.0, "WD", n=200)


@pytest.fixture(scope="session")
def laplace_full_omega():
    """Dirichlet Laplacian with omega covering every cell."""
    return make_basis(0.0, 1.0, 0.0, "WD", n=200, omega_a=0.9999)


@pytest.fixture(scope="session")
def bench():
    spec, basis = make_basis(n=2000, **{k: v for k, v in BENCH.items() if k != "horizon_T"})
    sched = build_schedule(basis, ObservabilityConstants(), 1.0, b=2.0, eta=4.0, K=5)
    y0 = 1.0 - basis.mesh.centers
    return spec, basis, sched, y0


@pytest.fixture(scope="session")
def bench_small():
    spec, basis = make_basis(0.5, 1.0, 0.5, "WD", n=400)
    return spec, basis


@pytest.fixture
def rng():
    from impstab.rng import SplitMix64
    return SplitMix64(42)


def random_unit(rng, n):
    v = rng.uniform(n)
    return v / np.linalg.norm(v)


CASES_PROP = [
    (0.5, 1.0, 0.5, "WD"), (0.0, 1.0, 0.0, "WD"), (1.5, 0.5, -1.0, "SD"),
    (0.5, 1.5, 0.0625, "WD"), (1.2, 0.8, 0.01, "SD"),
]


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
