import numpy as np
import pytest

from conftest import CASES_PROP, make_basis
from impstab.mesh import weighted_inner_product, weighted_norm
from impstab.propagator import (ImpulseEvent, extend_omega, mild_solution, monotonicity_check,
                                omega_cells, omega_inner_product, restrict_omega, semigroup_apply)
from impstab.rng import SplitMix64
from oracles import dirichlet_eigenvalues


def test_identity_at_zero(bench_small):
    _, basis = bench_small
    v = SplitMix64(1).uniform(basis.size)
    out = semigroup_apply(basis, 0.0, v)
    assert weighted_norm(basis.mesh, out - v) <= 1e-10 * weighted_norm(basis.mesh, v)


def test_eigenvector_decay(bench_small):
    _, basis = bench_small
    phi = basis.modes[:, 0]
    out = semigroup_apply(basis, 0.3, phi)
    expected = np.exp(-basis.lambdas[0] * 0.3) * phi
    assert weighted_norm(basis.mesh, out - expected) <= 1e-12


def test_two_mode_dirichlet(laplace_2000):
    _, basis = laplace_2000
    v = basis.modes[:, 0] + basis.modes[:, 1]
    c = basis.coefficients(semigroup_apply(basis, 1.0, v))
    exact = np.exp(-dirichlet_eigenvalues([1, 2]))
    # e^{-4 pi^2} ~ 7e-18 is below round-off of a norm-5e-5 vector: errors are
    # measured relative to the output norm
    scale = np.linalg.norm(c)
    np.testing.assert_allclose(c[:2], np.exp(-basis.lambdas[:2]), rtol=0, atol=1e-8 * scale)
    assert c[0] == pytest.approx(exact[0], rel=1e-3)
    assert np.max(np.abs(c[2:])) <= 1e-8 * scale


def test_negative_time(bench_small):
    with pytest.raises(ValueError):
        semigroup_apply(bench_small[1], -1.0, np.zeros(bench_small[1].size))


@pytest.mark.parametrize("case", CASES_PROP)
def test_semigroup_property(case):
    _, basis = make_basis(*case, n=200)
    rng = SplitMix64(3)
    for _ in range(20):
        s, t = rng.random(2) * 0.05
        v = rng.uniform(basis.size)
        a = semigroup_apply(basis, s, semigroup_apply(basis, t, v))
        b = semigroup_apply(basis, s + t, v)
        assert weighted_norm(basis.mesh, a - b) <= 1e-10 * max(weighted_norm(basis.mesh, b), 1e-300) \
            + 1e-14 * weighted_norm(basis.mesh, v)


def test_omega_restrict_extend(bench_small):
    spec, basis = bench_small
    m = basis.mesh
    n_om = omega_cells(m, spec.omega_a)
    assert np.all(m.centers[:n_om] < spec.omega_a) and m.centers[n_om] >= spec.omega_a
    rng = SplitMix64(9)
    g = rng.uniform(n_om)
    np.testing.assert_array_equal(restrict_omega(m, spec, extend_omega(m, spec, g)), g)
    outside = np.zeros(m.n_cells)
    outside[n_om:] = 1.0
    assert np.all(restrict_omega(m, spec, outside) == 0)
    for _ in range(50):
        g, v = rng.uniform(n_om), rng.uniform(m.n_cells)
        lhs = weighted_inner_product(m, extend_omega(m, spec, g), v)
        rhs = omega_inner_product(m, g, restrict_omega(m, spec, v))
        assert abs(lhs - rhs) <= 1e-14 * max(1.0, abs(lhs))


def test_omega_too_small():
    spec, basis = make_basis(0.0, 1.0, 0.0, n=20, omega_a=0.06)
    with pytest.raises(ValueError, match="cell"):
        restrict_omega(basis.mesh, spec, np.zeros(20))


def test_extend_wrong_length(bench_small):
    spec, basis = bench_small
    with pytest.raises(ValueError):
        extend_omega(basis.mesh, spec, np.zeros(3))


def test_mild_no_impulses_is_free(bench_small):
    _, basis = bench_small
    y0 = 1.0 - basis.mesh.centers
    times = np.linspace(0, 0.5, 11)
    tr = mild_solution(basis, y0, [], times)
    for t, nrm in zip(times, tr.norms):
        assert nrm == pytest.approx(weighted_norm(basis.mesh, semigroup_apply(basis, t, y0)),
                                    rel=1e-12, abs=1e-300)


def test_mild_exact_cancellation(laplace_full_omega):
    spec, basis = laplace_full_omega
    m = basis.mesh
    assert omega_cells(m, spec.omega_a) == m.n_cells
    y0 = m.centers * (1 - m.centers)
    tau = 0.01
    g = -restrict_omega(m, spec, semigroup_apply(basis, tau, y0))
    tr = mild_solution(basis, y0, [ImpulseEvent(0, tau, g)], [0.0, 0.005, tau, 0.02, 0.1])
    assert tr.norms[1] > 0
    assert np.all(tr.norms[2:] <= 1e-12 * tr.y0_norm)
    rec = tr.impulse_records[0]
    assert rec.norm_pre == pytest.approx(weighted_norm(m, semigroup_apply(basis, tau, y0)), rel=1e-12)


def test_mild_zero_data(bench_small):
    spec, basis = bench_small
    n_om = omega_cells(basis.mesh, spec.omega_a)
    evs = [ImpulseEvent(0, 0.1, np.zeros(n_om)), ImpulseEvent(1, 0.2, np.zeros(n_om))]
    tr = mild_solution(basis, np.zeros(basis.size), evs, [0.0, 0.15, 0.3])
    assert np.all(tr.norms == 0)
    g = np.ones(n_om)
    tr = mild_solution(basis, np.zeros(basis.size), [ImpulseEvent(0, 0.1, g)], [0.1, 0.3])
    direct = semigroup_apply(basis, 0.2, extend_omega(basis.mesh, spec, g))
    assert tr.norms[1] == pytest.approx(weighted_norm(basis.mesh, direct), rel=1e-12)


def test_mild_zero_impulse_equals_free(bench_small):
    spec, basis = bench_small
    n_om = omega_cells(basis.mesh, spec.omega_a)
    y0 = SplitMix64(2).uniform(basis.size)
    times = [0.0, 0.1, 0.2, 0.4]
    a = mild_solution(basis, y0, [ImpulseEvent(0, 0.2, np.zeros(n_om))], times)
    b = mild_solution(basis, y0, [], times)
    np.testing.assert_array_equal(a.norms, b.norms)


@pytest.mark.parametrize("taus,times", [([0.2, 0.1], [0.3]), ([0.1, 0.1], [0.3]),
                                        ([0.1], [0.3, 0.2]), ([0.0], [0.3])])
def test_mild_rejects_unsorted(bench_small, taus, times):
    spec, basis = bench_small
    n_om = omega_cells(basis.mesh, spec.omega_a)
    evs = [ImpulseEvent(i, t, np.zeros(n_om)) for i, t in enumerate(taus)]
    with pytest.raises(ValueError):
        mild_solution(basis, np.zeros(basis.size), evs, times)


def test_monotone_laplacian(laplace_small):
    _, basis = laplace_small
    y0 = SplitMix64(4).uniform(basis.size)
    r = monotonicity_check(basis, y0, np.linspace(0, 1, 201))
    assert r.delta_h == 0.0
    assert r.max_violation <= 1e-12 * weighted_norm(basis.mesh, y0)


def test_monotone_first_mode(bench_small):
    _, basis = bench_small
    r = monotonicity_check(basis, basis.modes[:, 0], np.linspace(0, 1, 101))
    assert r.max_violation <= 1e-15


@pytest.mark.parametrize("case", CASES_PROP)
def test_monotone_random(case):
    _, basis = make_basis(*case, n=200)
    rng = SplitMix64(21)
    for _ in range(5):
        y0 = rng.uniform(basis.size)
        r = monotonicity_check(basis, y0, np.sort(rng.random(60)))
        assert r.max_violation <= 1e-12 * weighted_norm(basis.mesh, y0)


def test_monotone_negative_spectrum():
    """With lambda_1 < 0 the weighted norm e^{-delta_h t}||y|| is still nonincreasing."""
    from dataclasses import replace
    from impstab.spectral import eigendecompose
    _, basis = make_basis(0.0, 1.0, 0.0, n=100)
    op = basis.operator
    with pytest.warns(UserWarning):
        b2 = eigendecompose(replace(op, diag=op.diag + 30.0,
                                    potential_values=op.potential_values + 30.0))
    y0 = SplitMix64(8).uniform(100)
    r = monotonicity_check(b2, y0, np.linspace(0, 1, 101))
    assert r.delta_h > 0
    assert r.max_violation <= 1e-12 * weighted_norm(b2.mesh, y0) * np.exp(r.delta_h)
