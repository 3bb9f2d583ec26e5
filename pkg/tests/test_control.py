import math

import numpy as np
import pytest
from scipy.linalg import null_space

from conftest import make_basis
from impstab.control import (ControllabilityError, ConvergenceError, PenalizedProblem,
                             apply_Lk, minimize_penalized, mode_controls, prox_norm,
                             single_pulse_control, smooth_gradient, smooth_value)
from impstab.mesh import weighted_norm
from impstab.propagator import (ImpulseEvent, mild_solution, omega_cells, omega_norm,
                                semigroup_apply)
from impstab.rng import SplitMix64
from impstab.schedule import ObservabilityConstants, build_schedule
from oracles import brute_force_2d, central_difference, scalar_penalized_minimizer


@pytest.fixture(scope="module")
def small():
    return make_basis(0.5, 1.0, 0.5, n=120)


def test_gradient_at_zero(small):
    spec, basis = small
    y0 = 1 - basis.mesh.centers
    prob = PenalizedProblem(basis, spec, 0.05, 0.1, y0, 0.1)
    g = smooth_gradient(prob, np.zeros(basis.size))
    ref = semigroup_apply(basis, 0.1, y0)
    assert weighted_norm(basis.mesh, g - ref) <= 1e-12 * weighted_norm(basis.mesh, ref)


def test_gradient_vanishes_on_unobservable(small):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.001, 0.002, np.zeros(basis.size), 0.1)
    f = prob.factor()
    ns = null_space(f.O)
    assert ns.shape[1] > 0
    a = np.zeros(basis.size)
    a[f.active] = ns[:, 0]
    v = basis.synthesize(a)
    g = smooth_gradient(prob, v)
    assert weighted_norm(basis.mesh, g) <= 1e-10 * weighted_norm(basis.mesh, v)


def test_gradient_central_differences(small):
    spec, basis = small
    rng = SplitMix64(17)
    prob = PenalizedProblem(basis, spec, 0.002, 0.004, rng.uniform(basis.size), 0.1)
    f = lambda v: smooth_value(prob, v)
    for _ in range(20):
        v, w = rng.uniform(basis.size), rng.uniform(basis.size)
        fd = central_difference(f, v, w, h=1e-4)
        an = float(np.dot(basis.mesh.widths * smooth_gradient(prob, v), w))
        assert an == pytest.approx(fd, rel=1e-6, abs=1e-9 * abs(f(v)))


def test_prox_examples():
    z = np.array([0.0, 2.0])
    np.testing.assert_allclose(prox_norm(z, 0.5), 0.75 * z)
    np.testing.assert_array_equal(prox_norm(z, 0.0), z)
    np.testing.assert_array_equal(prox_norm(z, 2.0), 0.0)
    np.testing.assert_array_equal(prox_norm(z, 3.0), 0.0)
    with pytest.raises(ValueError):
        prox_norm(z, -1.0)


@pytest.mark.parametrize("kw", [dict(s=0.2, r=0.1), dict(s=0.0, r=0.1), dict(eps_pen=0.0)])
def test_problem_rejects(small, kw):
    spec, basis = small
    args = dict(s=0.05, r=0.1, eps_pen=0.1) | kw
    with pytest.raises(ValueError):
        PenalizedProblem(basis, spec, y0=np.zeros(basis.size), **args)


@pytest.mark.parametrize("method", ["fista", "exact"])
def test_zero_data(small, method):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.05, 0.1, np.zeros(basis.size), 0.1)
    sol = minimize_penalized(prob, method=method)
    assert np.all(sol.v_opt == 0) and np.all(sol.u_opt == 0)


@pytest.mark.parametrize("method", ["fista", "exact"])
@pytest.mark.parametrize("n_modes", [1, None])
def test_one_mode_closed_form(laplace_full_omega, method, n_modes):
    spec, basis = laplace_full_omega
    s, r, eps = 0.05, 0.1, 0.1
    lam = basis.lambdas[0]
    prob = PenalizedProblem(basis, spec, s, r, basis.modes[:, 0], eps, n_modes=n_modes)
    sol = minimize_penalized(prob, method=method)
    v_star = scalar_penalized_minimizer(math.exp(-2 * lam * s), math.exp(-lam * r), eps)
    assert v_star < 0
    assert sol.v_coeffs[0] == pytest.approx(v_star, rel=1e-9)
    assert np.max(np.abs(sol.v_coeffs[1:]), initial=0.0) <= 1e-9 * abs(v_star)
    assert sol.terminal_norm == pytest.approx(eps, rel=1e-8)


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("method", ["fista", "exact"])
def test_two_mode_brute_force(small, seed, method):
    spec, basis = small
    rng = SplitMix64(seed)
    s, r, eps = 0.01, 0.02, 0.05
    c = rng.uniform(2)
    y0 = basis.synthesize(np.concatenate([c, np.zeros(basis.size - 2)]))
    prob = PenalizedProblem(basis, spec, s, r, y0, eps, n_modes=2)
    sol = minimize_penalized(prob, method=method)

    n_om = omega_cells(basis.mesh, spec.omega_a)
    O = (np.sqrt(basis.mesh.widths[:n_om])[:, None] * basis.modes[:n_om, :2]
         * np.exp(-basis.lambdas[:2] * s))
    g = np.exp(-basis.lambdas[:2] * r) * c
    theta = eps * np.linalg.norm(c)
    obj = lambda a: 0.5 * np.sum((O @ a) ** 2) + g @ a + theta * np.linalg.norm(a)
    radius = 2 * np.linalg.norm(g) / np.linalg.svd(O, compute_uv=False).min() ** 2
    ref = brute_force_2d(obj, radius)
    assert np.linalg.norm(sol.v_coeffs - ref) <= 1e-6 * max(1.0, np.linalg.norm(ref))
    assert obj(sol.v_coeffs) <= obj(ref) + 1e-12 * abs(obj(ref))


def test_fista_and_exact_agree(small):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.01, 0.02, 1 - basis.mesh.centers, 0.05, n_modes=4)
    a = minimize_penalized(prob, method="fista")
    b = minimize_penalized(prob, method="exact")
    # a 1e-8 residual bounds the iterate error only up to the conditioning of H
    assert np.linalg.norm(a.v_coeffs - b.v_coeffs) <= 1e-6 * np.linalg.norm(b.v_coeffs)
    assert a.optimality_residual < 1e-8 and b.optimality_residual < 1e-8


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.3])
def test_reported_residual(small, eps):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.01, 0.02, 1 - basis.mesh.centers, eps)
    sol = minimize_penalized(prob, method="exact")
    assert sol.optimality_residual <= 1e-8
    assert sol.terminal_norm == pytest.approx(prob.theta, rel=1e-10)


def test_subgradient_optimality(small):
    """Forward re-evaluation of the optimality condition from the grid vector.

    At eps = 0.05 the minimizer has norm ~1e7 and forward evaluation of the
    gradient loses ~1e-7; eps = 0.1 keeps ||v*|| ~ 1e4.
    """
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.01, 0.02, 1 - basis.mesh.centers, 0.1)
    sol = minimize_penalized(prob, method="exact")
    a = sol.v_coeffs
    grad = basis.coefficients(smooth_gradient(prob, sol.v_opt))
    resid = np.linalg.norm(grad + prob.theta * a / np.linalg.norm(a))
    assert resid <= 1e-8 * (1 + np.linalg.norm(grad))
    n_om = omega_cells(basis.mesh, spec.omega_a)
    assert sol.u_opt.shape == (n_om,)


def test_uniqueness_from_random_start(small):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.01, 0.02, 1 - basis.mesh.centers, 0.05, n_modes=4)
    assert prob.admissible
    a = minimize_penalized(prob)
    v0 = basis.synthesize(np.concatenate([SplitMix64(5).uniform(4), np.zeros(basis.size - 4)]))
    b = minimize_penalized(prob, v0=v0)
    assert np.linalg.norm(a.v_coeffs - b.v_coeffs) <= 1e-8 * np.linalg.norm(a.v_coeffs)


def test_local_minimality(small):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.01, 0.02, 1 - basis.mesh.centers, 0.05)
    sol = minimize_penalized(prob, method="exact")
    J = lambda v: smooth_value(prob, v) + prob.theta * weighted_norm(basis.mesh, v)
    j0 = J(sol.v_opt)
    rng = SplitMix64(23)
    for _ in range(10):
        d = rng.uniform(basis.size)
        d *= 1e-3 / weighted_norm(basis.mesh, d)
        assert J(sol.v_opt + d) >= j0 - 1e-12 * abs(j0)


def test_fista_budget(small):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.01, 0.02, 1 - basis.mesh.centers, 1e-6)
    with pytest.raises(ConvergenceError) as info:
        minimize_penalized(prob, max_iter=3)
    assert info.value.last is not None and info.value.last.iterations == 3


def test_exact_out_of_reach(small):
    spec, basis = small
    prob = PenalizedProblem(basis, spec, 0.25, 0.5, 1 - basis.mesh.centers, 1e-30)
    with pytest.raises(ConvergenceError):
        minimize_penalized(prob, method="exact")


def test_smallest_singular_value_reported():
    """Non-coercivity surrogate: sigma_min of R e^{sA} on the resolved modes shrinks with n."""
    s = 0.01
    sig = []
    for n in (40, 80, 160, 320):
        spec, basis = make_basis(0.5, 1.0, 0.5, n=n)
        n_om, m = omega_cells(basis.mesh, spec.omega_a), basis.resolved_count
        O = (np.sqrt(basis.mesh.widths[:n_om])[:, None] * basis.modes[:n_om, :m]
             * np.exp(-basis.lambdas[:m] * s))
        sig.append(np.linalg.svd(O, compute_uv=False).min())
    print("sigma_min by n:", dict(zip((40, 80, 160, 320), sig)))
    assert all(a >= b for a, b in zip(sig, sig[1:]))


def test_single_pulse_zero_branch(laplace_full_omega):
    spec, basis = laplace_full_omega
    phi = basis.modes[:, 0]
    assert math.exp(-basis.lambdas[0] / 2) == pytest.approx(0.0072, abs=1e-4)
    pc = single_pulse_control(basis, spec, phi, 0.0, 0.25, 0.5, 0.1)
    assert np.all(pc.h == 0) and pc.h_norm == 0
    assert pc.terminal_norm <= 1.05 * 0.1
    pc0 = single_pulse_control(basis, spec, np.zeros(basis.size), 0.0, 0.25, 0.5, 0.1)
    assert np.all(pc0.h == 0)


def test_single_pulse_verified_and_cost(bench_small):
    spec, basis = bench_small
    y0 = 1 - basis.mesh.centers
    eps = math.exp(-2)
    pc = single_pulse_control(basis, spec, y0, 0.0, 0.25, 0.5, eps)
    tr = mild_solution(basis, y0, [ImpulseEvent(0, 0.25, pc.h)], [0.5])
    y0n = weighted_norm(basis.mesh, y0)
    assert tr.norms[0] == pytest.approx(pc.terminal_norm, rel=1e-12)
    assert tr.norms[0] <= 1.05 * eps * y0n
    assert pc.h_norm > 0 and pc.cost_pass
    assert pc.h_norm == pytest.approx(omega_norm(basis.mesh, pc.h))


def test_single_pulse_failure(bench_small):
    spec, basis = bench_small
    with pytest.raises(ControllabilityError) as info:
        single_pulse_control(basis, spec, 1 - basis.mesh.centers, 0.0, 0.25, 0.5, 1e-3,
                             floor=0.0, max_refine=0, method="fista", max_iter=5)
    assert "history" in info.value.diagnostics


@pytest.mark.parametrize("args", [(0.3, 0.25, 0.5, 0.1), (0.0, 0.25, 0.5, 0.0)])
def test_single_pulse_rejects(bench_small, args):
    spec, basis = bench_small
    with pytest.raises(ValueError):
        single_pulse_control(basis, spec, np.zeros(basis.size), *args)


@pytest.fixture(scope="module")
def bench_modes(bench):
    spec, basis, sched, _ = bench
    return [mode_controls(basis, spec, sched, k) for k in range(3)]


def test_mode_controls_counts_and_verification(bench, bench_modes):
    spec, basis, sched, _ = bench
    for mcs in bench_modes:
        assert mcs.mode_ids.size == sched.N[mcs.k]
        assert np.all(mcs.terminal_norms <= 1.05 * mcs.eps_k)
        assert np.isfinite(mcs.sum_sq_norms)


def test_mode_controls_zero_branch(laplace_2000):
    spec, basis = laplace_2000
    sched = build_schedule(basis, ObservabilityConstants(), 1.0, b=2.0, eta=4.0, K=1)
    mcs = mode_controls(basis, spec, sched, 0)
    assert mcs.mode_ids.size == 1
    assert math.exp(-basis.lambdas[0] * 0.5) <= sched.eps[0]
    assert np.all(mcs.controls == 0)


def test_mode_controls_rejects_k(bench):
    spec, basis, sched, _ = bench
    with pytest.raises(ValueError):
        mode_controls(basis, spec, sched, sched.K)


def test_apply_Lk_properties(bench, bench_modes):
    spec, basis, _, _ = bench
    mcs = bench_modes[1]
    N = mcs.mode_ids.size
    v = basis.modes[:, N + 3]
    assert np.max(np.abs(apply_Lk(mcs, basis, v))) <= 1e-10 * mcs.operator_norm_bound
    np.testing.assert_allclose(apply_Lk(mcs, basis, basis.modes[:, 0]), mcs.controls[0],
                               atol=1e-10 * np.linalg.norm(mcs.controls[0]))
    rng = SplitMix64(31)
    for _ in range(20):
        v = rng.uniform(basis.size)
        lhs = omega_norm(basis.mesh, apply_Lk(mcs, basis, v)) ** 2
        assert lhs <= weighted_norm(basis.mesh, v) ** 2 * mcs.sum_sq_norms * (1 + 1e-12)
        w = rng.uniform(basis.size)
        np.testing.assert_allclose(apply_Lk(mcs, basis, 2 * v - w),
                                   2 * apply_Lk(mcs, basis, v) - apply_Lk(mcs, basis, w),
                                   atol=1e-9 * mcs.operator_norm_bound * 3)


def test_mode_rows(bench, bench_modes):
    _, basis, _, _ = bench
    rows = bench_modes[0].rows(basis)
    assert rows[0][:2] == (0, 1) and rows[0][2] == pytest.approx(basis.lambdas[0])
