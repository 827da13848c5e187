import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from detfunc.spectral import (AliasingError, ModelError, NonlinearitySpec, NumericalBlowupError,
                              ProblemSpec, SpectralField, Stepper, Trajectory, basis_functions,
                              chafee_infante, degenerate_cube, estimate_lipschitz, eval_rhs,
                              flat_cutoff, flat_cutoff_derivative, from_grid, grid_points,
                              integrate, make_operator, norm_h_s, project_high, project_low,
                              random_field, sine_problem, step, to_grid, with_nonlinearity)

coeff_vectors = arrays(np.float64, st.integers(1, 12),
                       elements=st.floats(-5, 5, allow_nan=False, width=64))


# --- operator presets ------------------------------------------------------


def test_dirichlet_eigenvalues():
    assert np.allclose(make_operator("dirichlet_heat", 4, 1.0).eigenvalues, [1, 4, 9, 16])
    assert np.allclose(make_operator("dirichlet_heat", 2, 2.0).eigenvalues, [2, 8])


def test_explicit_eigenvalues_pass_through():
    assert np.array_equal(make_operator("explicit", 0, eigenvalues=(2, 2, 5)).eigenvalues,
                          [2, 2, 5])


def test_periodic_eigenvalues_shift_constant_mode():
    lam = make_operator("periodic_heat", 5, 1.0, 2 * math.pi, eps_shift=0.01).eigenvalues
    assert np.allclose(lam, [0.01, 1, 1, 4, 4])


@pytest.mark.parametrize("m,nu", [(0, 1.0), (4, 0.0), (4, -1.0)])
def test_make_operator_rejects_bad_arguments(m, nu):
    with pytest.raises(ModelError):
        make_operator("dirichlet_heat", m, nu)


def test_problem_rejects_decreasing_eigenvalues_and_bad_alpha():
    with pytest.raises(ModelError):
        ProblemSpec(np.array([2.0, 1.0]))
    with pytest.raises(ModelError):
        ProblemSpec(np.array([1.0, 2.0]), alpha=1.0)


# --- transforms ------------------------------------------------------------


def test_single_mode_on_grid_is_sine():
    u = SpectralField.unit(1, 4)
    x = grid_points("dirichlet_sine", math.pi, 8)
    assert np.allclose(to_grid(u, 8), np.sin(x), atol=1e-14)


def test_zero_field_maps_to_zero_grid():
    assert np.array_equal(to_grid(SpectralField.zeros(5), 10), np.zeros(10))


def test_round_trip_two_modes():
    u = SpectralField([1.0, 1.0])
    back = from_grid(to_grid(u, 4), 2)
    assert np.allclose(back.coeffs, [1.0, 1.0], rtol=1e-12)


def test_aliasing_error():
    with pytest.raises(AliasingError):
        to_grid(SpectralField.zeros(8), 4)


@pytest.mark.parametrize("basis,L", [("dirichlet_sine", math.pi), ("periodic_fourier", 7.0)])
@given(c=coeff_vectors)
@settings(max_examples=40, deadline=None)
def test_round_trip_property(basis, L, c):
    u = SpectralField(c, basis, L)
    for n in (c.size, 2 * c.size + 1):
        back = from_grid(to_grid(u, n), c.size, basis, L)
        assert np.allclose(back.coeffs, c, rtol=1e-12, atol=1e-12 * (1 + np.abs(c).max()))


@pytest.mark.parametrize("basis,L", [("dirichlet_sine", 2.0), ("periodic_fourier", 3.0)])
def test_grid_matches_direct_basis_sum(basis, L):
    rng = np.random.default_rng(0)
    c = rng.standard_normal(7)
    x = grid_points(basis, L, 16)
    direct = basis_functions(basis, L, 7, x) @ c
    assert np.allclose(to_grid(SpectralField(c, basis, L), 16), direct, atol=1e-12)


def test_basis_is_orthonormal_for_scaled_inner_product():
    # (u, v) = (2 / L) int u v, checked with a fine midpoint rule
    for basis, L in (("dirichlet_sine", math.pi), ("periodic_fourier", 5.0)):
        x = (np.arange(20000) + 0.5) * L / 20000
        E = basis_functions(basis, L, 6, x)
        G = (2.0 / L) * (E.T @ E) * (L / 20000)
        assert np.allclose(G, np.eye(6), atol=1e-8)


# --- projections and norms -------------------------------------------------


def test_projection_examples():
    u = SpectralField([1.0, 2.0, 3.0])
    assert np.array_equal(project_low(u, 1).coeffs, [1, 0, 0])
    assert np.array_equal(project_high(u, 1).coeffs, [0, 2, 3])
    assert np.array_equal(project_low(u, 0).coeffs, [0, 0, 0])
    assert np.array_equal(project_high(u, 0).coeffs, u.coeffs)
    assert np.array_equal(project_low(u, 3).coeffs, u.coeffs)
    with pytest.raises(ModelError):
        project_low(u, 4)


@given(c=coeff_vectors, data=st.data())
def test_projector_algebra(c, data):
    u = SpectralField(c)
    n = data.draw(st.integers(0, c.size))
    p, q = project_low(u, n), project_high(u, n)
    assert np.array_equal((p + q).coeffs, c)
    assert np.array_equal(project_low(p, n).coeffs, p.coeffs)
    assert not np.any(project_low(q, n).coeffs)
    assert math.isclose(norm_h_s(u) ** 2, norm_h_s(p) ** 2 + norm_h_s(q) ** 2,
                        rel_tol=1e-12, abs_tol=1e-12)


def test_norm_examples():
    lam = [1.0, 4.0, 9.0]
    assert norm_h_s(SpectralField.unit(1, 3)) == 1.0
    assert norm_h_s(SpectralField.unit(2, 3), 1.0, lam) == 2.0
    assert norm_h_s(SpectralField.zeros(3)) == 0.0


# --- right-hand side -------------------------------------------------------


def test_rhs_linear_decay():
    spec = make_operator("dirichlet_heat", 4)
    r = eval_rhs(spec, SpectralField.unit(1, 4))
    assert np.array_equal(r.coeffs, [-1, 0, 0, 0])


def test_rhs_sine_at_zero_returns_forcing():
    spec = sine_problem(8, forcing=SpectralField.unit(1, 8))
    assert np.allclose(eval_rhs(spec, spec.zeros()).coeffs, SpectralField.unit(1, 8).coeffs)


def test_rhs_basis_mismatch():
    spec = make_operator("dirichlet_heat", 4)
    with pytest.raises(ModelError):
        eval_rhs(spec, SpectralField.zeros(4, "periodic_fourier"))


def test_cube_points_are_equilibria():
    spec = degenerate_cube(12, 3)
    for c in ([1, -1, 0.5], [0, 0, 0], [-1, -1, -1]):
        u = spec.field(np.r_[c, np.zeros(9)])
        assert np.max(np.abs(eval_rhs(spec, u).coeffs)) == 0.0


def test_pointwise_sine_matches_quadrature():
    spec = sine_problem(6)
    u = spec.field([0.7, -0.2, 0.1, 0, 0.05, 0])
    # independent evaluation: fine midpoint rule for (2/pi) int sin(u(x)) sin(n x) dx
    x = (np.arange(40000) + 0.5) * math.pi / 40000
    ux = basis_functions("dirichlet_sine", math.pi, 6, x) @ u.coeffs
    ref = (2 / math.pi) * (np.sin(ux) @ basis_functions("dirichlet_sine", math.pi, 6, x)) \
        * math.pi / 40000
    spec64 = spec.replace(n_quad=64)
    got = eval_rhs(spec64, u).coeffs + spec.eigenvalues * u.coeffs
    assert np.allclose(got, ref, atol=1e-8)


# --- cutoff profile --------------------------------------------------------


def test_flat_cutoff_shape():
    x = np.linspace(-5, 5, 20001)
    y, d = flat_cutoff(x), flat_cutoff_derivative(x)
    inner = np.abs(x) <= 1
    assert np.array_equal(y[inner], x[inner])
    assert np.all(y[np.abs(x) >= 3.5] == 0)
    assert np.max(np.abs(d)) <= 1.0 + 1e-15
    # derivative agrees with finite differences of the profile
    fd = np.gradient(y, x)
    assert np.max(np.abs(fd - d)[1:-1]) < 1e-3


def test_cutoff_lipschitz_bound_holds_on_random_pairs():
    spec = chafee_infante(16, mu=2.0)
    L_meas = estimate_lipschitz(spec, n_samples=1000, seed=3)
    assert L_meas <= spec.lipschitz_L + 1e-9
    assert math.isclose(spec.lipschitz_L, abs(2.0 - 3.0 * 1.44 * 2.0))


def test_unbounded_cubic_has_no_global_constant():
    base = make_operator("dirichlet_heat", 4)
    spec = with_nonlinearity(base, NonlinearitySpec("pointwise", "cubic", (1.0,)))
    assert spec.lipschitz_L == math.inf


# --- stepping --------------------------------------------------------------


def test_linear_step_is_exact_exponential():
    spec = make_operator("dirichlet_heat", 6)
    u = spec.field(np.ones(6))
    out = step(spec, u, 0.1)
    assert np.allclose(out.coeffs, np.exp(-spec.eigenvalues * 0.1), rtol=1e-12)


def test_zero_is_fixed():
    spec = sine_problem(8)
    assert not np.any(step(spec, spec.zeros(), 0.01).coeffs)


@pytest.mark.parametrize("scheme", ["exp_euler", "imex_cn"])
def test_first_order_consistency(scheme):
    # (step(dt) - u) / dt -> rhs(u): the error halves with dt
    spec = sine_problem(8, forcing=SpectralField.unit(1, 8))
    u = spec.field(np.r_[1.0, 0.5, 0.2, np.zeros(5)])
    rhs = eval_rhs(spec, u).coeffs
    errs = []
    for dt in (1e-3, 5e-4):
        d = (step(spec, u, dt, scheme).coeffs - u.coeffs) / dt
        errs.append(np.linalg.norm(d - rhs))
    assert 1.8 <= errs[0] / errs[1] <= 2.2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reports_time():
    base = make_operator("explicit", 0, eigenvalues=[1.0])
    spec = with_nonlinearity(base, NonlinearitySpec("pointwise", "linear", (1e308,)))
    with pytest.raises(NumericalBlowupError) as info:
        integrate(spec, spec.field([1e10]), 1.0, 0.5)
    assert info.value.time == pytest.approx(0.5)


def test_integrate_bookkeeping():
    spec = make_operator("dirichlet_heat", 3)
    u0 = SpectralField.unit(1, 3)
    tr = integrate(spec, u0, 0.01, 0.01)
    assert len(tr) == 2
    tr = integrate(spec, u0, 1.0, 0.01)
    assert len(tr) == 101
    assert tr.times[-1] == pytest.approx(1.0)
    assert tr.final.coeffs[0] == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_trajectory_invariants():
    tr = Trajectory(np.zeros((3, 4)), 0.5, 1.0)
    assert np.allclose(tr.times, [1.0, 1.5, 2.0])
    assert tr.slice(1).t0 == 1.5
    with pytest.raises(ModelError):
        Trajectory(np.zeros((3, 4)), 0.0)


def test_stepper_shift_changes_decay():
    spec = make_operator("dirichlet_heat", 2)
    s = Stepper(spec, 0.1, shift=[1.0, 0.0])
    assert s.decay[0] == pytest.approx(math.exp(-0.2))


@pytest.mark.parametrize("amp", [1.0, 10.0, 100.0])
def test_clipped_cubic_is_dissipative(amp):
    spec = chafee_infante(16, mu=2.0)
    rng = np.random.default_rng(int(amp))
    tr = integrate(spec, random_field(spec, rng, amp), 50.0, 0.01)
    tail = np.abs(to_grid_stack(tr.states[500:], spec)).max()
    # every equilibrium obeys |u| <= sqrt(mu)
    assert tail <= math.sqrt(2.0) + 1e-6


def to_grid_stack(states, spec):
    return np.stack([to_grid(spec.field(c), 64) for c in states[::50]])
