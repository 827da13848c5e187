import math
import warnings

import numpy as np
import pytest

from detfunc.embedding import OracleTheta
from detfunc.functionals import FunctionalSpec, mode_threshold, quadratic_oscillator_functional
from detfunc.lab import (DecayFit, NudgeConfig, blind_orbit, classify, delay_windows, fit_decay,
                         integrate_linear, nudge, oscillator_matrix, oscillator_orbit,
                         run_pair_experiment, separation_scan, takens_nudge, trig_residual)
from detfunc.spectral import (ModelError, SpectralField, Trajectory, chafee_infante, integrate,
                              random_field, sine_problem)


def forced_sine(m=16):
    spec = sine_problem(m)
    return spec.replace(forcing=spec.field(np.r_[3.0, np.zeros(m - 1)]))


# --- decay fit -------------------------------------------------------------


def test_fit_recovers_exact_exponential():
    t = np.linspace(0, 10, 1001)
    fit = fit_decay(t, 3.0 * np.exp(-0.7 * t))
    assert fit.rate == pytest.approx(0.7, rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.t_start == pytest.approx(5.0)


def test_fit_ignores_roundoff_tail():
    t = np.linspace(0, 40, 4001)
    g = np.maximum(np.exp(-2.0 * t), 1e-16)
    fit = fit_decay(t, g)
    assert fit.rate == pytest.approx(2.0, rel=1e-8)
    assert fit.t_end < 13.0


def test_zero_gap_is_inconclusive():
    t = np.linspace(0, 1, 11)
    fit = fit_decay(t, np.zeros(11))
    assert classify(fit, np.zeros(11)) == "inconclusive"


# --- pair experiments ------------------------------------------------------


@pytest.fixture(scope="module")
def chafee():
    return chafee_infante(16, mu=2.0)


def test_modes_pair_is_determining(chafee):
    N = mode_threshold(chafee.lipschitz_L, 0, chafee.eigenvalues)
    F = [FunctionalSpec.fourier_mode(n) for n in range(1, N + 1)]
    rng = np.random.default_rng(2)
    r = run_pair_experiment(chafee, F, random_field(chafee, rng, 2.0),
                            random_field(chafee, rng, 2.0), 4.0, coupling="observed")
    assert r.verdict == "determining_observed"
    assert r.fit.rate > 0 and r.fit.r_squared >= 0.99
    assert r.times.shape == r.state_gap.shape == r.functional_gap.shape
    assert np.max(r.functional_gap) < 1e-12


def test_no_functionals_distinct_equilibria(chafee):
    phi = integrate(chafee, chafee.field(np.r_[1.0, np.zeros(15)]), 20.0).final
    r = run_pair_experiment(chafee, [], phi, -phi, 10.0)
    assert r.verdict == "not_determining"


def test_identical_initial_data(chafee):
    u0 = random_field(chafee, np.random.default_rng(0), 1.0)
    r = run_pair_experiment(chafee, [FunctionalSpec.fourier_mode(1)], u0, u0, 1.0)
    assert not np.any(r.state_gap) and not np.any(r.functional_gap)
    assert r.verdict == "inconclusive"


def test_pair_symmetry(chafee):
    rng = np.random.default_rng(5)
    u0, v0 = random_field(chafee, rng, 2.0), random_field(chafee, rng, 2.0)
    F = [FunctionalSpec.node(1.0), FunctionalSpec.fourier_mode(2)]
    a = run_pair_experiment(chafee, F, u0, v0, 2.0)
    b = run_pair_experiment(chafee, F, v0, u0, 2.0)
    assert np.allclose(a.state_gap, b.state_gap, atol=1e-12, rtol=0)
    assert np.allclose(a.functional_gap, b.functional_gap, atol=1e-12, rtol=0)


def test_observed_coupling_needs_linear_functionals(chafee):
    u0 = chafee.zeros()
    F = [FunctionalSpec.polynomial(1, 1, [0.0, 1.0])]
    with pytest.raises(ModelError):
        run_pair_experiment(chafee, F, u0, u0, 0.1, coupling="observed")


def test_report_serialisation(tmp_path, chafee):
    rng = np.random.default_rng(1)
    r = run_pair_experiment(chafee, [FunctionalSpec.fourier_mode(1)],
                            random_field(chafee, rng), random_field(chafee, rng), 0.5)
    p = r.to_csv(tmp_path / "r.csv")
    assert p.read_text().splitlines()[0] == "t,functional_gap,state_gap"
    j = r.to_json(tmp_path / "r.json", {"seed": 1})
    assert '"verdict"' in j.read_text()


# --- nudging ---------------------------------------------------------------


def test_nudge_converges_and_respects_bound():
    spec = forced_sine()
    truth = integrate(spec, random_field(spec, np.random.default_rng(1), 2.0), 8.0)
    _, res = nudge(spec, truth, NudgeConfig(10.0, 1), spec.zeros())
    assert res.verdict == "determining_observed"
    assert res.fit.rate > 0.5
    assert res.beta_bound > 0
    # gap stays below gap(0) exp(-beta_bound t) by construction of beta_bound
    t = truth.times
    assert np.all(res.state_gap[1:] <= res.state_gap[0] * np.exp(-res.beta_bound * t[1:]) * (1 + 1e-12))


def test_nudge_from_truth_stays_on_truth():
    spec = forced_sine()
    truth = integrate(spec, random_field(spec, np.random.default_rng(1), 2.0), 3.0)
    _, res = nudge(spec, truth, NudgeConfig(10.0, 1), truth[0])
    assert np.max(res.state_gap) <= 1e-10


def test_gain_monotonicity():
    spec = forced_sine()
    truth = integrate(spec, random_field(spec, np.random.default_rng(4), 2.0), 6.0)
    rates = [nudge(spec, truth, NudgeConfig(f * spec.lipschitz_L, 1), spec.zeros())[1].fit.rate
             for f in (2, 5, 10)]
    # saturates once the high modes set the rate
    assert rates[0] < rates[1] <= rates[2] * (1 + 1e-4)


def test_nudge_log_gap_decreasing_on_most_steps():
    spec = forced_sine()
    truth = integrate(spec, random_field(spec, np.random.default_rng(4), 2.0), 6.0)
    _, res = nudge(spec, truth, NudgeConfig(10.0, 1), spec.zeros())
    lo, hi = np.searchsorted(res.times, [res.fit.t_start, res.fit.t_end])
    d = np.diff(np.log(res.state_gap[lo:hi + 1]))
    assert np.mean(d < 0) >= 0.95


def test_zero_gain_control_does_not_converge():
    spec = chafee_infante(16, mu=2.0)
    phi = integrate(spec, spec.field(np.r_[1.0, np.zeros(15)]), 20.0).final
    truth = integrate(spec, phi, 6.0)
    with pytest.warns(RuntimeWarning, match="precondition"):
        _, res = nudge(spec, truth, NudgeConfig(0.0, 1), -phi)
    assert res.verdict == "not_determining"


def test_nudge_warns_on_violated_threshold():
    spec = chafee_infante(16, mu=2.0)
    truth = integrate(spec, spec.zeros(), 0.1)
    with pytest.warns(RuntimeWarning, match="lambda_\\(N\\+1\\)"):
        nudge(spec, truth, NudgeConfig(100.0, 1), spec.zeros())


def test_nudge_config_validation():
    with pytest.raises(ModelError):
        NudgeConfig(-1.0, 1)
    with pytest.raises(ModelError):
        NudgeConfig(1.0, 0)


def test_takens_nudge_with_oracle_is_bitwise_nudge():
    spec = forced_sine()
    k, lag, dt = 4, 25, 0.01
    full = integrate(spec, random_field(spec, np.random.default_rng(9), 2.0), 6.0, dt)
    z = FunctionalSpec.node(1.0).evaluate_many(full.states)
    s = k * lag
    vA, rA = takens_nudge(spec, z, OracleTheta(full.states[s:, :1]), NudgeConfig(10.0, 1),
                          spec.zeros(), k, lag, dt, truth=full)
    vB, rB = nudge(spec, full.slice(s), NudgeConfig(10.0, 1), spec.zeros())
    assert np.array_equal(vA.states, vB.states)
    assert np.array_equal(rA.state_gap, rB.state_gap)
    assert vA.t0 == vB.t0


def test_takens_nudge_rejects_short_history():
    spec = forced_sine()
    with pytest.raises(ModelError):
        takens_nudge(spec, [], OracleTheta(np.zeros((1, 1))), NudgeConfig(10.0, 1),
                     spec.zeros(), 4, 25, 0.01)
    with pytest.raises(ModelError):
        takens_nudge(spec, np.zeros(50), OracleTheta(np.zeros((1, 1))), NudgeConfig(10.0, 1),
                     spec.zeros(), 4, 25, 0.01)


def test_delay_windows_indexing():
    W = delay_windows(np.arange(10.0), 3, 2)
    assert W[0].tolist() == [0, 2, 4]
    assert W.shape == (4, 3)


# --- separation ------------------------------------------------------------


def test_full_coordinates_separate():
    spec = chafee_infante(8, mu=2.0)
    rng = np.random.default_rng(0)
    trajs = [integrate(spec, random_field(spec, rng), 1.0, 0.05) for _ in range(5)]
    F = [FunctionalSpec.fourier_mode(n) for n in range(1, 9)]
    rep = separation_scan(F, trajs)
    assert not rep.separation_failure
    assert rep.worst_ratio <= math.sqrt(8) + 1e-9


def test_separation_scan_needs_two():
    with pytest.raises(ModelError):
        separation_scan([], [Trajectory(np.zeros((2, 2)), 1.0)])


def test_blind_orbit_identity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        l = rng.uniform(-1, 1, 4)
        orb = blind_orbit(l, amplitude=1.0)
        t = np.linspace(0, 20, 2001)
        assert trig_residual(l, orb, t) < 1e-12
        X = oscillator_orbit(*orb, t)
        assert np.min(np.linalg.norm(X, axis=1)) >= 0.5


def test_oscillator_integration_matches_closed_form():
    orb = (0.8, 0.3, 0.2, 1.1)
    x0 = oscillator_orbit(*orb, [0.0])[0]
    tr = integrate_linear(oscillator_matrix(), x0, 6.0, 0.01)
    assert np.allclose(tr.states, oscillator_orbit(*orb, tr.times), atol=1e-12)


def test_quadratic_is_constant_along_orbits():
    F = quadratic_oscillator_functional()
    A, B, p1, p2 = 0.7, 1.3, 0.4, 2.0
    vals = F.evaluate_many(oscillator_orbit(A, B, p1, p2, np.linspace(0, 7, 50)))
    assert np.allclose(vals, A * A + 2 * B * B + A * B * math.cos(p1 - p2), atol=1e-12)


def test_decayfit_dict():
    d = DecayFit(1.0, 0.0, 1.0, 3, 0.0, 2.0).as_dict()
    assert d["rate"] == 1.0 and d["n_points"] == 3


def test_fields_are_value_objects():
    u = SpectralField([1.0, 2.0])
    with pytest.raises(ValueError):
        u.coeffs[0] = 3.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert (u + u).coeffs.tolist() == [2.0, 4.0]
