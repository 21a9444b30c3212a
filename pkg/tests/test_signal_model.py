import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onebit_sysid.errors import DimensionMismatch, IndexOutOfRange, UnstablePolynomial, ValidationError
from onebit_sysid.signal_model import (
    Constant,
    GaussianNoise,
    NoNoise,
    PeriodicTable,
    SignalGenerator,
    Sinusoid,
    Trajectory,
    UniformNoise,
    Zero,
    companion_matrix,
    input_at,
    make_arx,
    propagate,
    regressor_at,
    regressors,
    run_streams,
    simulate,
    spectral_radius,
)


def loop_outputs(a, b, u, d):
    """Direct difference-equation recursion with zero initial conditions."""
    K = len(d)
    y = np.zeros(K + 1)  # y[0] is y_0 = 0
    for k in range(1, K + 1):
        acc = d[k - 1]
        for i, ai in enumerate(a, start=1):
            if k - i >= 1:
                acc -= ai * y[k - i]
        for j, bj in enumerate(b, start=1):
            if k - j >= 0:
                acc += bj * u[k - j]
        y[k] = acc
    return y[1:]


# -- system construction -----------------------------------------------------------


def test_stable_first_order_accepted():
    sys = make_arx(1, 1, [0.2], [1.0], 1.0)
    assert sys.dim == 2
    np.testing.assert_array_equal(sys.theta, [0.2, 1.0])


def test_root_outside_unit_circle_rejected():
    with pytest.raises(UnstablePolynomial):
        make_arx(1, 1, [-2.0], [1.0], 1.0)


def test_double_root_inside_accepted():
    # 1 + q^-1 + 0.25 q^-2 has a double root at -0.5
    sys = make_arx(2, 1, [1.0, 0.25], [1.0], 1.0)
    assert sys.spectral_radius() == pytest.approx(0.5, abs=1e-6)


def test_root_on_unit_circle_rejected():
    with pytest.raises(UnstablePolynomial):
        make_arx(1, 1, [-1.0], [1.0], 1.0)


def test_coefficient_count_must_match_order():
    with pytest.raises(DimensionMismatch):
        make_arx(2, 1, [0.2], [1.0], 1.0)
    with pytest.raises(DimensionMismatch):
        make_arx(1, 2, [0.2], [1.0], 1.0)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_noise_std_must_be_positive(bad):
    with pytest.raises(ValidationError):
        make_arx(1, 1, [0.2], [1.0], bad)


def test_fir_model_has_no_stability_constraint():
    sys = make_arx(0, 3, [], [1.0, 5.0, -7.0], 0.1)
    assert sys.spectral_radius() == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5))
def test_stability_matches_polynomial_roots(a):
    radius = max(abs(np.roots([1.0, *a])))
    assert spectral_radius(a) == pytest.approx(radius, rel=1e-6, abs=1e-9)
    if radius < 1 - 1e-6:
        make_arx(len(a), 1, a, [1.0], 1.0)
    elif radius > 1 + 1e-6:
        with pytest.raises(UnstablePolynomial):
            make_arx(len(a), 1, a, [1.0], 1.0)


def test_companion_matrix_layout():
    C = companion_matrix([0.5, -0.3, 0.1])
    np.testing.assert_array_equal(C[0], [-0.5, 0.3, -0.1])
    np.testing.assert_array_equal(C[1:], [[1, 0, 0], [0, 1, 0]])


# -- inputs -------------------------------------------------------------------------


def test_sinusoid_deterministic_part():
    gen = SignalGenerator(Sinusoid(3.0, np.pi / 4), GaussianNoise(4.0))
    assert input_at(gen, 2) == pytest.approx(3.0)


def test_zero_generator_is_zero(rng):
    gen = SignalGenerator(Zero(), NoNoise())
    assert input_at(gen, 17, rng) == 0.0
    assert not gen.sequence(50, rng).any()


def test_periodic_and_constant_parts():
    gen = SignalGenerator(PeriodicTable((1.0, -2.0, 4.0)))
    np.testing.assert_array_equal(gen.deterministic_part(7), [1, -2, 4, 1, -2, 4, 1])
    assert input_at(SignalGenerator(Constant(2.5)), 99) == 2.5


def test_negative_input_index_rejected():
    with pytest.raises(IndexOutOfRange):
        input_at(SignalGenerator(), -1)


def test_uniform_input_moments():
    rng = np.random.default_rng(7)
    draws = SignalGenerator(Zero(), UniformNoise(-10.0, 10.0)).sequence(1_000_000, rng)
    assert abs(draws.mean()) < 0.05
    assert draws.var() == pytest.approx(100.0 / 3.0, abs=0.5)
    assert draws.min() >= -10.0 and draws.max() <= 10.0


def test_uniform_noise_must_be_zero_mean():
    with pytest.raises(ValidationError):
        UniformNoise(0.0, 1.0)


def test_bulk_draws_match_sequential_draws():
    gen = SignalGenerator(Sinusoid(3.0, np.pi / 4), GaussianNoise(4.0))
    bulk = gen.sequence(40, np.random.default_rng(3))
    one_by_one = np.random.default_rng(3)
    seq = [input_at(gen, k, one_by_one) for k in range(40)]
    np.testing.assert_array_equal(bulk, seq)


def test_run_streams_are_independent_and_reproducible():
    a1, n1 = run_streams(11)
    a2, n2 = run_streams(11)
    x = a1.standard_normal(5)
    np.testing.assert_array_equal(x, a2.standard_normal(5))
    assert not np.array_equal(x, n1.standard_normal(5))


# -- simulation ---------------------------------------------------------------------


def test_hand_computed_first_order_response():
    sys = make_arx(1, 1, [0.2], [1.0], 1.0)
    traj = propagate(sys, [1.0, 0.0, 0.0], [0.0, 0.0])
    assert traj.y_at(1) == pytest.approx(1.0)
    assert traj.y_at(2) == pytest.approx(-0.2)


def test_zero_input_zero_noise_gives_zero_output():
    sys = make_arx(2, 3, [0.2, 0.1], [0.6, -0.2, -0.6], 0.5)
    traj = propagate(sys, np.zeros(101), np.zeros(100))
    assert not traj.y.any()


def test_propagate_checks_lengths():
    sys = make_arx(1, 1, [0.2], [1.0], 1.0)
    with pytest.raises(DimensionMismatch):
        propagate(sys, np.zeros(10), np.zeros(10))


@pytest.mark.parametrize(
    "m,n,a,b",
    [(1, 1, [0.2], [1.0]), (2, 3, [0.2, 0.1], [0.6, -0.2, -0.6]), (0, 2, [], [1.0, -0.5]), (3, 1, [-0.5, 0.3, 0.1], [2.0])],
)
def test_simulation_matches_direct_recursion(m, n, a, b):
    sys = make_arx(m, n, a, b, 0.7)
    gen = SignalGenerator(Sinusoid(1.5, 0.3), GaussianNoise(1.0))
    traj = simulate(sys, gen, 400, seed=5)
    expected = loop_outputs(a, b, traj.u, traj.d)
    np.testing.assert_allclose(traj.y, expected, rtol=1e-12, atol=1e-12)


def test_equation_residual_reconstructs_noise():
    sys = make_arx(2, 3, [0.2, 0.1], [0.6, -0.2, -0.6], 0.5)
    gen = SignalGenerator(Sinusoid(3.0, np.pi / 4), GaussianNoise(4.0))
    traj = simulate(sys, gen, 1000, seed=1)
    Phi = regressors(traj, sys)
    residual = traj.y - Phi @ sys.theta
    scale = np.max(np.abs(traj.y))
    assert np.max(np.abs(residual - traj.d)) <= 1e-12 * scale


def test_simulation_is_deterministic_in_seed():
    sys = make_arx(1, 1, [0.2], [1.0], 1.0)
    gen = SignalGenerator(Zero(), GaussianNoise(1.0))
    t1, t2 = simulate(sys, gen, 200, 9), simulate(sys, gen, 200, 9)
    np.testing.assert_array_equal(t1.y, t2.y)
    np.testing.assert_array_equal(t1.u, t2.u)
    assert not np.array_equal(t1.y, simulate(sys, gen, 200, 10).y)


def test_generator_seed_used_when_none_given():
    sys = make_arx(1, 1, [0.2], [1.0], 1.0)
    gen = SignalGenerator(Zero(), GaussianNoise(1.0), seed=4)
    np.testing.assert_array_equal(simulate(sys, gen, 50).y, simulate(sys, gen, 50, 4).y)
    with pytest.raises(ValidationError):
        simulate(sys, SignalGenerator(), 50)


def test_trajectory_arrays_are_read_only():
    sys = make_arx(1, 1, [0.2], [1.0], 1.0)
    traj = simulate(sys, SignalGenerator(Zero(), GaussianNoise(1.0)), 10, 0)
    with pytest.raises(ValueError):
        traj.y[0] = 1.0


def test_noise_free_output_stays_within_gain_bound():
    sys = make_arx(2, 3, [0.2, 0.1], [0.6, -0.2, -0.6], 0.5)
    rng = np.random.default_rng(0)
    u = rng.uniform(-1.0, 1.0, 10_001)
    traj = propagate(sys, u, np.zeros(10_000))
    # l1 norm of the impulse response bounds the output for |u| <= 1
    impulse = propagate(sys, np.r_[1.0, np.zeros(2000)], np.zeros(2000)).y
    assert np.max(np.abs(traj.y)) <= np.sum(np.abs(impulse)) + 1e-9


# -- regressors ---------------------------------------------------------------------


def make_traj(y, u):
    y, u = np.asarray(y, float), np.asarray(u, float)
    return Trajectory(y=y, u=u, d=np.zeros_like(y))


def test_regressor_first_step_uses_zero_history():
    sys = make_arx(2, 2, [0.1, 0.1], [1.0, 1.0], 1.0)
    traj = make_traj([5.0, 6.0, 7.0], [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(regressor_at(traj, sys, 1), [0.0, 0.0, 1.0, 0.0])


def test_regressor_interior_example():
    sys = make_arx(2, 3, [0.1, 0.1], [1.0, 1.0, 1.0], 1.0)
    traj = make_traj([1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 30.0, 40.0, 50.0])
    np.testing.assert_array_equal(regressor_at(traj, sys, 3), [-2.0, -1.0, 30.0, 20.0, 10.0])


@pytest.mark.parametrize("k", [0, 5, -1])
def test_regressor_index_out_of_range(k):
    sys = make_arx(1, 1, [0.1], [1.0], 1.0)
    with pytest.raises(IndexOutOfRange):
        regressor_at(make_traj([1.0, 2.0, 3.0, 4.0], [0.0] * 5), sys, k)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(1, 4), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_stacked_regressors_match_pointwise(m, n, K, seed):
    sys = make_arx(m, n, [0.1] * m if m == 1 else [0.0] * m, [1.0] * n, 1.0)
    rng = np.random.default_rng(seed)
    traj = make_traj(rng.standard_normal(K), rng.standard_normal(K + 1))
    Phi = regressors(traj, sys)
    for k in range(1, K + 1):
        np.testing.assert_array_equal(Phi[k - 1], regressor_at(traj, sys, k))
