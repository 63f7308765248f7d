import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1heat.field import GridField, GridSpec, SpecMismatch, norm
from l1heat.semigroup import HeatPropagator, gaussian_field, heat_kernel
from oracles import gaussian_density


def _smooth(spec, rng, count=3, width=(0.6, 1.5), signed=True):
    vals = np.zeros(spec.shape)
    for _ in range(count):
        c = rng.uniform(-spec.half_width / 4, spec.half_width / 4, spec.dim)
        w = rng.uniform(*width)
        a = rng.uniform(-1, 1) if signed else rng.uniform(0.1, 1)
        vals += a * np.exp(-spec.radius_squared(c) / (2 * w * w))
    return GridField(spec, vals)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_kernel_at_origin(n):
    assert heat_kernel(np.zeros(n), 0.3) == pytest.approx((4 * np.pi * 0.3) ** (-n / 2), rel=1e-15)


def test_kernel_value_oracle():
    assert heat_kernel(1.0, 0.25) == pytest.approx(np.exp(-1) / np.sqrt(np.pi), rel=1e-14)
    assert heat_kernel(1.0, 0.25) == pytest.approx(0.20755, abs=5e-6)


def test_kernel_normalised():
    from scipy.integrate import quad

    val, _ = quad(lambda x: heat_kernel(x, 0.7, dim=1), -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_kernel_rejects_nonpositive_time(t):
    with pytest.raises(ValueError):
        heat_kernel(0.0, t)


def test_multiplier_range(line_prop):
    m = line_prop.multiplier(0.3)
    assert np.all(m > 0) and np.all(m <= 1)
    assert np.count_nonzero(m == 1.0) == 1
    assert np.all(line_prop.multiplier(0.0) == 1.0)


def test_apply_identity_at_zero(line_spec, line_prop, rng):
    f = _smooth(line_spec, rng)
    assert line_prop.apply(f, 0.0) is f


def test_apply_constant_field(line_spec, line_prop):
    f = GridField(line_spec, np.full(line_spec.shape, 2.5))
    assert np.allclose(line_prop.apply(f, 3.0).values, 2.5, rtol=1e-14)


@pytest.mark.parametrize("dim, n, half_width", [(1, 512, 20.0), (2, 128, 20.0)])
def test_gaussian_propagates_to_gaussian(dim, n, half_width):
    spec = GridSpec(dim, half_width, n)
    prop = HeatPropagator(spec)
    got = prop.apply(gaussian_field(spec, 0.5), 1.0)
    want = gaussian_field(spec, 1.5)
    assert norm(got - want, 1) / norm(want, 1) <= 1e-8


def test_gaussian_oracle_independent(line_spec, line_prop):
    x = line_spec.axis()
    got = line_prop.apply(GridField(line_spec, gaussian_density(x, 0.5)), 1.0)
    assert np.max(np.abs(got.values - gaussian_density(x, 1.5))) < 1e-12


def test_apply_rejects_mismatched_grid(line_prop):
    with pytest.raises(SpecMismatch):
        line_prop.apply(GridField.zeros(GridSpec(1, 10.0, 512)), 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
def test_semigroup_law_and_mass(seed, s, t):
    spec = GridSpec(1, 20.0, 256)
    prop = HeatPropagator(spec)
    f = _smooth(spec, np.random.default_rng(seed))
    two_step = prop.apply(prop.apply(f, s), t)
    one_step = prop.apply(f, s + t)
    assert norm(two_step - one_step, 1) <= 1e-10 * norm(one_step, 1)
    assert abs(one_step.integral() - f.integral()) <= 1e-12 * norm(f, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 5.0))
def test_positivity_and_monotonicity_for_resolved_data(seed, t):
    spec = GridSpec(1, 20.0, 256)
    prop = HeatPropagator(spec)
    rng = np.random.default_rng(seed)
    f = _smooth(spec, rng, signed=False)
    g = f + _smooth(spec, rng, signed=False)
    sf, sg = prop.apply(f, t), prop.apply(g, t)
    assert sf.values.min() >= -1e-12 * norm(f, np.inf)
    assert np.all(sf.values <= sg.values + 1e-12 * norm(g - f, np.inf))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 5.0))
def test_maximum_principle(seed, t):
    spec = GridSpec(1, 20.0, 256)
    prop = HeatPropagator(spec)
    f = _smooth(spec, np.random.default_rng(seed))
    out = prop.apply(f, t).values
    tol = 1e-12 * norm(f, np.inf)
    assert out.max() <= f.values.max() + tol and out.min() >= f.values.min() - tol


@pytest.mark.parametrize("q, r", [(1, 1), (2, 2), (1, 2), (1, np.inf), (2, np.inf)])
def test_smoothing_ratio_bounded(line_spec, line_prop, rng, q, r):
    f = _smooth(line_spec, rng)
    for t in (1e-3, 1e-2, 0.1, 1.0, line_prop.validity_window()):
        assert line_prop.smoothing_ratio(f, q, r, t) <= 1 + 1e-6


@pytest.mark.parametrize("n", [1, 2])
def test_smoothing_ratio_gaussian_closed_form(n):
    spec = GridSpec(n, 20.0, 512 if n == 1 else 128)
    prop = HeatPropagator(spec)
    s = 0.5
    f = gaussian_field(spec, s)
    for t in (0.1, 0.5, 1.0):
        # ||S(t) G_s||_inf = (4 pi (s + t))^{-n/2} and ||G_s||_1 = 1
        want = (t / (4 * np.pi * (s + t))) ** (n / 2)
        assert prop.smoothing_ratio(f, 1, np.inf, t) == pytest.approx(want, rel=1e-8)


def test_smoothing_ratio_rejects_bad_arguments(line_spec, line_prop):
    with pytest.raises(ValueError):
        line_prop.smoothing_ratio(GridField.zeros(line_spec), 1, 2, 1.0)
    f = gaussian_field(line_spec, 1.0)
    with pytest.raises(ValueError):
        line_prop.smoothing_ratio(f, 2, 1, 1.0)
    with pytest.raises(ValueError):
        line_prop.smoothing_ratio(f, 1, 2, 0.0)


def test_decay_profile_bounded_bump(line_spec, line_prop):
    x = line_spec.axis()
    bump = GridField(line_spec, np.where(np.abs(x) < 1, np.exp(1 - 1 / np.maximum(1 - x ** 2, 1e-300)), 0.0))
    times = np.geomspace(1e-6, 1e-1, 11)
    prof = [v for _, v in line_prop.smoothing_decay_profile(bump, 1, np.inf, times)]
    assert np.all(np.diff(prof) > 0)
    assert prof[0] <= times[0] ** 0.5 * norm(bump, np.inf) * (1 + 1e-9)


def test_decay_profile_spike(line_spec, line_prop):
    vals = np.zeros(line_spec.shape)
    vals[256] = 1.0 / line_spec.spacing
    spike = GridField(line_spec, vals)
    prof = line_prop.smoothing_decay_profile(spike, 1, np.inf, np.geomspace(1e-4, 1, 9))
    assert all(v <= norm(spike, 1) + 1e-9 for _, v in prof)


def test_decay_profile_zero_field_and_errors(line_spec, line_prop):
    prof = line_prop.smoothing_decay_profile(GridField.zeros(line_spec), 1, np.inf, [0.1, 1.0])
    assert [v for _, v in prof] == [0.0, 0.0]
    with pytest.raises(ValueError):
        line_prop.smoothing_decay_profile(GridField.zeros(line_spec), 1, np.inf, [])


def test_validity_window(line_prop):
    assert line_prop.validity_window() == 25.0
