import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1heat import conditions
from l1heat.conditions import (KINDS, TailIntegral, accumulate_bands, band_integral, check_condition,
                               check_growth_criterion, classify, fujita_exponent, substituted_partial,
                               time_integral, upper_tail)
from l1heat.nonlinearity import compute_envelopes, linear, logcorrected, minpower, parse, power, zero
from oracles import power_condition_integral


def env_of(nl):
    return compute_envelopes(nl)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("offset, expected", [(-0.5, "convergent"), (-0.1, "convergent"),
                                              (0.0, "divergent"), (0.5, "divergent")])
def test_power_law_I1_verdict_table(n, offset, expected):
    p = fujita_exponent(n) + offset
    assert check_condition("I1", env_of(power(p)), n).verdict == expected


def test_power_examples_in_two_dimensions():
    assert check_condition("I1", env_of(power(1.5)), 2).verdict == "convergent"
    assert check_condition("I1", env_of(power(2.0)), 2).verdict == "divergent"


def test_zero_nonlinearity_all_convergent():
    env = env_of(zero())
    for kind in KINDS:
        v = check_condition(kind, env, 1)
        assert v.verdict == "convergent" and v.value == 0.0


@pytest.mark.parametrize("p, n", [(1.5, 1), (1.2, 2), (1.3, 3), (2.9, 1)])
def test_power_law_integral_value(p, n):
    v = check_condition("I1", env_of(power(p)), n)
    total = v.value + v.tail_estimate
    assert total == pytest.approx(power_condition_integral(p, n), rel=1e-5)
    assert total == pytest.approx(1.0 / (fujita_exponent(n) - p), rel=1e-5)


@pytest.mark.parametrize("nl", [power(1.5), minpower(2, 4), logcorrected(1.5, 1.5), parse("u*u*u + u"), zero()],
                         ids=lambda nl: nl.name)
@pytest.mark.parametrize("kind", KINDS)
def test_partial_values_non_decreasing(nl, kind):
    v = check_condition(kind, conditions.classification_envelopes(nl), 1)
    vals = [x for _, x in v.partial_values]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    if v.verdict == "convergent" and len(vals) >= 4 and vals[-1] > 0:
        inc = np.diff([0.0] + vals)[-4:]
        assert np.all(inc[1:] < inc[:-1])  # shrinking increments are the recorded evidence
    json.dumps(v.to_dict())


@pytest.mark.parametrize("nl", [power(1.5), power(3.5), minpower(2, 4), parse("odd_extend(pow(u,2)+pow(u,3))"),
                                logcorrected(1.5, 1.5)], ids=lambda nl: nl.name)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_I2_never_without_I1(nl, n):
    env = conditions.classification_envelopes(nl)
    for strong, weak in (("I2", "I1"), ("I2_plus", "I1_plus")):
        if check_condition(strong, env, n).convergent:
            assert check_condition(weak, env, n).verdict != "divergent"


@pytest.mark.parametrize("nl", [power(1.5), minpower(2, 4), parse("u*u*u + u")], ids=lambda nl: nl.name)
@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("cutoff", [2.0, 16.0, 1024.0])
def test_substitution_equivalence(nl, n, cutoff):
    env = conditions.classification_envelopes(nl)
    integrand = conditions.condition_integrand(env.ell, n)
    edges = 2.0 ** np.arange(0, int(np.log2(cutoff)) + 1)
    banded = sum(band_integral(integrand, a, b) for a, b in zip(edges[:-1], edges[1:]))
    assert banded == pytest.approx(substituted_partial(env.ell, cutoff, n), rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.sampled_from([1.2, 1.5, 2.5, 3.5]), st.sampled_from([1, 2, 3]))
def test_scaling_covariance(c, p, n):
    base = env_of(power(p))
    scaled = env_of(power(p).scaled(c))
    for kind in ("I1", "I2", "I3"):
        a, b = check_condition(kind, base, n), check_condition(kind, scaled, n)
        assert a.verdict == b.verdict
        for (ca, va), (cb, vb) in zip(a.partial_values, b.partial_values):
            assert ca == cb
            assert vb == pytest.approx(c * va, rel=1e-12, abs=1e-300)


def test_growth_criterion_power_law():
    assert check_growth_criterion(power(2.5), 1).verdict == "convergent"
    assert check_growth_criterion(power(3.5), 1).verdict == "divergent"
    assert check_growth_criterion(power(3.0), 1).verdict == "divergent"


def test_geometric_series_decided_early():
    series = accumulate_bands(lambda s: s ** -2.0, 1.0, +1)
    assert series.verdict == "convergent" and "geometric" in series.rule
    assert len(series.increments) < conditions.MAX_BANDS
    assert series.total + series.tail_estimate == pytest.approx(1.0, rel=1e-6)


def test_critical_integrand_is_divergent():
    series = accumulate_bands(lambda s: 1.0 / s, 1.0, +1)
    assert series.verdict == "divergent"
    assert np.allclose(series.increments, np.log(2.0), rtol=1e-12)


@pytest.mark.parametrize("beta, verdict", [(1.5, "convergent"), (2.0, "convergent"), (0.5, "divergent")])
def test_logarithmic_decay_rule(beta, verdict):
    # s^{-1} ln(s)^{-beta} gives band increments ~ k^{-beta}
    series = accumulate_bands(lambda s: 1.0 / (s * np.log(s) ** beta), 2.0, +1)
    assert series.verdict == verdict


def test_inconclusive_when_too_few_bands():
    series = accumulate_bands(lambda s: s ** -0.5, 1.0, +1, max_bands=3)
    assert series.verdict == "inconclusive"


def test_numeric_range_cap_limits_bands():
    env = compute_envelopes(parse("u*u"), s_max=64.0)
    v = check_condition("I1", env, 3)
    assert v.partial_values[-1][0] <= 64.0


def test_tail_integral_matches_direct():
    env = env_of(power(1.5))
    tail = TailIntegral(env.ell, 1)
    for x in (0.3, 1.0, 5.0, 1e4, 4.0):
        assert tail(x) == pytest.approx(upper_tail(env.ell, x, 1), rel=1e-10)
        assert tail(x) == pytest.approx(x ** -1.5 / 1.5 * 1.0, rel=1e-8)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_time_integral_of_constant_envelope(n):
    env = env_of(linear(3.0))
    # the constant ell gives int_0^t 3 ds
    assert time_integral(env.ell, 0.7, n) == pytest.approx(2.1, rel=1e-10)


# -- classification -----------------------------------------------------------------------

def test_classify_power_below_fujita():
    c = classify(power(1.5), 1)
    assert c.classification == "well_posed_L1"
    assert c.satisfies_I1 and c.satisfies_I2 and not c.satisfies_I3
    assert not c.global_for_small_data
    assert c.odd and c.convex_on_positives


def test_classify_minpower():
    c = classify(parse("odd_extend(min(pow(u,2),pow(u,4)))"), 1)
    assert c.classification == "well_posed_L1" and c.global_for_small_data
    assert c.odd and not c.convex_on_positives


def test_classify_logcorrected():
    c = classify(logcorrected(1.5, 1.5), 1)
    assert c.classification == "well_posed_L1_plus_only" and c.global_for_small_data
    assert c.verdicts["I2_plus"].convergent and c.verdicts["I3_plus"].convergent


@pytest.mark.parametrize("n", [1, 2, 3])
def test_classify_convex_supercritical(n):
    c = classify(power(fujita_exponent(n) + 0.5), n)
    assert c.classification == "not_well_posed_L1_plus"
    assert c.growth_criterion.verdict == "divergent"


@pytest.mark.parametrize("nl", [power(1.3), power(2.5), power(3.5), parse("u*u*u + u"), linear(1.0)],
                         ids=lambda nl: nl.name)
@pytest.mark.parametrize("n", [1, 2])
def test_odd_convex_consistency(nl, n):
    c = classify(nl, n)
    if c.odd and c.convex_on_positives:
        assert c.satisfies_I1 == c.satisfies_I2
    assert c.classification != "indeterminate" or c.diagnostics


def test_classification_report_serialises():
    doc = classify(minpower(2, 4), 1).to_dict()
    text = json.dumps(doc)
    assert '"classification": "well_posed_L1"' in text
    assert set(doc["verdicts"]) == set(KINDS)
    assert doc["citations"]
