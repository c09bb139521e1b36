import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statichedge.errors import InvalidSpecError, UtilityDomainError, UtilityRangeError
from statichedge.utility import UtilitySpec, evaluate, inverse_marginal, marginal

SPECS = [
    UtilitySpec("exponential", 0.7),
    UtilitySpec("power", 0.5),
    UtilitySpec("power", 3.0),
    UtilitySpec("logarithmic"),
    UtilitySpec("quadratic", 2.0),
]


def admissible(u, rng, n):
    return rng.uniform(0.05, 5.0, n) if u.kind in ("power", "logarithmic") else rng.uniform(-3.0, 3.0, n)


def test_known_values():
    assert evaluate(UtilitySpec("exponential", 1.0), 0.0) == -1.0
    assert evaluate(UtilitySpec("quadratic", 0.0), 2.0) == -2.0
    assert evaluate(UtilitySpec("power", 0.5), 4.0) == pytest.approx(4.0)
    assert marginal(UtilitySpec("exponential", 2.0), 0.0) == 1.0
    assert marginal(UtilitySpec("quadratic", 3.0), 1.0) == 2.0
    assert inverse_marginal(UtilitySpec("exponential", 1.0), 1.0) == 0.0
    assert inverse_marginal(UtilitySpec("quadratic", 0.0), -3.0) == 3.0
    assert inverse_marginal(UtilitySpec("power", 2.0), 0.25) == pytest.approx(2.0)


def test_spec_validation():
    with pytest.raises(InvalidSpecError):
        UtilitySpec("cubic")
    with pytest.raises(InvalidSpecError):
        UtilitySpec("exponential", 0.0)
    with pytest.raises(InvalidSpecError):
        UtilitySpec("power", 1.0)
    with pytest.raises(InvalidSpecError):
        UtilitySpec("quadratic", -1.0)
    assert UtilitySpec("logarithmic", 7.0).gamma == 1.0


def test_domain_and_range_errors():
    with pytest.raises(UtilityDomainError, match="power"):
        evaluate(UtilitySpec("power", 2.0), -1.0)
    with pytest.raises(UtilityDomainError, match="logarithmic"):
        marginal(UtilitySpec("logarithmic"), 0.0)
    with pytest.raises(UtilityRangeError):
        inverse_marginal(UtilitySpec("exponential", 1.0), 0.0)


@pytest.mark.parametrize("u", SPECS, ids=lambda u: f"{u.kind}-{u.gamma}")
def test_marginal_matches_finite_difference(u, rng):
    x = admissible(u, rng, 100)
    eps = 1e-6
    fd = (u.value(x + eps) - u.value(x - eps)) / (2 * eps)
    assert np.max(np.abs(fd - u.marginal(x))) <= 1e-6 * np.maximum(1, np.abs(u.marginal(x))).max()


@pytest.mark.parametrize("u", SPECS, ids=lambda u: f"{u.kind}-{u.gamma}")
def test_strict_concavity(u, rng):
    a = admissible(u, rng, 100)
    b = a + rng.uniform(0.1, 2.0, 100)
    mid = u.value(0.5 * (a + b))
    chord = 0.5 * (u.value(a) + u.value(b))
    assert np.all(mid > chord)


@pytest.mark.parametrize("u", SPECS, ids=lambda u: f"{u.kind}-{u.gamma}")
def test_marginal_decreasing_and_invertible(u, rng):
    x = np.sort(admissible(u, rng, 100))
    assert np.all(np.diff(u.marginal(x)) < 0)
    np.testing.assert_allclose(u.inverse_marginal(u.marginal(x)), x, rtol=1e-10, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(SPECS), st.floats(0.01, 50.0))
def test_marginal_of_inverse(u, m):
    if u.kind == "quadratic":
        m = m - 25.0
    assert marginal(u, inverse_marginal(u, m)) == pytest.approx(m, rel=1e-10, abs=1e-10)
