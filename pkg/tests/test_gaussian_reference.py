import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singsde.gaussian_reference import (GaussianReference, beta_x, gamma_factor,
                                        harnack_certificate,
                                        hypercontractive_bound, mehler_exp_linear,
                                        mehler_sample, mehler_transition,
                                        novikov_lambda, parse_spectrum,
                                        per_mode_harnack_exponent, psi)
from singsde.report import ConditionFailedError, DomainError, HorizonExceededError

REF = GaussianReference.power(2, 4, 0.6)
X = np.array([0.5, -0.3, 0.2, 0.1])

# 30-digit quadrature of the defining integrals (frozen)
GAMMA_07 = 1.16548172736590849252772297622
PSI_07 = 0.430493724650620073125062598801
BETA_07 = 0.435717454825679290859951917101
LAMBDA_07 = 1.23805972224229495955359350522   # gamma 1/4, lambda 2, moment 1.3


def test_parse_spectrum():
    r = parse_spectrum("power:2,5")
    assert np.allclose(r.spectrum, [1, 4, 9, 16, 25]) and r.tail_exponent == 2
    e = parse_spectrum("explicit:[1, 2.5, 3]")
    assert np.allclose(e.spectrum, [1, 2.5, 3]) and e.kappa == 2.0
    with pytest.raises(DomainError):
        parse_spectrum("cubic:3")
    with pytest.raises(DomainError):
        GaussianReference(np.array([2.0, 1.0]))


def test_mehler_moments_by_sampling():
    ref = GaussianReference.power(1, 2)
    g = np.random.default_rng(0).standard_normal((200_000, 2))
    y = mehler_sample(ref, np.array([1.0, -1.0]), 0.4, g)
    mean, var = mehler_transition(ref, [1.0, -1.0], 0.4)
    assert np.allclose(mean, np.exp(-np.array([1, 2]) * 0.4) * [1, -1])
    assert np.allclose(y.mean(0), mean, atol=0.01)
    assert np.allclose(y.var(0), var, rtol=0.01)


def test_mehler_exp_linear_closed_form():
    ref = GaussianReference.isotropic(1)
    s, x, t = 0.7, 0.4, 0.5
    m = math.exp(-t) * x
    v = 1 - math.exp(-2 * t)
    assert math.isclose(float(mehler_exp_linear(ref, [s], [x], t)),
                        math.exp(s * m + s * s * v / 2), rel_tol=1e-14)


def test_gamma_psi_beta_lambda_oracles():
    assert math.isclose(gamma_factor(REF, X, 0.7), GAMMA_07, rel_tol=1e-12)
    assert math.isclose(psi(REF, X, 0.7).value, PSI_07, rel_tol=1e-8)
    assert math.isclose(beta_x(REF, X, 0.7), BETA_07, rel_tol=1e-8)
    assert math.isclose(novikov_lambda(REF, X, 0.7, 0.25, 2.0, 1.3), LAMBDA_07,
                        rel_tol=1e-8)


@given(st.floats(0.01, 3.0), st.floats(-3, 3))
def test_gamma_above_one_and_beta_at_most_t(t, x1):
    x = np.array([x1, 0.2, 0.0, -0.1])
    assert gamma_factor(REF, x, t) > 1.0
    b = beta_x(REF, x, t)
    assert 0 < b <= t


@given(st.floats(0.05, 3.0), st.floats(-3, 3))
def test_psi_below_analytic_bound(t, x1):
    v = psi(REF, np.array([x1, 0.5, 0.0, 0.0]), t)
    assert v.value <= v.bound


def test_novikov_window_and_moment():
    with pytest.raises(HorizonExceededError):
        novikov_lambda(REF, X, 4.1, 0.25, 1.0, 1.3)
    with pytest.raises(ConditionFailedError):
        novikov_lambda(REF, X, 0.5, 0.25, 1.0, math.inf)
    cert = harnack_certificate(REF, X, 0.7, 0.5)
    assert cert.novikov_horizon == 1.0


@given(st.floats(0.01, 5), st.floats(1.05, 6),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_per_mode_exponent_below_dimension_free_one(t, p, diff):
    x = np.zeros(4)
    y = np.asarray(diff)
    c = per_mode_harnack_exponent(REF, x, y, t, p)
    # lambda / (e^{2 lambda t} - 1) <= 1 / (2t)
    assert c <= p / (2 * (p - 1)) * float(np.sum(y * y)) / (2 * t) * (1 + 1e-12)


def test_hypercontractive_bound_formula():
    qt, fac = hypercontractive_bound(2.0, 0.0, 0.5, 2.0)
    assert math.isclose(qt, 1 + math.exp(1.0)) and fac == 1.0
    with pytest.raises(DomainError):
        hypercontractive_bound(2.0, 0.0, 0.5, 1.0)
