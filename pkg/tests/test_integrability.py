import math

import numpy as np
import pytest

from singsde.gaussian_reference import GaussianReference
from singsde.integrability import (ConditionSpec, check_condition,
                                   check_H3_and_EG, exp_moment, hill_tail_index)
from singsde.model import DiffusionModel, DriftSpec
from singsde.report import DomainError, SingSDEError, Verdict


def test_gaussian_exp_moment_closed_form():
    ref = GaussianReference.isotropic(2)
    for lam in (0.1, 0.3):
        est = exp_moment(ref, lambda x: np.sum(x * x, -1), lam, g_quad=1.0,
                         n_samples=50_000, seed=1)
        exact = (1 - 2 * lam) ** -1.0
        assert abs(est.value - exact) <= 4 * est.std_error + 1e-10
    assert exp_moment(ref, lambda x: x[:, 0], 0.0).value == 1.0


def test_exp_moment_divergence_detected():
    ref = GaussianReference.isotropic(1)
    est = exp_moment(ref, lambda x: np.sum(x * x, -1), 0.6, g_quad=1.0,
                     n_samples=20_000)
    assert est.diverged


@pytest.mark.parametrize("r,lam,expected", [
    (0.5, 1.0, Verdict.HOLDS),      # lam r^2 = 0.25 < 1/2
    (0.9, 0.5, Verdict.HOLDS),
    (1.1, 0.55, Verdict.FAILS),
    (1.0, 0.75, Verdict.FAILS),
])
def test_xg3_moment_criterion(r, lam, expected):
    m = DiffusionModel.ou(2)
    rep = check_condition(m, DriftSpec.linear(2, r), ConditionSpec("XG3", lam),
                          n_samples=20_000, seed=3)
    assert rep.verdict is expected


def test_bounded_drift_passes_exponential_conditions():
    m = DiffusionModel.ou(2)
    rep = check_condition(m, DriftSpec.tanh(2, 1.0), ConditionSpec("PP2", 2.0),
                          ref=GaussianReference.isotropic(2), n_samples=20_000)
    assert rep.verdict is Verdict.HOLDS


def test_pp2_requires_reference():
    with pytest.raises(DomainError):
        check_condition(DiffusionModel.ou(1), DriftSpec.tanh(1),
                        ConditionSpec("PP2", 1.0))


def test_condition_spec_validation():
    with pytest.raises(DomainError):
        ConditionSpec("XG1", 1.5)
    with pytest.raises(DomainError):
        ConditionSpec("XG3", 0.0)
    with pytest.raises(SingSDEError):
        ConditionSpec("XYZ", 0.5)


@pytest.mark.parametrize("s,theta,eg,h3", [
    (2.0, 0.6, True, True), (2.0, 0.5, True, False), (1.0, 0.9, False, False),
    (3.0, 0.4, True, True)])
def test_h3_eg_pseries(s, theta, eg, h3):
    ref = GaussianReference.power(s, 5, theta)
    rep = check_H3_and_EG(ref)
    assert rep.details["EG"] is eg and rep.details["H3"] is h3
    if eg:
        # sum k^-2 = pi^2/6
        if s == 2.0:
            assert math.isclose(rep.details["sum_inv"], math.pi ** 2 / 6,
                                rel_tol=1e-6)


def test_hill_index_of_pareto():
    u = np.random.default_rng(2).random(200_000)
    x = u ** (-1 / 1.5)
    assert abs(hill_tail_index(x) - 1.5) < 0.15
