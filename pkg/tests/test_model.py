import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singsde.model import (DiffusionModel, DriftSpec, LatticeSum, derive_z0,
                           drift_star002, metric_surrogate_U, psi_energy)
from singsde.report import DegenerateDiffusionError, DomainError


def _wavy(dim=1):
    # sigma = (1 + 0.5 sin x1) I, V = |x|^2 / 2, no analytic derivatives
    def sigma(x):
        s = 1.0 + 0.5 * np.sin(x[:, 0])
        return s[:, None, None] * np.eye(dim)[None]
    return DiffusionModel(dim=dim, sigma=sigma,
                          potential=lambda x: 0.5 * np.sum(x * x, axis=-1))


def test_ou_reference_drift():
    m = DiffusionModel.ou(3, lambda0=2.0)
    x = np.array([[1.0, -2.0, 0.5]])
    assert np.allclose(derive_z0(m, x), -2.0 * x)
    m2 = DiffusionModel.ou(2, lambda0=1.0, sigma_scale=3.0)
    assert np.allclose(m2.z0(np.array([[1.0, 1.0]])), -9.0)


def test_z0_finite_differences_match_closed_form():
    m = _wavy(1)
    x = np.linspace(-2, 2, 7)[:, None]
    s = 1 + 0.5 * np.sin(x[:, 0])
    # d/dx s^2 - s^2 x
    exact = 2 * s * 0.5 * np.cos(x[:, 0]) - s * s * x[:, 0]
    assert np.allclose(derive_z0(m, x)[:, 0], exact, atol=1e-6)


def test_degenerate_sigma_raises():
    m = DiffusionModel(dim=1, sigma=lambda x: np.zeros((len(x), 1, 1)),
                       potential=lambda x: 0.5 * np.sum(x * x, axis=-1))
    with pytest.raises(DegenerateDiffusionError):
        derive_z0(m, np.array([0.3]))


def test_drift_cap_and_tags():
    d = DriftSpec.tanh(2, scale=2.0)
    assert not d.superlinear
    assert DriftSpec.cubic(2).superlinear
    big = DriftSpec(z=lambda x: 1e9 * x, dim=1, eval_cap=10.0)
    assert np.allclose(big.evaluate(np.array([[1.0]])), 10.0)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_tanh_drift_is_bounded(a, b):
    d = DriftSpec.tanh(2, scale=1.5)
    v = d.evaluate(np.array([[a, b]]))
    assert np.all(np.abs(v) <= 1.5)


def test_lattice_fast_sum_matches_direct():
    x0 = np.array([1.0, 0.0])
    ls = LatticeSum(x0, 2000)
    pts = np.array([[0.3, 0.2], [5.5, -0.4], [100.2, 1.0], [-3.0, 2.0]])
    direct = [drift_star002(p, x0, 0.5, 2000, cap=1e12).truncated_sum
              for p in pts]
    assert np.allclose(ls.fast(pts), direct, atol=1e-5)


def test_star002_singular_at_lattice_points():
    v = drift_star002([2.0, 0.0], None, 0.5, 100)
    assert v.singular and math.isinf(v.tail_bound)
    with pytest.raises(DomainError):
        drift_star002([0.1, 0.0], None, 0.7)


def test_metric_surrogate_identity_is_euclidean():
    m = DiffusionModel.ou(2)
    x = np.array([[3.0, 4.0], [0.0, 1.0]])
    assert np.allclose(metric_surrogate_U(m, x), [5.0, 1.0], atol=1e-9)


def test_metric_surrogate_is_below_euclidean_over_sigma_min():
    # sigma_bar >= 0.5 everywhere, so U <= 2 |x|
    u = metric_surrogate_U(_wavy(1), np.array([[3.0]]))
    assert 3.0 / 1.5 - 1e-6 <= float(np.ravel(u)[0]) <= 6.0


def test_psi_energy_choices():
    m = DiffusionModel.ou(2)
    x = np.array([[3.0, 4.0]])
    assert np.allclose(psi_energy(m, x, "abs"), 1.0)
    r = 5.0
    assert np.allclose(psi_energy(m, x, "loglog"),
                       (1 / ((math.e + r) * math.log(math.e + r))) ** 2)
