import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singsde import simulate as sim
from singsde.model import DiffusionModel, DriftSpec
from singsde.report import DomainError


def test_ou_step_coefficients_limit():
    a, b = sim.ou_step_coefficients(np.array([1e-14, 1.0]), 0.1)[:2]
    assert np.allclose(a, [1.0, math.exp(-0.1)])


@pytest.mark.parametrize("scheme", ["euler_maruyama", "exact_ou_splitting"])
def test_ou_transition_moments(scheme):
    m = DiffusionModel.ou(1, lambda0=1.0)
    cfg = sim.SimConfig(dt=0.01, t_max=1.0, scheme=scheme, seed=5)
    ens = sim.simulate_ensemble(m, DriftSpec.zero(1), cfg, [1.0], 20_000)
    x = ens.final[:, 0]
    mean, var = math.exp(-1.0), 1 - math.exp(-2.0)
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / x.size) + 0.01
    assert abs(x.var() - var) < 0.03


def test_exact_scheme_is_step_invariant_in_law():
    # exact OU transition: one big step has the right variance
    m = DiffusionModel.ou(1, lambda0=2.0)
    cfg = sim.SimConfig(dt=1.0, t_max=1.0, scheme="exact_ou_splitting")
    x = sim.simulate_ensemble(m, DriftSpec.zero(1), cfg, [0.0], 20_000).final
    assert abs(x.var() - (1 - math.exp(-4.0)) / 2.0) < 0.02


def test_threads_do_not_change_results():
    m = DiffusionModel.ou(2)
    d = DriftSpec.tanh(2, 1.0)
    base = sim.SimConfig(dt=0.02, t_max=1.0, seed=9, record_stride=10)
    a = sim.simulate_ensemble(m, d, base, [0.5, 0.5], 300, girsanov=True)
    b = sim.simulate_ensemble(m, d, sim.with_config(base, threads=4), [0.5, 0.5],
                              300, girsanov=True)
    assert np.array_equal(a.final, b.final)
    assert np.array_equal(a.records, b.records)
    assert np.array_equal(a.girsanov.log_weight, b.girsanov.log_weight)


def test_path_offset_reproduces_subsets():
    m = DiffusionModel.ou(1)
    cfg = sim.SimConfig(dt=0.05, t_max=0.5, seed=4)
    full = sim.simulate_ensemble(m, DriftSpec.zero(1), cfg, [0.0], 10)
    tail = sim.simulate_ensemble(m, DriftSpec.zero(1), cfg, [0.0], 4, path_offset=6)
    assert np.array_equal(full.final[6:], tail.final)


@given(st.floats(0.5, 3.0), st.integers(0, 1000))
def test_exit_times_monotone_in_radius(x0, seed):
    m = DiffusionModel.ou(1, lambda0=1e-9)
    cfg = sim.SimConfig(dt=1e-3, t_max=0.6, explosion_radii=(5.0, 50.0, 500.0),
                        scheme="euler_maruyama", seed=seed)
    ens = sim.simulate_ensemble(m, DriftSpec.cubic(1), cfg, [x0], 20)
    et = ens.exit_times
    assert np.all(et[:, 1:] >= et[:, :-1])
    prof = sim.explosion_probability(ens, 0.6).ladder_profile
    assert all(b <= a for a, b in zip(prof, prof[1:]))


def test_cubic_blowup_time_without_noise():
    # x' = x^3 from 2 blows up at 1/8
    m = DiffusionModel.ou(1, lambda0=1e-9)
    cfg = sim.SimConfig(dt=1e-5, t_max=0.2, explosion_radii=(10.0, 1e3),
                        scheme="euler_maruyama", noise=False)
    ens = sim.simulate_ensemble(m, DriftSpec.cubic(1), cfg, [2.0], 2)
    assert ens.exploded.all()
    assert abs(ens.exit_times[0, -1] - 0.125) < 2e-3


def test_ou_does_not_explode():
    m = DiffusionModel.ou(2)
    cfg = sim.SimConfig(dt=0.05, t_max=10.0)
    ens = sim.simulate_ensemble(m, DriftSpec.zero(2), cfg, [0.0, 0.0], 500)
    est = sim.explosion_probability(ens, 10.0)
    assert est.estimate == 0.0 and est.numerically_non_explosive


def test_occupation_measure_and_stationary_variance():
    m = DiffusionModel.ou(1)
    cfg = sim.SimConfig(dt=0.05, t_max=20.0, record_stride=10,
                        scheme="exact_ou_splitting", seed=2)
    ens = sim.simulate_ensemble(m, DriftSpec.linear(1, 0.5), cfg, "mu0", 1000)
    occ = sim.occupation_measure(ens, burn_in=5.0)
    assert occ.size == 1000 * 31
    var, se = sim.stationary_variance(ens, 5.0)
    assert abs(var - 2.0) < 4 * se + 0.02
    with pytest.raises(DomainError):
        sim.occupation_measure(ens, burn_in=25.0)


def test_config_validation():
    with pytest.raises(DomainError):
        sim.SimConfig(dt=0.0)
    with pytest.raises(DomainError):
        sim.SimConfig(explosion_radii=(10.0, 5.0))
    with pytest.raises(DomainError):
        sim.SimConfig(scheme="rk4")
