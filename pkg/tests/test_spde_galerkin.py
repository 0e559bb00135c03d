import math

import numpy as np
import pytest

from singsde import spde_galerkin as sg
from singsde.integrability import MomentEstimate
from singsde.model import DiffusionModel, DriftSpec
from singsde.report import (ConditionFailedError, DomainError,
                            PreconditionError, Verdict)
from singsde.simulate import SimConfig, simulate_ensemble

SPEC = sg.SpectrumSpec.power(2.0, 16, theta=0.6)


def test_spectrum_parse_and_certificates():
    s = sg.SpectrumSpec.parse("power:2,8", 0.6)
    assert np.allclose(s.eigenvalues(3), [1, 4, 9])
    e = sg.SpectrumSpec.parse("explicit:[1, 3, 7]")
    assert e.max_modes == 3
    with pytest.raises(DomainError):
        e.eigenvalues(4)
    with pytest.raises(PreconditionError):
        sg.SpectrumSpec.power(1.0, 8).require()
    with pytest.raises(PreconditionError):
        sg.SpectrumSpec.power(2.0, 8, theta=0.5).require(h3=True)


def test_projection_matches_gaussian_smoothing():
    td = sg.TruncatedDrift.sin_pair(seed=3, tail_samples=4096)
    xs = np.linspace(-2, 2, 9)[:, None]
    pr = sg.project_drift(td, SPEC, xs)
    exact = np.sin(xs[:, 0]) * math.exp(-0.5 / 4.0)
    assert not pr.exact
    assert np.all(np.abs(pr.value[:, 0] - exact) <= 3.5 * pr.std_error[:, 0] + 1e-12)


def test_projection_exact_when_drift_reads_kept_modes():
    td = sg.TruncatedDrift.tanh(4)
    x = np.array([0.3, -1.0, 0.5, 2.0, 0.1])
    pr = sg.project_drift(td, SPEC, x)
    assert pr.exact and np.allclose(pr.value[:4], np.tanh(x[:4]))


def test_projection_contracts():
    td = sg.TruncatedDrift.tanh_coupled(1.5, tail_samples=128)
    x = np.random.default_rng(0).normal(size=(50, 3)) * 3
    v = sg.project_drift(td, SPEC, x).value
    assert np.all(np.abs(v) <= 1.5 + 1e-12)


def test_single_mode_matches_exact_ou_scheme():
    cfg = SimConfig(dt=0.05, t_max=2.0, seed=13, scheme="exact_ou_splitting")
    spec = sg.SpectrumSpec.power(2.0, 1, theta=0.6)
    m = DiffusionModel.ou(1)
    a = sg.simulate_truncated(spec, sg.TruncatedDrift.zero(), cfg, "mu0", 50, n=1)
    b = simulate_ensemble(m, DriftSpec.zero(1), cfg, "mu0", 50)
    assert np.array_equal(a.final, b.final)
    # with a drift the schemes differ only in the O(dt) drift gain
    a = sg.simulate_truncated(spec, sg.TruncatedDrift.tanh(1), cfg, "mu0", 50, n=1)
    b = simulate_ensemble(m, DriftSpec.tanh(1), cfg, "mu0", 50)
    assert np.max(np.abs(a.final - b.final)) < 0.1


def test_levels_share_noise_on_common_modes():
    cfg = SimConfig(dt=0.05, t_max=3.0, seed=2, record_stride=5)
    td = sg.TruncatedDrift.tanh(4)
    e4 = sg.simulate_truncated(SPEC, td, cfg, "mu0", 30, n=4)
    e8 = sg.simulate_truncated(SPEC, td, cfg, "mu0", 30, n=8)
    # decoupled drift on the first four modes: identical paths
    assert np.array_equal(e4.records, e8.records[:, :, :4])


def test_zero_drift_keeps_mu0():
    cfg = SimConfig(dt=0.05, t_max=20.0, seed=1, record_stride=10)
    ens = sg.simulate_truncated(SPEC, sg.TruncatedDrift.zero(), cfg, "mu0", 1000, n=4)
    mom = sg.stationary_mode_moments(ens, 4, 2.0)
    assert mom.level == 4
    assert np.all(np.abs(mom.var - 1 / SPEC.eigenvalues(4)) <= 4 * mom.var_se)
    assert np.all(np.abs(mom.mean) <= 4 * mom.mean_se)


def test_consistency_study_coupled():
    cfg = SimConfig(dt=0.05, t_max=15.0, seed=4, record_stride=10)
    td = sg.TruncatedDrift.tanh_coupled(1.0, tail_samples=32)
    rep = sg.invariant_consistency_study(SPEC, td, (2, 4), cfg, 300, 3.0)
    assert [m.level for m in rep.details["moments"]] == [2, 4]
    assert rep.verdict is Verdict.PASS
    assert rep.details["k"] == 2


def test_adaptive_rejected():
    cfg = SimConfig(dt=0.05, t_max=1.0, adaptive=True)
    with pytest.raises(DomainError):
        sg.simulate_truncated(SPEC, sg.TruncatedDrift.zero(), cfg, "mu0", 2, n=2)


def test_girsanov_horizon_cases():
    assert sg.spde_girsanov_horizon(SPEC, drift_bound=2.0) == math.inf
    assert sg.spde_girsanov_horizon(SPEC, 0.7, drift_bound=2.0) == 1.4
    assert sg.spde_girsanov_horizon(SPEC, drift_bound=2.0, cap=5.0) == 5.0
    c = 0.3
    boundary = 1.0 / (2 * c * c)
    lam = 0.9 * boundary
    m = sg.gaussian_linear_mode1_moment(SPEC, c, lam)
    assert math.isclose(m, 0.1 ** -0.5)
    assert sg.spde_girsanov_horizon(SPEC, lam, moment=m) == 2 * lam
    assert math.isinf(sg.gaussian_linear_mode1_moment(SPEC, c, boundary))
    with pytest.raises(ConditionFailedError):
        sg.spde_girsanov_horizon(SPEC, boundary, moment=math.inf)
    with pytest.raises(ConditionFailedError):
        sg.spde_girsanov_horizon(SPEC, 1.0, moment=MomentEstimate(
            math.inf, None, 10, "mc", diverged=True))
    with pytest.raises(PreconditionError):
        sg.spde_girsanov_horizon(sg.SpectrumSpec.power(2.0, 8, 0.5), 1.0, moment=1.0)


def test_girsanov_truncated_mean_weight():
    cfg = SimConfig(dt=0.05, t_max=1.0, seed=6)
    ens = sg.simulate_truncated(SPEC, sg.TruncatedDrift.tanh(2), cfg, "mu0",
                                20_000, n=2, girsanov=True)
    w = ens.girsanov.weight
    assert abs(w.mean() - 1) < 4 * w.std() / math.sqrt(w.size)


def test_drift_moment_trend():
    tr = sg.drift_moment_trend(SPEC, sg.TruncatedDrift.tanh(4), 0.5, (4, 8),
                               n_samples=5000)
    assert tr.nonexplosive
    assert all(v <= math.exp(0.5 * 4) for v in tr.values)
    lin = sg.drift_moment_trend(SPEC, sg.TruncatedDrift.linear_mode1(0.3), 1.0,
                                (2, 4), n_samples=20_000)
    exact = sg.gaussian_linear_mode1_moment(SPEC, 0.3, 1.0)
    assert abs(lin.values[0] - exact) < 4 * lin.std_errors[0]
