import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from singsde import girsanov as gs
from singsde.gaussian_reference import GaussianReference
from singsde.model import DiffusionModel, DriftSpec
from singsde.report import Verdict
from singsde.simulate import SimConfig, simulate_ensemble, with_config

OU1 = DiffusionModel.ou(1)


def _ens(drift, n, t=1.0, x=0.5, seed=1, scheme=None):
    cfg = SimConfig(dt=0.01, t_max=t, seed=seed, scheme=scheme)
    return simulate_ensemble(OU1, drift, cfg, [x], n, girsanov=True)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.floats(-1, 1), min_size=2, max_size=2),
       st.floats(1e-4, 0.5))
def test_accumulator_increment(z, dw, dt):
    acc = gs.GirsanovAccumulator.zeros(1)
    gs.accumulate_logweight(acc, np.array([z]), np.eye(2), np.array([dw]), dt)
    z, dw = np.array(z), np.array(dw)
    assert math.isclose(acc.stoch_int[0], z @ dw / math.sqrt(2), abs_tol=1e-12)
    assert math.isclose(acc.quad_var[0], 0.25 * z @ z * dt, abs_tol=1e-12)
    assert acc.quad_var[0] >= 0
    assert math.isclose(acc.log_weight[0], acc.stoch_int[0] - acc.quad_var[0])


def test_accumulator_scales_with_sigma_inverse():
    a = gs.GirsanovAccumulator.zeros(1)
    b = gs.GirsanovAccumulator.zeros(1)
    z, dw = np.array([[1.0, 2.0]]), np.array([[0.3, -0.1]])
    gs.accumulate_logweight(a, z, 0.5 * np.eye(2), dw, 0.1)
    gs.accumulate_logweight(b, 0.5 * z, np.eye(2), dw, 0.1)
    assert np.allclose(a.log_weight, b.log_weight)


def test_effective_sample_size():
    assert gs.effective_sample_size(np.ones(10)) == 10.0
    assert gs.effective_sample_size(np.array([1.0, 0.0, 0.0])) == 1.0
    assert gs.effective_sample_size(np.zeros(3)) == 0.0


def test_mean_weight_is_one():
    for drift in (DriftSpec.linear(1, 0.3), DriftSpec.tanh(1, 1.0)):
        m, se = gs.martingale_check(_ens(drift, 20_000))
        assert abs(m - 1) < 4 * se


def test_weighted_transition_matches_perturbed_ou():
    t, x = 1.0, 0.5
    ens = _ens(DriftSpec.linear(1, 0.5), 40_000, t, x, seed=3,
               scheme="exact_ou_splitting")
    wm = gs.weighted_moments(ens)
    assert abs(wm.mean[0] - math.exp(-0.5 * t) * x) < 4 * wm.mean_se[0]
    assert abs(wm.var[0] - (1 - math.exp(-t)) / 0.5) < 4 * wm.var_se[0]
    est = gs.weighted_semigroup(ens, lambda y: y[:, 0])
    assert math.isclose(est.estimate, wm.mean[0], rel_tol=1e-12)
    assert est.ess > gs.MIN_ESS


def test_horizon_warning():
    ens = _ens(DriftSpec.tanh(1), 200)
    assert any("horizon" in w for w in
               gs.weighted_semigroup(ens, lambda y: y[:, 0], horizon=0.5).warnings)


def test_novikov_pass_and_window():
    ref = GaussianReference.isotropic(1)
    lam, gamma = 1.0, 0.25
    moment = math.exp(lam)       # |tanh|^2 <= 1
    ens = _ens(DriftSpec.tanh(1), 4000, t=1.0)
    rep = gs.novikov_empirical(ens, gamma, ref, [0.5], lam, moment)
    assert rep.verdict is Verdict.PASS
    assert not rep.details["certified_violation"]
    far = _ens(DriftSpec.tanh(1), 100, t=2.5)
    rep = gs.novikov_empirical(far, gamma, ref, [0.5], lam, moment)
    assert rep.verdict is Verdict.INCONCLUSIVE and rep.details["outside_window"]


def test_windowed_semigroup_agrees_with_plain():
    d = DriftSpec.tanh(1, 1.0)
    cfg = SimConfig(dt=0.02, t_max=2.0, seed=8)
    w = gs.windowed_semigroup(OU1, d, cfg, [0.5], 4000, lambda y: y[:, 0], 0.5)
    assert w.windows == 4
    plain = simulate_ensemble(OU1, d, with_config(cfg, seed=9), [0.5], 20_000)
    ref = plain.final[:, 0].mean()
    se = plain.final[:, 0].std() / math.sqrt(20_000)
    assert abs(w.estimate - ref) < 4 * math.hypot(w.std_error, se) + 0.01


def test_continuity_scan_is_smooth_in_start_point():
    cfg = SimConfig(dt=0.02, t_max=0.5, seed=12)
    xs = np.linspace(0.0, 0.2, 5)
    ests = gs.continuity_scan(OU1, DriftSpec.tanh(1), cfg, xs,
                              lambda y: np.cos(y[:, 0]), 2000)
    vals = np.array([e.estimate for e in ests])
    # common noise: the curve bends far less than one SE between points
    assert np.max(np.abs(np.diff(vals, 2))) < 0.25 * ests[0].std_error
