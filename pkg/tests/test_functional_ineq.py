import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singsde import functional_ineq as fi
from singsde.gaussian_reference import GaussianReference
from singsde.model import DiffusionModel, DriftSpec
from singsde.report import PreconditionError, Verdict
from singsde.simulate import SimConfig, simulate_ensemble

REF = GaussianReference.power(2, 4, 0.6)


def _mc_moments(ref, f, n=400_000, seed=0):
    g = np.random.default_rng(seed).standard_normal((n, ref.dim))
    y = f(g / np.sqrt(ref.spectrum)) ** 2
    e = y * np.log(np.where(y > 0, y, 1.0))
    se = lambda v: v.std() / math.sqrt(n)
    return (y.mean(), se(y)), (e.mean(), se(e))


@pytest.mark.parametrize("family", fi.FAMILIES)
def test_bank_members_are_normalised(family):
    for f in fi.random_bank(REF, 3, family, np.random.default_rng(1)):
        assert math.isclose(fi.second_moment(REF, f), 1.0, rel_tol=1e-9)
        (m2, m2_se), (ent, ent_se) = _mc_moments(REF, f)
        assert abs(m2 - 1) < 5 * m2_se + 1e-3
        if family != "indicator_box":
            assert abs(ent - fi.entropy_energy(REF, f)[0]) < 5 * ent_se + 1e-3


def test_exp_tilt_entropy_closed_form():
    f = fi.exp_linear(REF, [0.8, -0.4])
    ent, energy = fi.entropy_energy(REF, f)
    s = np.array([0.8, -0.4])
    # f^2 = exp(<s,x> - c) with mu0(f^2) = 1: Ent = Var<s,x>/2, energy = |s|^2/4
    assert math.isclose(ent, 0.5 * float(np.sum(s * s / REF.spectrum[:2])),
                        rel_tol=1e-12)
    assert math.isclose(energy, float(s @ s) / 4, rel_tol=1e-12)


def test_log_sobolev_bank_and_equality():
    g = np.random.default_rng(3)
    bank = fi.random_bank(REF, 40, "hermite_mix", g) + [fi.exp_linear(REF, [1.3])]
    rep = fi.check_log_sobolev(REF, bank, kappa=2.0 / REF.spectrum[0])
    assert rep.verdict.ok
    assert abs(rep.details["rows"][-1][3]) < 1e-8
    # a too-small constant is caught
    bad = fi.check_log_sobolev(REF, bank, kappa=0.5 / REF.spectrum[0])
    assert bad.verdict.failed


def test_harnack_on_exact_tuples():
    g = np.random.default_rng(4)
    bank = fi.random_bank(REF, 3, "exp_linear", g) + fi.random_bank(
        REF, 3, "indicator_box", g)
    rep = fi.check_harnack_HN(REF, bank, fi.random_harnack_tuples(REF, 30, g))
    assert rep.details["violations"] == 0


def test_mehler_apply_matches_sampling():
    f = fi.exp_linear(REF, [0.5, 0.2])
    x = np.array([0.3, -0.2, 0.1, 0.0])
    exact = fi.mehler_apply(REF, f, x, 0.4)
    g = np.random.default_rng(5).standard_normal((200_000, 4))
    mean = np.exp(-REF.spectrum * 0.4) * x
    sd = np.sqrt(-np.expm1(-2 * REF.spectrum * 0.4) / REF.spectrum)
    mc = f(mean + sd * g)
    assert abs(mc.mean() - exact) < 4 * mc.std() / math.sqrt(mc.size)


@given(st.integers(2, 8), st.integers(0, 2**31))
def test_young_inequality_random(k, seed):
    g = np.random.default_rng(seed)
    nu = g.dirichlet(np.ones(k))
    f = g.exponential(1.0, k)
    h = g.exponential(1.0, k)
    h = h / float(nu @ h)
    assert fi.check_young(nu, f, h).verdict is Verdict.HOLDS
    eq = fi.check_young(nu, f, fi.young_extremizer(nu, f))
    assert abs(eq.details["gap"]) <= 1e-12


def test_young_preconditions():
    with pytest.raises(PreconditionError):
        fi.check_young([0.5, 0.6], [1, 1], [1, 1])
    with pytest.raises(PreconditionError):
        fi.check_young([0.5, 0.5], [1, 1], [2, 2])


def test_hypercontractivity_and_equality():
    g = np.random.default_rng(6)
    svecs = [g.normal(size=3) for _ in range(50)]
    rep = fi.check_hypercontractivity(REF, svecs + [np.array([1.0])], 0.3, 2.0)
    assert rep.verdict is Verdict.HOLDS
    eq = fi.check_hypercontractivity(REF, [np.array([1.0])], 0.3, 2.0)
    assert abs(eq.details["worst_log_margin"]) < 1e-10


def _fk_sim(n_paths, seed=0):
    m = DiffusionModel.ou(1)

    def run(F, horizons):
        cfg = SimConfig(dt=0.02, t_max=float(max(horizons)), seed=seed,
                        scheme="exact_ou_splitting")
        ens = simulate_ensemble(m, DriftSpec.zero(1), cfg, "mu0", n_paths,
                                integrand=F,
                                integrand_times=tuple(float(h) for h in horizons))
        return ens.integrals
    return run


def test_feynman_kac_constant_potential_is_exact():
    rep = fi.check_feynman_kac_growth(_fk_sim(200), fi.BoundedPotential.constant(0.7))
    for row in rep.details["rows"]:
        assert math.isclose(row["a_n"], 0.7 * row["n"], rel_tol=1e-9)
    assert rep.verdict is Verdict.PASS


def test_feynman_kac_rates_nondecreasing():
    rep = fi.check_feynman_kac_growth(_fk_sim(3000, seed=2),
                                      fi.BoundedPotential.min_abs(1.0))
    assert rep.details["rate_nondecreasing"]


def test_feynman_kac_rejects_unbounded():
    with pytest.raises(PreconditionError):
        fi.check_feynman_kac_growth(_fk_sim(10),
                                    fi.BoundedPotential(lambda x: x[:, 0], math.inf))
