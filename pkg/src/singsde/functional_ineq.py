"""Numerical checks of functional inequalities for the Gaussian reference.

Test functions come from a bank whose entropies, energies, norms and
Mehler images are closed form (exponential tilts), exact up to
one-dimensional quadrature (Hermite mixtures, Gaussian bumps) or given by
Gaussian CDFs (indicator boxes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .gaussian_reference import (GaussianReference, hypercontractive_bound,
                                 mehler_exp_linear, mehler_transition,
                                 per_mode_harnack_exponent)
from .report import CertificateReport, DomainError, PreconditionError, Verdict

Array = np.ndarray
FAMILIES = ("exp_linear", "hermite_mix", "gaussian_bump", "indicator_box")


# ----------------------------------------------------------------------
# test-function bank


@dataclass(frozen=True)
class TestFunction:
    """One bank member. ``params`` depends on ``family``:

    exp_linear:    s (vector); f = exp(<s, x>/2 - sum s_i^2 / (4 lambda_i))
    hermite_mix:   mode j, coeffs c_k; f = sum c_k He_k(sqrt(lambda_j) x_j)/sqrt(k!)
    gaussian_bump: center c, width w; f = a exp(-|x - c|^2 / (2 w^2))
    indicator_box: lo, hi; f = a 1{lo <= x < hi}

    ``scale`` a enforces mu0(f^2) = 1 where it applies.
    """

    family: str
    params: dict
    scale: float = 1.0

    __test__ = False  # keep pytest from collecting the class

    def __call__(self, x: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.params
        if self.family == "exp_linear":
            s = np.asarray(p["s"])
            return self.scale * np.exp(0.5 * x[:, :s.size] @ s - p["shift"])
        if self.family == "hermite_mix":
            lam = p["lam"]
            u = math.sqrt(lam) * x[:, p["mode"]]
            return self.scale * _hermite_sum(p["coeffs"], u)
        if self.family == "gaussian_bump":
            c = np.asarray(p["center"])
            r2 = np.sum((x[:, :c.size] - c) ** 2, axis=1)
            return self.scale * np.exp(-0.5 * r2 / p["width"] ** 2)
        if self.family == "indicator_box":
            lo, hi = np.asarray(p["lo"]), np.asarray(p["hi"])
            k = lo.size
            inside = np.all((x[:, :k] >= lo) & (x[:, :k] < hi), axis=1)
            return self.scale * inside.astype(float)
        raise DomainError(f"unknown family {self.family!r}")


def _hermite_sum(coeffs, u):
    """``sum_k c_k He_k(u) / sqrt(k!)`` (probabilists' Hermite)."""
    c = np.asarray(coeffs, dtype=float) / np.sqrt(
        special.factorial(np.arange(len(coeffs))))
    return np.polynomial.hermite_e.hermeval(u, c)


def exp_linear(ref: GaussianReference, s) -> TestFunction:
    """Normalised tilt with ``mu0(f^2) = 1``."""
    s = np.asarray(s, dtype=float)
    lam = ref.spectrum[:s.size]
    return TestFunction("exp_linear", {"s": s, "shift": float(np.sum(s * s / (4 * lam)))})


def hermite_mix(ref: GaussianReference, coeffs, mode: int = 0) -> TestFunction:
    c = np.asarray(coeffs, dtype=float)
    norm = math.sqrt(float(np.sum(c * c)))
    if norm == 0:
        raise DomainError("zero Hermite mixture")
    return TestFunction("hermite_mix", {"coeffs": c / norm, "mode": int(mode),
                                        "lam": float(ref.spectrum[mode])})


def _hermite_entropy(c: Array, scale: float) -> float:
    """``E[v log v]`` with ``v = (scale * sum c_k He_k(U)/sqrt(k!))^2``,
    U standard normal; adaptive quadrature split at the real roots, where
    the integrand has kinks."""
    coef = scale * np.asarray(c, float) / np.sqrt(special.factorial(np.arange(len(c))))
    roots = np.polynomial.hermite_e.hermeroots(coef) if len(coef) > 1 else []
    real = np.sort([r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-9])
    pts = [-np.inf, *real, np.inf]

    def g(u):
        v = np.polynomial.hermite_e.hermeval(u, coef) ** 2
        return v * math.log(v) * math.exp(-0.5 * u * u) if v > 0 else 0.0

    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(g, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
    return total / math.sqrt(2 * math.pi)


def gaussian_bump(ref: GaussianReference, center, width: float) -> TestFunction:
    c = np.asarray(center, dtype=float)
    lam = ref.spectrum[:c.size]
    m2 = 1.0
    for ci, li in zip(c, lam):
        m2 *= _bump_mode_moments(ci, width, li)[0]
    return TestFunction("gaussian_bump", {"center": c, "width": float(width)},
                        1.0 / math.sqrt(m2))


def _bump_mode_moments(c: float, w: float, lam: float) -> tuple[float, float, float]:
    """Per-mode closed forms for ``g = exp(-(x-c)^2/w^2)`` under N(0, 1/lam):
    ``E g``, ``E[g (x-c)^2]`` and ``E[g (x-c)^4]``."""
    # g * density is Gaussian with precision lam + 2/w^2 and mean m
    prec = lam + 2.0 / w ** 2
    m = (2.0 * c / w ** 2) / prec
    z = math.sqrt(lam / prec) * math.exp(-0.5 * (lam * 2.0 / w ** 2) / prec * c * c)
    v = 1.0 / prec
    d = m - c
    e2 = v + d * d
    e4 = 3 * v * v + 6 * v * d * d + d ** 4
    return z, z * e2, z * e4


def indicator_box(ref: GaussianReference, lo, hi) -> TestFunction:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    s = np.sqrt(ref.spectrum[:lo.size])
    mass = float(np.prod(special.ndtr(hi * s) - special.ndtr(lo * s)))
    if mass <= 0:
        raise DomainError("box has zero mu0 mass")
    return TestFunction("indicator_box", {"lo": lo, "hi": hi}, 1.0 / math.sqrt(mass))


def random_bank(ref: GaussianReference, n: int, family: str, rng: np.random.Generator,
                max_modes: int = 3) -> list[TestFunction]:
    k = min(max_modes, ref.dim)
    out = []
    for _ in range(n):
        if family == "exp_linear":
            out.append(exp_linear(ref, rng.normal(scale=1.5, size=k)))
        elif family == "hermite_mix":
            deg = int(rng.integers(1, 7))
            out.append(hermite_mix(ref, rng.normal(size=deg + 1),
                                   int(rng.integers(0, k))))
        elif family == "gaussian_bump":
            out.append(gaussian_bump(ref, rng.normal(scale=1.5, size=k),
                                     float(rng.uniform(0.3, 2.0))))
        elif family == "indicator_box":
            sd = 1.0 / np.sqrt(ref.spectrum[:k])
            a = rng.normal(size=k) * sd
            out.append(indicator_box(ref, a, a + rng.uniform(0.2, 2.0, size=k) * sd))
        else:
            raise DomainError(f"unknown family {family!r}")
    return out


def second_moment(ref: GaussianReference, f: TestFunction) -> float:
    """``mu0(f^2)``; equals 1 for every normalised member."""
    p = f.params
    if f.family == "exp_linear":
        s = np.asarray(p["s"])
        lam = ref.spectrum[:s.size]
        return f.scale ** 2 * math.exp(float(np.sum(s * s / (2 * lam))) - 2 * p["shift"])
    if f.family == "hermite_mix":
        return f.scale ** 2 * float(np.sum(np.asarray(p["coeffs"]) ** 2))
    if f.family == "gaussian_bump":
        c = np.asarray(p["center"])
        out = 1.0
        for ci, li in zip(c, ref.spectrum[:c.size]):
            out *= _bump_mode_moments(ci, p["width"], li)[0]
        return f.scale ** 2 * out
    s = np.sqrt(ref.spectrum[:np.size(p["lo"])])
    return f.scale ** 2 * float(np.prod(special.ndtr(p["hi"] * s) - special.ndtr(p["lo"] * s)))


def entropy_energy(ref: GaussianReference, f: TestFunction) -> tuple[float, float]:
    """``(mu0(f^2 log f^2), mu0(|grad f|^2))`` for a normalised member."""
    p = f.params
    a2 = f.scale ** 2
    if f.family == "exp_linear":
        s = np.asarray(p["s"])
        lam = ref.spectrum[:s.size]
        ent = float(np.sum(s * s / (2 * lam)))
        return ent + math.log(a2), a2 * float(np.sum(s * s)) / 4.0
    if f.family == "hermite_mix":
        c = np.asarray(p["coeffs"])
        k = np.arange(c.size)
        energy = a2 * p["lam"] * float(np.sum(k * c * c))

        return _hermite_entropy(c, f.scale), energy
    if f.family == "gaussian_bump":
        c = np.asarray(p["center"])
        w = p["width"]
        mom = [_bump_mode_moments(ci, w, li) for ci, li in zip(c, ref.spectrum[:c.size])]
        z = np.array([m[0] for m in mom])
        e2 = np.array([m[1] for m in mom])
        prod_all = float(np.prod(z))
        # f^2 = a^2 prod g_i, log f^2 = log a^2 - sum (x_i - c_i)^2 / w^2
        ent = a2 * (math.log(a2) * prod_all
                    - sum(e2[i] / w ** 2 * prod_all / z[i] for i in range(z.size)))
        energy = a2 * sum(e2[i] / w ** 4 * prod_all / z[i] for i in range(z.size))
        return ent, energy
    if f.family == "indicator_box":
        return math.log(a2), math.inf
    raise DomainError(f"unknown family {f.family!r}")


# ----------------------------------------------------------------------
# log-Sobolev


def check_log_sobolev(ref: GaussianReference, bank: list[TestFunction],
                      kappa: float | None = None, beta: float | None = None,
                      tol: float = 1e-9) -> CertificateReport:
    """``mu0(f^2 log f^2) <= kappa mu0(|grad f|^2) + beta`` over the bank."""
    kappa = ref.kappa if kappa is None else kappa
    beta = ref.beta_defect if beta is None else beta
    worst = (math.inf, None)
    violations = 0
    rows = []
    for f in bank:
        ent, en = entropy_energy(ref, f)
        rhs = kappa * en + beta
        margin = rhs - ent
        rows.append((f.family, ent, rhs, margin))
        if margin < -tol * max(1.0, abs(rhs)):
            violations += 1
        if margin < worst[0]:
            worst = (margin, (ent, rhs))
    lhs, rhs = worst[1] if worst[1] else (0.0, 0.0)
    return CertificateReport("LS", lhs, rhs,
                             Verdict.HOLDS if violations == 0 else Verdict.FAILS,
                             0.0, {"violations": violations, "worst_margin": worst[0],
                                   "kappa": kappa, "beta": beta, "rows": rows})


# ----------------------------------------------------------------------
# Harnack for the reference semigroup


def mehler_apply(ref: GaussianReference, f: TestFunction, x, t: float,
                 power: float = 1.0) -> float:
    """Closed-form ``P_t^0 (f^power)(x)`` for exp_linear and indicator_box."""
    x = np.asarray(x, dtype=float)
    p = f.params
    if f.family == "exp_linear":
        s = np.zeros(ref.dim)
        s[:np.size(p["s"])] = p["s"]
        return (f.scale ** power * math.exp(-power * p["shift"])
                * float(mehler_exp_linear(ref, 0.5 * power * s, x, t)))
    if f.family == "indicator_box":
        mean, var = mehler_transition(ref, x, t)
        k = np.size(p["lo"])
        sd = np.sqrt(var[:k])
        if t == 0:
            return float(f(x[None, :])[0] ** power)
        prob = np.prod(special.ndtr((p["hi"] - mean[:k]) / sd)
                       - special.ndtr((p["lo"] - mean[:k]) / sd))
        return f.scale ** power * float(prob)
    raise DomainError("closed-form Mehler image only for exp_linear/indicator_box")


def check_harnack_HN(ref: GaussianReference, bank: list[TestFunction], tuples,
                     tol: float = 1e-10) -> CertificateReport:
    """For each f in the bank and (x, y, t) in ``tuples`` checks

        (P_t f(x))^2 <= P_t f^2(y) exp(2 |x - y|^2 / t)

    and the sharper per-mode exponent from the reference spectrum, in log
    form. The bases ratio ``P_t f(x) / P_t f(y)`` is reported as well.
    """
    viol_hn = viol_mode = 0
    worst = (math.inf, 0.0, 0.0)
    ratios = []
    for f in bank:
        for x, y, t in tuples:
            x = np.asarray(x, float)
            y = np.asarray(y, float)
            lx = math.log(mehler_apply(ref, f, x, t))
            ly2 = math.log(mehler_apply(ref, f, y, t, power=2.0))
            lhs = 2.0 * lx
            c_hn = 2.0 * float(np.sum((x - y) ** 2)) / t
            c_mode = float(per_mode_harnack_exponent(ref, x, y, t, 2.0))
            if lhs > ly2 + c_hn + tol * max(1, abs(lhs)):
                viol_hn += 1
            if lhs > ly2 + c_mode + tol * max(1, abs(lhs)):
                viol_mode += 1
            m = ly2 + c_mode - lhs
            if m < worst[0]:
                worst = (m, lhs, ly2 + c_mode)
            ratios.append(lx - math.log(mehler_apply(ref, f, y, t)))
    v = Verdict.HOLDS if viol_hn == 0 and viol_mode == 0 else Verdict.FAILS
    return CertificateReport("HN", worst[1], worst[2], v, 0.0,
                             {"violations": viol_hn, "violations_per_mode": viol_mode,
                              "worst_log_margin": worst[0],
                              "log_bases_ratio": ratios})


def random_harnack_tuples(ref: GaussianReference, n: int, rng: np.random.Generator,
                          scale: float = 1.5) -> list[tuple[Array, Array, float]]:
    out = []
    for _ in range(n):
        x = rng.normal(scale=scale, size=ref.dim)
        y = x + rng.normal(scale=0.7, size=ref.dim)
        out.append((x, y, float(rng.uniform(0.05, 3.0))))
    return out


# ----------------------------------------------------------------------
# Harnack for the perturbed semigroup (empirical)


@dataclass
class HarnackFit:
    """Smallest ``Phi`` making all sampled inequalities hold. EMPIRICAL FIT,
    not a certified constant."""

    phi: float
    phi_se: float
    per_y: list[dict]
    constrained: bool
    warnings: list[str] = field(default_factory=list)
    label: str = "EMPIRICAL FIT"


def check_harnack_perturbed(semigroup: Callable, f: Callable[[Array], Array],
                            p: float, x, ys, t: float) -> HarnackFit:
    """``semigroup(point, g)`` must return an object with ``estimate``,
    ``std_error`` and ``warnings`` (e.g. a closure over
    :func:`girsanov.weighted_semigroup`).

    For each y the required exponent is
    ``e_y = p log P_t f(x) - log P_t f^p(y)`` and
    ``Phi_y = e_y / (1 + |x - y|^2 / (1 ^ t))``.
    """
    if p <= 1:
        raise DomainError("p must be > 1")
    x = np.asarray(x, dtype=float)
    fp = lambda z: np.asarray(f(z), dtype=float) ** p
    ex = semigroup(x, f)
    warns = list(ex.warnings)
    if ex.estimate <= 0:
        raise DomainError("P_t f(x) estimate is not positive")
    lx, slx = math.log(ex.estimate), ex.std_error / ex.estimate
    rows = []
    best = (-math.inf, 0.0)
    constrained = False
    for y in ys:
        y = np.asarray(y, dtype=float)
        ey = semigroup(y, fp)
        warns += ey.warnings
        ly, sly = math.log(ey.estimate), ey.std_error / ey.estimate
        e = p * lx - ly
        se = math.hypot(p * slx, sly)
        dist2 = float(np.sum((x - y) ** 2))
        denom = 1.0 + dist2 / min(1.0, t)
        phi = e / denom
        rows.append({"y": y, "exponent": e, "exponent_se": se, "phi": phi,
                     "phi_se": se / denom})
        if dist2 > 0:
            constrained = True
        if phi > best[0]:
            best = (phi, se / denom)
    if not constrained:
        warns.append("ring radius 0: Phi is unconstrained by the samples")
    return HarnackFit(max(best[0], 0.0), best[1], rows, constrained, warns)


# ----------------------------------------------------------------------
# Young


def check_young(nu, f, g, tol: float = 1e-12) -> CertificateReport:
    """``nu(fg) <= log nu(e^f) + nu(g log g)`` with exact finite sums."""
    nu = np.asarray(nu, dtype=float)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(nu < 0) or abs(math.fsum(nu) - 1.0) > 1e-12:
        raise PreconditionError("nu must be a probability vector")
    if np.any(f < 0) or np.any(g < 0):
        raise PreconditionError("f and g must be nonnegative")
    if abs(math.fsum(nu * g) - 1.0) > 1e-12:
        raise PreconditionError("nu(g) must equal 1")
    lhs = math.fsum(nu * f * g)
    pos = nu > 0
    log_mgf = float(special.logsumexp(f[pos], b=nu[pos]))
    glogg = np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)), 0.0)
    rhs = log_mgf + math.fsum(nu * glogg)
    ok = lhs <= rhs + tol * max(1.0, abs(rhs))
    return CertificateReport("Young", lhs, rhs, Verdict.HOLDS if ok else Verdict.FAILS,
                             0.0, {"gap": rhs - lhs})


def young_extremizer(nu, f) -> Array:
    """``g = e^f / nu(e^f)``, the equality case."""
    nu = np.asarray(nu, dtype=float)
    f = np.asarray(f, dtype=float)
    m = f.max()
    e = np.exp(f - m)
    return e / math.fsum(nu * e)


# ----------------------------------------------------------------------
# hypercontractivity


def lq_norm_exp(ref: GaussianReference, s, q: float, t: float = 0.0) -> float:
    """Log of ``||P_t^0 e^{<s,.>}||_{L^q(mu0)}``, closed form."""
    s = np.zeros(ref.dim) + 0.0 if np.ndim(s) == 0 else np.asarray(s, float)
    lam = ref.spectrum[:s.size]
    decay = np.exp(-lam * t)
    var = -np.expm1(-2 * lam * t) / lam
    # P_t e^{<s,x>} = exp(<s e^{-lam t}, x> + sum s^2 var / 2)
    b = s * decay
    return float(np.sum(s * s * var) / 2 + q * np.sum(b * b / lam) / 2)


def check_hypercontractivity(ref: GaussianReference, svecs, t: float, q: float,
                             tol: float = 1e-10) -> CertificateReport:
    """``||P_t f||_{q(t)} <= exp[beta (1/q - 1/q(t))] ||f||_q`` for
    ``f = e^{<s,x>}``, in log form."""
    qt, factor = hypercontractive_bound(ref.kappa, ref.beta_defect, t, q)
    worst = (math.inf, 0.0, 0.0)
    viol = 0
    for s in svecs:
        lhs = lq_norm_exp(ref, s, qt, t)
        rhs = math.log(factor) + lq_norm_exp(ref, s, q, 0.0)
        if lhs > rhs + tol * max(1.0, abs(rhs)):
            viol += 1
        if rhs - lhs < worst[0]:
            worst = (rhs - lhs, lhs, rhs)
    return CertificateReport("HPC", worst[1], worst[2],
                             Verdict.HOLDS if viol == 0 else Verdict.FAILS, 0.0,
                             {"q_t": qt, "violations": viol, "worst_log_margin": worst[0]})


# ----------------------------------------------------------------------
# Feynman-Kac growth


@dataclass(frozen=True)
class BoundedPotential:
    F: Callable[[Array], Array]
    bound: float
    name: str = "F"

    @classmethod
    def constant(cls, c: float) -> "BoundedPotential":
        return cls(lambda x: np.full(len(x), float(c)), abs(float(c)), f"const:{c}")

    @classmethod
    def min_abs(cls, c: float = 1.0) -> "BoundedPotential":
        return cls(lambda x: np.minimum(c, np.linalg.norm(x, axis=-1)), float(c),
                   f"min({c},|x|)")


def check_feynman_kac_growth(simulate_fn: Callable, potential: BoundedPotential,
                             horizons=(1, 2, 3)) -> CertificateReport:
    """``a_n = log E exp[int_0^n F(X_t) dt]`` under the reference process
    started from mu0; PASS iff ``a_n <= n (a_1 + 3 SE_1)`` for n > 1.

    ``simulate_fn(F, horizons)`` must return an (len(horizons), n_paths)
    array of the integrals. Also reported: whether ``a_n / n`` is
    nondecreasing within 3 SE, which holds for every bounded F because
    ``P_1^F`` is a positive self-adjoint operator on L^2(mu0).
    """
    if not math.isfinite(potential.bound):
        raise PreconditionError("F must be bounded")
    horizons = tuple(horizons)
    if horizons[0] != 1:
        raise DomainError("horizons must start at n = 1")
    ints = np.asarray(simulate_fn(potential.F, horizons), dtype=float)
    if np.any(ints > potential.bound * np.asarray(horizons)[:, None] * (1 + 1e-9)):
        raise PreconditionError("F exceeded its declared bound")
    a, se = [], []
    for row in ints:
        m = row.max()
        w = np.exp(row - m)
        mean = w.mean()
        a.append(m + math.log(mean))
        se.append(float(w.std(ddof=1) / mean / math.sqrt(w.size)) if w.size > 1 else 0.0)
    ok = True
    rows = []
    for n, an, sn in zip(horizons, a, se):
        bound = n * (a[0] + 3 * se[0])
        passed = an <= bound + 1e-12 * max(1.0, abs(bound))
        if n > 1:
            ok &= passed
        rows.append({"n": n, "a_n": an, "se": sn, "bound": bound, "passed": passed})
    rates = [an / n for n, an in zip(horizons, a)]
    rate_se = [sn / n for n, sn in zip(horizons, se)]
    lyapunov = all(rates[i + 1] >= rates[i] - 3 * math.hypot(rate_se[i], rate_se[i + 1])
                   for i in range(len(rates) - 1))
    last = rows[-1]
    return CertificateReport("BDD", last["a_n"], last["bound"],
                             Verdict.PASS if ok else Verdict.FAIL, last["se"],
                             {"rows": rows, "rates": rates,
                              "rate_nondecreasing": lyapunov})
