"""Product Gaussian reference measure and its OU semigroup.

Mode i of the reference dynamics is ``dX_i = -lambda_i X_i dt + sqrt(2) dW_i``
with invariant law ``N(0, 1/lambda_i)``. Everything here is closed form or
one-dimensional quadrature; nothing is simulated.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .report import (ConditionFailedError, DomainError, HorizonExceededError,
                     PrecisionError)

Array = np.ndarray


@dataclass(frozen=True)
class GaussianReference:
    """Leading eigenvalues ``lambda_1 <= ... <= lambda_n`` of A.

    ``kappa = 2 / lambda_1`` is the Gaussian log-Sobolev constant and
    ``beta_defect`` is 0; ``theta`` is the summability exponent used by the
    short-time bound on ``Psi``.
    """

    spectrum: Array
    theta: float = 0.5
    beta_defect: float = 0.0
    tail_exponent: float | None = field(default=None, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.spectrum, dtype=float).reshape(-1)
        if lam.size == 0 or lam[0] <= 0 or np.any(np.diff(lam) < 0):
            raise DomainError("spectrum must be positive and nondecreasing")
        if not 0 < self.theta < 1:
            raise DomainError("theta must lie in (0, 1)")
        object.__setattr__(self, "spectrum", lam)

    @classmethod
    def power(cls, s: float, n: int, theta: float = 0.5) -> "GaussianReference":
        lam = np.arange(1, n + 1, dtype=float) ** s
        return cls(lam, theta=theta, tail_exponent=s)

    @classmethod
    def isotropic(cls, dim: int, lambda0: float = 1.0, theta: float = 0.5
                  ) -> "GaussianReference":
        return cls(np.full(dim, float(lambda0)), theta=theta)

    @property
    def dim(self) -> int:
        return self.spectrum.size

    @property
    def kappa(self) -> float:
        return 2.0 / self.spectrum[0]

    @property
    def variances(self) -> Array:
        return 1.0 / self.spectrum

    def sample(self, normals: Array) -> Array:
        """Exact mu0 samples from standard normals of shape (..., n)."""
        return normals / np.sqrt(self.spectrum)


def parse_spectrum(text: str, theta: float = 0.5) -> GaussianReference:
    """``power:<s>,<n>`` or ``explicit:[l1, l2, ...]``."""
    text = text.strip()
    m = re.fullmatch(r"power:\s*([-+0-9.eE]+)\s*,\s*(\d+)", text)
    if m:
        return GaussianReference.power(float(m.group(1)), int(m.group(2)), theta)
    m = re.fullmatch(r"explicit:\s*\[?([^\]]*)\]?", text)
    if m:
        vals = [float(v) for v in m.group(1).replace(",", " ").split()]
        return GaussianReference(np.array(vals), theta=theta)
    raise DomainError(f"cannot parse spectrum {text!r}")


# ----------------------------------------------------------------------
# Mehler transition


def mehler_transition(ref: GaussianReference, x, t: float) -> tuple[Array, Array]:
    """Per-mode mean ``e^{-lambda t} x`` and variance ``(1 - e^{-2 lambda t})/lambda``."""
    if t < 0:
        raise DomainError("t must be >= 0")
    lam = ref.spectrum
    x = np.asarray(x, dtype=float)
    mean = np.exp(-lam * t) * x
    var = -np.expm1(-2.0 * lam * t) / lam
    return mean, np.broadcast_to(var, mean.shape).copy()


def mehler_sample(ref: GaussianReference, x: Array, t: float, normals: Array
                  ) -> Array:
    mean, var = mehler_transition(ref, x, t)
    return mean + np.sqrt(var) * normals


def mehler_exp_linear(ref: GaussianReference, s, x, t: float) -> Array:
    """Closed-form ``P_t f(x)`` for ``f(y) = exp(<s, y>)``."""
    mean, var = mehler_transition(ref, x, t)
    s = np.asarray(s, dtype=float)
    return np.exp(np.sum(s * mean, axis=-1) + 0.5 * np.sum(s * s * var, axis=-1))


def per_mode_harnack_exponent(ref: GaussianReference, x, y, t: float,
                              p: float) -> float | Array:
    """Exponent in ``(P_t f(x))^p <= P_t f^p(y) exp(.)`` from the per-mode
    Harnack inequalities of the reference OU semigroup."""
    if t <= 0:
        raise DomainError("t must be > 0")
    if p <= 1:
        raise DomainError("p must be > 1")
    lam = ref.spectrum
    diff2 = (np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) ** 2
    return p / (2.0 * (p - 1.0)) * np.sum(lam * diff2 / np.expm1(2.0 * lam * t),
                                          axis=-1)


# ----------------------------------------------------------------------
# Gamma, Psi, beta, Lambda


def log_gamma_factor(ref: GaussianReference, x, t) -> Array:
    """``log Gamma_x(t)``; vectorised over an array of times."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be > 0")
    lam = ref.spectrum
    x2 = np.asarray(x, dtype=float) ** 2
    u = 2.0 * lam * t[..., None]
    # 1/(e^u + 1) and log((e^u + 1)/(e^u - 1)), overflow-free
    inv = np.exp(-np.logaddexp(0.0, u))
    logratio = np.log1p(np.exp(-u)) - np.log(-np.expm1(-u))
    return 0.5 * np.sum(lam * x2 * inv, axis=-1) + 0.25 * np.sum(logratio, axis=-1)


def gamma_factor(ref: GaussianReference, x, t) -> Array | float:
    g = np.exp(log_gamma_factor(ref, x, t))
    return float(g) if np.ndim(g) == 0 else g


def _quad(f, a, b, tol, what):
    val, err = integrate.quad(f, a, b, epsabs=tol, epsrel=0.0, limit=500)
    if not np.isfinite(val) or err > 10 * tol:
        raise PrecisionError(f"{what}: quadrature reached only {err:.2e}")
    return val, err


def log_bound_constant(theta: float) -> float:
    """Smallest c with ``log(1 + r) <= c r^theta`` for all r >= 0."""
    res = optimize.minimize_scalar(
        lambda z: -(math.log1p(math.exp(z)) / math.exp(theta * z)),
        bounds=(-40.0, 60.0), method="bounded", options={"xatol": 1e-12})
    return float(-res.fun)


def psi_bound_constant(ref: GaussianReference) -> float:
    """``C = c/(4 (1 - theta)) * sum lambda_i^{-theta}``."""
    th = ref.theta
    return (0.25 * log_bound_constant(th) / (1.0 - th)
            * float(np.sum(ref.spectrum ** -th)))


@dataclass
class PsiValue:
    value: float
    error: float
    bound: float


def psi(ref: GaussianReference, x, t: float, tol: float = 1e-8) -> PsiValue:
    """``Psi(t, x) = int_0^t log Gamma_x(s) ds`` with its analytic upper bound.

    The substitution ``s = u^{1/(1-theta)}`` removes the logarithmic
    singularity of the integrand at s = 0.
    """
    if t <= 0:
        raise DomainError("t must be > 0")
    x = np.asarray(x, dtype=float)
    k = 1.0 / (1.0 - ref.theta)

    def integrand(u):
        if u <= 0:
            return 0.0
        s = u ** k
        return float(log_gamma_factor(ref, x, s)) * k * u ** (k - 1.0)

    val, err = _quad(integrand, 0.0, t ** (1.0 / k), tol, "Psi")
    lam = ref.spectrum
    bound = (0.25 * float(np.sum(x * x * -np.expm1(-2.0 * lam * t)))
             + psi_bound_constant(ref) * t ** (1.0 - ref.theta))
    return PsiValue(val, err, bound)


def beta_x(ref: GaussianReference, x, t: float, tol: float = 1e-8) -> float:
    """``int_0^t ds / Gamma_x(s)``, in ``(0, t]``."""
    if t <= 0:
        raise DomainError("t must be > 0")
    x = np.asarray(x, dtype=float)
    f = lambda s: math.exp(-float(log_gamma_factor(ref, x, s))) if s > 0 else 0.0
    val, _ = _quad(f, 0.0, t, tol, "beta_x")
    return val


def novikov_lambda(ref: GaussianReference, x, t: float, gamma: float,
                   lam: float, exp_moment: float, tol: float = 1e-8) -> float:
    """Upper bound on ``E exp[gamma int_0^t |Z(X_s^x)|^2 ds]`` for the
    reference process, valid for ``0 < t <= lam / (2 gamma)`` given
    ``exp_moment = mu0(exp(lam |Z|^2)) < inf``."""
    if gamma <= 0 or lam <= 0:
        raise DomainError("gamma and lambda must be > 0")
    if t > lam / (2.0 * gamma) * (1 + 1e-12):
        raise HorizonExceededError(
            f"t = {t} exceeds the certified window lambda/(2 gamma) = "
            f"{lam / (2 * gamma)}")
    if not math.isfinite(exp_moment):
        raise ConditionFailedError("exponential moment of |Z|^2 is infinite")
    ps = psi(ref, x, t, tol).value
    b = beta_x(ref, x, t, tol)
    expo = 2.0 * gamma * t / lam
    log_l = (2.0 * gamma / lam) * ps + expo * (math.log(t / b)
                                               + 0.5 * math.log(exp_moment))
    return math.exp(log_l)


@dataclass
class HarnackCertificate:
    x: Array
    t: float
    gamma_factor: float
    psi: float
    psi_bound: float
    beta_x: float
    lambda_budget: float
    novikov_horizon: float


def harnack_certificate(ref: GaussianReference, x, t: float, lam: float
                        ) -> HarnackCertificate:
    ps = psi(ref, x, t)
    return HarnackCertificate(
        x=np.asarray(x, dtype=float), t=t,
        gamma_factor=float(gamma_factor(ref, x, t)),
        psi=ps.value, psi_bound=ps.bound, beta_x=beta_x(ref, x, t),
        lambda_budget=lam, novikov_horizon=2.0 * lam)


def hypercontractive_bound(kappa: float, beta_defect: float, t: float,
                           q: float) -> tuple[float, float]:
    """Target exponent ``q_t = 1 + (q-1) e^{4t/kappa}`` and the operator-norm
    bound ``exp[beta (1/q - 1/q_t)]``."""
    if q <= 1:
        raise DomainError("q must be > 1")
    if t < 0:
        raise DomainError("t must be >= 0")
    qt = 1.0 + (q - 1.0) * math.exp(4.0 * t / kappa)
    return qt, math.exp(beta_defect * (1.0 / q - 1.0 / qt))
