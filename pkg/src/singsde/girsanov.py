"""Girsanov reweighting of reference paths.

For reference paths driven by W, the weight

    R_t = exp[(1/sqrt 2) int <sigma^-1 Z, dW> - (1/4) int |sigma^-1 Z|^2 ds]

turns the reference law into the law of the perturbed SDE. The 1/sqrt 2 and
1/4 follow from the sqrt(2) sigma diffusion coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .gaussian_reference import GaussianReference, novikov_lambda
from .report import (CertificateReport, DomainError, HorizonExceededError,
                     Verdict)

Array = np.ndarray
_SQRT2 = math.sqrt(2.0)
MIN_ESS = 10.0


@dataclass
class GirsanovAccumulator:
    """Per-path running integrals; ``log_weight = stoch_int - quad_var``."""

    stoch_int: Array
    quad_var: Array

    @classmethod
    def zeros(cls, n: int) -> "GirsanovAccumulator":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def log_weight(self) -> Array:
        return self.stoch_int - self.quad_var

    @property
    def weight(self) -> Array:
        return np.exp(self.log_weight)

    def add(self, rows, w: Array, dw: Array, dt: float) -> None:
        """``w = sigma^-1 Z`` at the left endpoint, ``dw`` the shared increment."""
        self.stoch_int[rows] += np.sum(w * dw, axis=-1) / _SQRT2
        self.quad_var[rows] += 0.25 * np.sum(w * w, axis=-1) * dt

    @classmethod
    def concat(cls, parts: list["GirsanovAccumulator"]) -> "GirsanovAccumulator":
        return cls(np.concatenate([p.stoch_int for p in parts]),
                   np.concatenate([p.quad_var for p in parts]))


def accumulate_logweight(acc: GirsanovAccumulator, z_eval: Array,
                         sigma_inv: Array, dW: Array, dt: float,
                         rows=slice(None)) -> GirsanovAccumulator:
    """One Euler increment of the weight integrals for a batch of paths."""
    z_eval = np.atleast_2d(np.asarray(z_eval, dtype=float))
    sigma_inv = np.asarray(sigma_inv, dtype=float)
    if sigma_inv.ndim == 2:
        w = z_eval @ sigma_inv.T
    else:
        w = np.einsum("nij,nj->ni", sigma_inv, z_eval)
    acc.add(rows, w, np.atleast_2d(dW), dt)
    return acc


# ----------------------------------------------------------------------
# estimators


@dataclass
class SemigroupEstimate:
    estimate: float
    std_error: float
    ess: float
    n_paths: int
    warnings: list[str] = field(default_factory=list)


def effective_sample_size(w: Array) -> float:
    """``sum(w) / max(w)``."""
    w = np.asarray(w, dtype=float)
    m = w.max(initial=0.0)
    return float(math.fsum(w) / m) if m > 0 else 0.0


def _weights(ens) -> tuple[Array, list[str]]:
    if ens.girsanov is None:
        raise DomainError("ensemble carries no Girsanov weights")
    warns = []
    w = ens.girsanov.weight
    if ens.exploded.any():
        warns.append(f"{int(ens.exploded.sum())} reference paths exploded; "
                     "they contribute zero")
        w = np.where(ens.exploded, 0.0, w)
    return w, warns


def _check_common_start(ens) -> None:
    if ens.start is not None and ens.n_paths > 1:
        if not np.all(ens.start == ens.start[0]):
            raise DomainError("weighted semigroup needs a common start point")


def weighted_semigroup(ens, f: Callable[[Array], Array],
                       horizon: float | None = None) -> SemigroupEstimate:
    """Estimate ``P_t f(x) = E[f(X_t) R_t]`` from reference paths started at x.

    ``horizon`` is the certified Novikov horizon; running past it is allowed
    but flagged.
    """
    _check_common_start(ens)
    w, warns = _weights(ens)
    fx = np.asarray(f(np.where(ens.exploded[:, None], 0.0, ens.final)),
                    dtype=float).reshape(-1)
    y = np.where(ens.exploded, 0.0, fx * w)
    n = y.size
    est = math.fsum(y) / n
    se = float(np.std(y, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    ess = effective_sample_size(w)
    if ess < MIN_ESS:
        warns.append(f"degenerate weights: effective sample size {ess:.3g}")
    if horizon is not None and ens.t_final > horizon * (1 + 1e-12):
        warns.append(f"t = {ens.t_final} is beyond the certified horizon "
                     f"{horizon}")
    return SemigroupEstimate(est, se, ess, n, warns)


@dataclass
class WeightedMoments:
    mean: Array
    mean_se: Array
    var: Array
    var_se: Array
    ess: float


def weighted_moments(ens) -> WeightedMoments:
    """Per-coordinate mean and variance of the reweighted law, with
    delta-method standard errors."""
    w, _ = _weights(ens)
    x = np.where(ens.exploded[:, None], 0.0, ens.final)
    n = w.size
    a = x * w[:, None]
    b = x * x * w[:, None]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    var = mb - ma * ma
    ca = a - ma
    cb = b - mb
    s_aa = np.mean(ca * ca, axis=0)
    s_bb = np.mean(cb * cb, axis=0)
    s_ab = np.mean(ca * cb, axis=0)
    # grad of (b - a^2) is (-2a, 1)
    v_var = 4 * ma * ma * s_aa - 4 * ma * s_ab + s_bb
    return WeightedMoments(ma, np.sqrt(s_aa / n), var,
                           np.sqrt(np.maximum(v_var, 0) / n),
                           effective_sample_size(w))


def martingale_check(ens) -> tuple[float, float]:
    """(mean of R_t, its standard error)."""
    w, _ = _weights(ens)
    return math.fsum(w) / w.size, float(np.std(w, ddof=1) / math.sqrt(w.size))


def novikov_empirical(ens, gamma: float, ref: GaussianReference, x,
                      lam: float, exp_moment: float) -> CertificateReport:
    """Compare ``E exp[gamma int_0^t |sigma^-1 Z|^2 ds]`` with the closed-form
    bound Lambda(t, x, gamma) computed from ``exp_moment = mu0(e^{lam |Z|^2})``.

    PASS iff estimate + 3 SE <= Lambda. ``details['certified_violation']`` is
    set when estimate - 3 SE > Lambda.
    """
    if ens.girsanov is None:
        raise DomainError("ensemble carries no Girsanov accumulator")
    t = ens.t_final
    vals = np.exp(4.0 * gamma * ens.girsanov.quad_var)
    n = vals.size
    est = math.fsum(vals) / n
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    details = {"t": t, "gamma": gamma, "lambda": lam, "window": lam / (2 * gamma),
               "certified_violation": False, "outside_window": False}
    try:
        bound = novikov_lambda(ref, x, t, gamma, lam, exp_moment)
    except HorizonExceededError as exc:
        details["outside_window"] = True
        return CertificateReport("novikov", est, math.nan, Verdict.INCONCLUSIVE,
                                 se, details, [str(exc)])
    details["certified_violation"] = bool(est - 3 * se > bound)
    verdict = Verdict.PASS if est + 3 * se <= bound else Verdict.FAIL
    return CertificateReport("novikov", est, bound, verdict, se, details)


# ----------------------------------------------------------------------
# windowed reweighting


@dataclass
class WindowedEstimate:
    estimate: float
    std_error: float
    windows: int
    ess_per_window: list[float]
    warnings: list[str] = field(default_factory=list)


def _systematic_resample(w: Array, u: float) -> Array:
    n = w.size
    c = np.cumsum(w / w.sum())
    c[-1] = 1.0
    return np.searchsorted(c, (np.arange(n) + u) / n, side="left")


def windowed_semigroup(model, drift, cfg, x, n_paths: int,
                       f: Callable[[Array], Array], window: float
                       ) -> WindowedEstimate:
    """``P_t f(x)`` for ``t = cfg.t_max`` longer than the certified window.

    Weights restart every ``window`` time units; paths are resampled in
    proportion to their window weight and the mean weights multiply, which
    is the Markov chaining ``P_{s+u} = P_s P_u``.
    """
    from .simulate import simulate_ensemble, with_config

    steps_w = int(round(window / cfg.dt))
    if steps_w < 1:
        raise DomainError("window shorter than dt")
    total = cfg.n_steps
    state = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, model.dim)).copy()
    log_norm = 0.0
    ess_list, warns = [], []
    done, k = 0, 0
    while True:
        m = min(steps_w, total - done)
        sub = with_config(cfg, t_max=m * cfg.dt, record_stride=0)
        ens = simulate_ensemble(model, drift, sub, state, n_paths, girsanov=True,
                                start_step=done)
        w = np.where(ens.exploded, 0.0, ens.girsanov.weight)
        ess_list.append(effective_sample_size(w))
        done += m
        k += 1
        if done >= total:
            fx = np.asarray(f(ens.final), dtype=float).reshape(-1)
            y = fx * w
            est = math.exp(log_norm) * math.fsum(y) / n_paths
            se = math.exp(log_norm) * float(np.std(y, ddof=1) / math.sqrt(n_paths))
            break
        mean_w = math.fsum(w) / n_paths
        if mean_w <= 0:
            raise DomainError("all weights vanished")
        log_norm += math.log(mean_w)
        u = float(rng.uniforms(cfg.seed, [k], rng.AUX, 0, 1, 1)[0, 0, 0])
        state = ens.final[_systematic_resample(w, u)]
    if min(ess_list) < MIN_ESS:
        warns.append("degenerate weights in at least one window")
    warns.append("standard error ignores resampling noise of earlier windows")
    return WindowedEstimate(est, se, k, ess_list, warns)


def continuity_scan(model, drift, cfg, points, f: Callable[[Array], Array],
                    n_paths: int) -> list[SemigroupEstimate]:
    """Weighted ``P_t f(x)`` along a list of start points.

    Every point reuses the same noise (common random numbers), so the
    returned curve shows the continuity of ``x -> P_t f(x)`` without the
    jitter of independent runs. Qualitative only: no certificate.
    """
    from .simulate import simulate_ensemble

    out = []
    for x in points:
        ens = simulate_ensemble(model, drift, cfg, np.atleast_1d(x), n_paths,
                                girsanov=True)
        out.append(weighted_semigroup(ens, f))
    return out
