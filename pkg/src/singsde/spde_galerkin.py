"""Spectral Galerkin truncation of the semi-linear SPDE

    dX = (-A X + Z(X)) dt + sqrt(2) dW

on the eigenbasis of A. Level n keeps the first n modes and replaces Z by
its tail average ``Z_n(x) = pi_n E[Z(x, Y)]``, with Y drawn from the
Gaussian reference on the dropped modes. The stiff linear part is
integrated exactly per mode.

Every mode draws its noise from its own stream (mode 1 uses the ordinary
Brownian stream), so under a shared seed the common modes of two levels
see the same increments, and a single mode reproduces the exact OU scheme
of ``simulate`` bit for bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .gaussian_reference import GaussianReference
from .girsanov import GirsanovAccumulator
from .integrability import MomentEstimate, check_H3_and_EG
from .report import (CertificateReport, ConditionFailedError, DomainError,
                     PreconditionError, Verdict)
from .simulate import (SimConfig, TrajectoryEnsemble, _Stepper,
                       ou_step_coefficients)

Array = np.ndarray
_MODE_STREAM = 1024
DEFAULT_TAIL_SAMPLES = 256
DEFAULT_EXTRA_MODES = 16


def mode_stream(i: int) -> int:
    """Noise stream of mode ``i`` (0-based)."""
    return rng.BROWNIAN if i == 0 else _MODE_STREAM + i


# ----------------------------------------------------------------------
# spectrum


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalues of A: ``power`` (``lambda_i = i^s``) or an explicit list."""

    law: str
    n_modes: int
    theta: float = 0.5
    s: float | None = None
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.law not in ("power", "explicit"):
            raise DomainError(f"unknown spectrum law {self.law!r}")
        if self.law == "power" and (self.s is None or self.s <= 0):
            raise DomainError("power law needs an exponent s > 0")
        if self.law == "explicit" and len(self.values) < self.n_modes:
            raise DomainError("explicit spectrum shorter than n_modes")
        if self.n_modes < 1:
            raise DomainError("n_modes must be >= 1")

    @classmethod
    def power(cls, s: float, n_modes: int, theta: float = 0.5) -> "SpectrumSpec":
        return cls("power", int(n_modes), theta, s=float(s))

    @classmethod
    def explicit(cls, values, theta: float = 0.5) -> "SpectrumSpec":
        vals = tuple(float(v) for v in values)
        return cls("explicit", len(vals), theta, values=vals)

    @classmethod
    def parse(cls, text: str, theta: float = 0.5) -> "SpectrumSpec":
        """``power:<s>,<n>`` or ``explicit:[l1, l2, ...]``."""
        text = text.strip()
        if text.startswith("power:"):
            try:
                s, n = text[6:].split(",")
                return cls.power(float(s), int(n), theta)
            except ValueError as exc:
                raise DomainError(f"cannot parse spectrum {text!r}") from exc
        if text.startswith("explicit:"):
            body = text[9:].strip().strip("[]")
            try:
                vals = [float(v) for v in body.replace(",", " ").split()]
            except ValueError as exc:
                raise DomainError(f"cannot parse spectrum {text!r}") from exc
            return cls.explicit(vals, theta)
        raise DomainError(f"cannot parse spectrum {text!r}")

    @property
    def max_modes(self) -> int | None:
        """Number of available eigenvalues (None: unbounded)."""
        return None if self.law == "power" else len(self.values)

    def eigenvalues(self, n: int) -> Array:
        if self.law == "power":
            return np.arange(1, n + 1, dtype=float) ** self.s
        if n > len(self.values):
            raise DomainError(f"only {len(self.values)} eigenvalues declared")
        return np.asarray(self.values[:n], dtype=float)

    def reference(self, n: int | None = None) -> GaussianReference:
        n = self.n_modes if n is None else n
        tail = self.s if self.law == "power" else None
        return GaussianReference(self.eigenvalues(n), theta=self.theta,
                                 tail_exponent=tail)

    def certificate(self) -> CertificateReport:
        return check_H3_and_EG(self.reference(), self.theta)

    def require(self, h3: bool = False) -> CertificateReport:
        """Raise unless (EG), and (H3) when ``h3``, are verified."""
        cert = self.certificate()
        if not cert.details["EG"]:
            raise PreconditionError("sum of 1/lambda_i diverges; the truncated "
                                    "dynamics have no trace-class limit")
        if h3 and not cert.details["H3"]:
            raise PreconditionError(f"sum of lambda_i^-theta diverges for "
                                    f"theta = {self.theta}")
        return cert


# ----------------------------------------------------------------------
# tail-averaged drift


@dataclass
class TruncatedDrift:
    """Drift ``base_z`` on the full space, evaluated on (batch, N) arrays.

    ``depends_on`` is the number of leading coordinates ``base_z`` reads
    (None: all of them). At a level n >= depends_on the projection is exact
    and no tail sampling happens. ``bound`` is sup |Z| when known.
    """

    base_z: Callable[[Array], Array]
    depends_on: int | None = None
    tail_samples: int = DEFAULT_TAIL_SAMPLES
    extra_modes: int = DEFAULT_EXTRA_MODES
    seed: int = 0
    bound: float | None = None
    name: str = "drift"
    cache: dict = field(default_factory=dict, repr=False)

    def exact_at(self, n: int) -> bool:
        return self.depends_on is not None and self.depends_on <= n

    def tail_width(self, n: int, available: int | None = None) -> int:
        w = self.extra_modes if self.depends_on is None else \
            max(0, min(self.depends_on - n, self.extra_modes))
        if available is not None:
            w = min(w, max(0, available - n))
        return w

    def tail_normals(self, width: int) -> Array:
        """Fixed (tail_samples, width) standard normals; mode j of the tail
        is column j whatever the width."""
        key = ("tail", width)
        if key not in self.cache:
            paths = np.arange(self.tail_samples, dtype=np.uint64)
            self.cache[key] = rng.normals(self.seed, paths, rng.TAIL, 0, 1,
                                          width)[0]
        return self.cache[key]

    # shipped drifts ------------------------------------------------------

    @classmethod
    def zero(cls) -> "TruncatedDrift":
        return cls(lambda x: np.zeros_like(x), depends_on=0, bound=0.0,
                   name="zero")

    @classmethod
    def tanh(cls, modes: int = 4, scale: float = 1.0) -> "TruncatedDrift":
        """``Z_i(x) = scale tanh(x_i)`` for the first ``modes`` coordinates."""

        def z(x):
            out = np.zeros_like(x)
            k = min(modes, x.shape[-1])
            out[..., :k] = scale * np.tanh(x[..., :k])
            return out

        return cls(z, depends_on=modes, bound=abs(scale) * math.sqrt(modes),
                   name=f"tanh:{scale},{modes}")

    @classmethod
    def tanh_coupled(cls, scale: float = 1.0, **kw) -> "TruncatedDrift":
        """``Z_1(x) = scale tanh(sum_j x_j / j)``, other components 0.

        Reads every coordinate, so each level needs the tail average.
        """

        def z(x):
            w = 1.0 / np.arange(1, x.shape[-1] + 1)
            out = np.zeros_like(x)
            out[..., 0] = scale * np.tanh(x @ w)
            return out

        return cls(z, depends_on=None, bound=abs(scale),
                   name=f"tanh-coupled:{scale}", **kw)

    @classmethod
    def sin_pair(cls, **kw) -> "TruncatedDrift":
        """``Z(x) = (sin(x_1 + x_2), 0, ...)``."""

        def z(x):
            out = np.zeros_like(x)
            out[..., 0] = np.sin(x[..., 0] + x[..., 1])
            return out

        return cls(z, depends_on=2, bound=1.0, name="sin-pair", **kw)

    @classmethod
    def linear_mode1(cls, c: float) -> "TruncatedDrift":
        """``Z(x) = c x_1 e_1``."""

        def z(x):
            out = np.zeros_like(x)
            out[..., 0] = c * x[..., 0]
            return out

        return cls(z, depends_on=1, name=f"linear-mode1:{c}")

    @classmethod
    def parse(cls, text: str) -> "TruncatedDrift":
        """``zero``, ``tanh[:scale[,modes]]``, ``tanh-coupled[:scale]``,
        ``sin-pair`` or ``linear-mode1:c``."""
        name, _, arg = text.strip().partition(":")
        args = [float(a) for a in arg.split(",") if a.strip()]
        try:
            if name == "zero":
                return cls.zero()
            if name == "tanh":
                scale = args[0] if args else 1.0
                modes = int(args[1]) if len(args) > 1 else 4
                return cls.tanh(modes, scale)
            if name == "tanh-coupled":
                return cls.tanh_coupled(args[0] if args else 1.0)
            if name == "sin-pair":
                return cls.sin_pair()
            if name == "linear-mode1":
                return cls.linear_mode1(args[0])
        except IndexError as exc:
            raise DomainError(f"missing drift parameter in {text!r}") from exc
        raise DomainError(f"unknown SPDE drift {text!r}")


@dataclass
class ProjectedDrift:
    value: Array
    std_error: Array
    exact: bool


def project_drift(td: TruncatedDrift, ref: GaussianReference | SpectrumSpec,
                  x) -> ProjectedDrift:
    """``Z_n(x)`` for points x of shape (n,) or (batch, n).

    The tail coordinates are drawn from ``N(0, 1/lambda_i)`` for the next
    ``extra_modes`` modes (fewer if the reference has fewer eigenvalues).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    p, n = xb.shape
    if td.exact_at(n):
        v = td.base_z(xb)[:, :n]
        out = ProjectedDrift(v, np.zeros_like(v), True)
    else:
        if isinstance(ref, SpectrumSpec):
            avail = ref.max_modes
            lam_all = None
        else:
            avail = ref.dim
            lam_all = ref.spectrum
        w = td.tail_width(n, avail)
        if w == 0:
            v = td.base_z(xb)[:, :n]
            out = ProjectedDrift(v, np.zeros_like(v), False)
        else:
            lam = (ref.eigenvalues(n + w) if lam_all is None
                   else lam_all[:n + w])[n:]
            y = td.tail_normals(w) / np.sqrt(lam)
            m = y.shape[0]
            full = np.empty((p, m, n + w))
            full[:, :, :n] = xb[:, None, :]
            full[:, :, n:] = y[None, :, :]
            zv = td.base_z(full.reshape(p * m, n + w))[:, :n].reshape(p, m, n)
            se = zv.std(axis=1, ddof=1) / math.sqrt(m) if m > 1 else \
                np.full((p, n), np.inf)
            out = ProjectedDrift(zv.mean(axis=1), se, False)
    if single:
        return ProjectedDrift(out.value[0], out.std_error[0], out.exact)
    return out


# ----------------------------------------------------------------------
# simulation


class _Ladder(_Stepper):
    """Reuses the explosion-ladder bookkeeping of the finite-dim stepper."""

    def __init__(self, cfg: SimConfig, path_ids: Array):
        self.cfg = cfg
        self.path_ids = path_ids
        self.radii = np.asarray(cfg.explosion_radii)


def _mode_noise(seed: int, path_ids: Array, n: int, start: int, m: int) -> Array:
    """(m, paths, 2n): columns [:n] drive the increments, [n:] the remainder."""
    out = np.empty((m, path_ids.size, 2 * n))
    for i in range(n):
        xi = rng.normals(seed, path_ids, mode_stream(i), start, m, 2)
        out[..., i] = xi[..., 0]
        out[..., n + i] = xi[..., 1]
    return out


def _run_truncated(lam, zn, cfg, girsanov, path_ids, x_init, start_step):
    n_p = path_ids.size
    n = lam.size
    decay, c1, c2 = ou_step_coefficients(lam, cfg.dt)
    gain = -np.expm1(-lam * cfg.dt) / lam
    sqrt2 = math.sqrt(2.0) if cfg.noise else 0.0
    sqrt_dt = math.sqrt(cfg.dt)
    ladder = _Ladder(cfg, path_ids)
    x = np.array(x_init, dtype=float, copy=True)
    exits = np.full((n_p, len(cfg.explosion_radii)), np.inf)
    exploded = np.zeros(n_p, dtype=bool)
    alive = np.ones(n_p, dtype=bool)
    diag: list[str] = []
    acc = GirsanovAccumulator.zeros(n_p) if girsanov else None
    ladder._commit(x, np.arange(n_p), x.copy(), 0.0, exits, exploded, alive, diag)
    recs, rec_t = [], []
    n_steps = cfg.n_steps
    for c0 in range(0, n_steps, cfg.chunk_steps):
        m = min(cfg.chunk_steps, n_steps - c0)
        xi = _mode_noise(cfg.seed, path_ids, n, start_step + c0, m)
        for k in range(m):
            s = c0 + k
            idx = np.flatnonzero(alive)
            if idx.size:
                xs = x[idx]
                xi1, xi2 = xi[k, idx, :n], xi[k, idx, n:]
                z = zn(xs)
                if acc is not None:
                    acc.add(idx, z, sqrt_dt * xi1, cfg.dt)
                    z = 0.0
                conv = c1 * xi1 + c2 * xi2
                new = decay * xs + z * gain + sqrt2 * conv
                ladder._commit(x, idx, new, (s + 1) * cfg.dt, exits, exploded,
                               alive, diag)
            if cfg.record_stride and (s + 1) % cfg.record_stride == 0:
                t_rec = (s + 1) * cfg.dt
                if t_rec >= cfg.record_from - 1e-12:
                    snap = x.copy()
                    snap[exploded] = np.nan
                    recs.append(snap)
                    rec_t.append(t_rec)
    records = np.stack(recs) if recs else None
    return x, exploded, exits, acc, records, np.array(rec_t), diag


def truncated_initial(x0, lam: Array, n_paths: int, seed: int,
                      path_ids: Array) -> Array:
    """``"mu0"`` (exact Gaussian on the kept modes), a point or an array.

    Mode i of the ``mu0`` draw is the i-th value of the INITIAL stream, so
    common modes start equal across levels.
    """
    n = lam.size
    if isinstance(x0, str):
        if x0 != "mu0":
            raise DomainError(f"unknown initial law {x0!r}")
        g = rng.normals(seed, path_ids, rng.INITIAL, 0, 1, n)[0]
        return g / np.sqrt(lam)
    arr = np.asarray(x0, dtype=float)
    if arr.ndim == 1:
        if arr.size < n:
            raise DomainError("x0 has fewer coordinates than modes")
        return np.broadcast_to(arr[:n], (n_paths, n)).copy()
    if arr.shape[0] != n_paths or arr.shape[1] < n:
        raise DomainError("x0 array must have shape (n_paths, >= n)")
    return arr[:, :n].copy()


def level_drift(spec: SpectrumSpec, td: TruncatedDrift, n: int
                ) -> Callable[[Array], Array]:
    """The projected drift used by the level-n dynamics."""
    if td.exact_at(n):
        return lambda x: td.base_z(x)[:, :n]
    return lambda x: project_drift(td, spec, x).value


def simulate_truncated(spec: SpectrumSpec, td: TruncatedDrift, cfg: SimConfig,
                       x0="mu0", n_paths: int = 1000, n: int | None = None,
                       girsanov: bool = False, path_offset: int = 0,
                       start_step: int = 0) -> TrajectoryEnsemble:
    """Exponential-integrator ensemble of the level-n Galerkin system.

    Per mode and step of size h:
    ``X' = e^{-l h} X + Z_n(X) (1 - e^{-l h}) / l + sqrt(2) int e^{-l(h-s)} dW``.
    With ``girsanov=True`` the drift is dropped from the dynamics and the
    weight integrals are accumulated instead (sigma is the identity).
    """
    spec.require(h3=girsanov)
    n = spec.n_modes if n is None else int(n)
    if cfg.adaptive:
        raise DomainError("adaptive stepping does not apply to the exponential "
                          "integrator")
    if girsanov and not cfg.noise:
        raise DomainError("Girsanov weights need noise")
    lam = spec.eigenvalues(n)
    path_ids = np.arange(path_offset, path_offset + n_paths, dtype=np.uint64)
    x_init = truncated_initial(x0, lam, n_paths, cfg.seed, path_ids)
    zn = level_drift(spec, td, n)
    threads = max(1, int(cfg.threads))
    bounds = np.linspace(0, n_paths, min(threads, max(n_paths, 1)) + 1).astype(int)
    jobs = [(path_ids[a:b], x_init[a:b]) for a, b in zip(bounds, bounds[1:])
            if b > a]

    def run(job):
        return _run_truncated(lam, zn, cfg, girsanov, job[0], job[1], start_step)

    if len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    records = None
    rec_t = parts[0][5]
    if parts[0][4] is not None:
        records = np.concatenate([p[4] for p in parts], axis=1)
    return TrajectoryEnsemble(
        path_ids=path_ids, final=np.concatenate([p[0] for p in parts]),
        exploded=np.concatenate([p[1] for p in parts]),
        exit_times=np.concatenate([p[2] for p in parts]),
        radii=cfg.explosion_radii, t_final=cfg.n_steps * cfg.dt, config=cfg,
        record_times=rec_t, records=records,
        girsanov=GirsanovAccumulator.concat([p[3] for p in parts])
        if girsanov else None,
        diagnostics=[m for p in parts for m in p[6]], start=x_init)


# ----------------------------------------------------------------------
# cross-level consistency


@dataclass
class LevelMoments:
    level: int
    mean: Array
    mean_se: Array
    var: Array
    var_se: Array
    n_paths: int
    exploded: int


def stationary_mode_moments(ens: TrajectoryEnsemble, k: int, burn_in: float
                            ) -> LevelMoments:
    """Mean and variance of the first k modes over records after
    ``burn_in``; errors from the spread of per-path time averages."""
    if ens.records is None:
        raise DomainError("ensemble has no records")
    sel = ens.record_times >= burn_in - 1e-12
    if not sel.any():
        raise DomainError("no records after burn-in")
    ok = ~ens.exploded
    r = ens.records[sel][:, ok, :k]
    a = r.mean(axis=0)
    b = (r * r).mean(axis=0)
    m = a.shape[0]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    var = mb - ma * ma
    ca, cb = a - ma, b - mb
    s_aa = np.mean(ca * ca, axis=0)
    s_bb = np.mean(cb * cb, axis=0)
    s_ab = np.mean(ca * cb, axis=0)
    v_var = 4 * ma * ma * s_aa - 4 * ma * s_ab + s_bb
    return LevelMoments(ens.final.shape[1], ma,
                        np.sqrt(s_aa / m), var, np.sqrt(np.maximum(v_var, 0) / m),
                        m, int((~ok).sum()))


def invariant_consistency_study(spec: SpectrumSpec, td: TruncatedDrift,
                                levels, cfg: SimConfig, n_paths: int = 2000,
                                burn_in: float = 5.0, x0="mu0",
                                n_sigma: float = 3.0) -> CertificateReport:
    """Stationary mean and variance of the first ``min(n1, 4)`` modes at
    each level; PASS iff consecutive levels agree within ``n_sigma``
    combined standard errors and no path exploded."""
    levels = sorted(int(v) for v in levels)
    if len(levels) < 2 or levels[0] < 1:
        raise DomainError("need at least two positive levels")
    k = min(levels[0], 4)
    if cfg.record_stride == 0:
        raise DomainError("the study needs recorded states (record_stride > 0)")
    moments: list[LevelMoments] = []
    warns: list[str] = []
    for n in levels:
        ens = simulate_truncated(spec, td, cfg, x0, n_paths, n=n)
        if ens.exploded.any():
            warns.extend(ens.diagnostics[:5])
            return CertificateReport(
                "spde-consistency", math.inf, 0.0, Verdict.FAIL, 0.0,
                {"levels": levels, "exploded_level": n,
                 "exploded": int(ens.exploded.sum())}, warns)
        moments.append(stationary_mode_moments(ens, k, burn_in))
    worst = 0.0
    rows = []
    for lo, hi in zip(moments, moments[1:]):
        for what in ("mean", "var"):
            d = np.abs(getattr(hi, what) - getattr(lo, what))
            se = np.hypot(getattr(hi, what + "_se"), getattr(lo, what + "_se"))
            z = np.where(se > 0, d / np.where(se > 0, se, 1.0),
                         np.where(d > 0, np.inf, 0.0))
            worst = max(worst, float(z.max()))
            for i in range(k):
                rows.append({"levels": f"{lo.level}-{hi.level}", "mode": i + 1,
                             "stat": what, "diff": float(d[i]),
                             "combined_se": float(se[i]), "z": float(z[i])})
    verdict = Verdict.PASS if worst <= n_sigma else Verdict.FAIL
    return CertificateReport(
        "spde-consistency", worst, n_sigma, verdict, 0.0,
        {"levels": levels, "k": k, "moments": moments, "comparisons": rows},
        warns)


# ----------------------------------------------------------------------
# Girsanov horizon and drift-moment trend


def gaussian_linear_mode1_moment(spec: SpectrumSpec, c: float, lam: float
                                 ) -> float:
    """``mu0(exp(lam |c x_1|^2)) = (1 - 2 lam c^2 / lambda_1)^{-1/2}``
    (inf when the exponent reaches the boundary)."""
    l1 = float(spec.eigenvalues(1)[0])
    q = 1.0 - 2.0 * lam * c * c / l1
    # rounding at the boundary lam = l1 / (2 c^2) must not read as finite
    return math.inf if q <= 1e-12 else q ** -0.5


def spde_girsanov_horizon(spec: SpectrumSpec, lam: float | None = None,
                          moment=None, drift_bound: float | None = None,
                          cap: float | None = None) -> float:
    """Horizon ``t0 = 2 lam`` backed by a finite ``mu0(e^{lam |Z|^2})``.

    ``moment`` is the certificate: a number, a MomentEstimate or a
    CertificateReport. A bounded drift (``drift_bound``) makes every lam
    admissible; with ``lam`` None the horizon is then ``cap`` (inf if no
    cap). ``cap`` always clips the result.
    """
    spec.require(h3=True)
    cap_v = math.inf if cap is None else float(cap)
    if drift_bound is not None and math.isfinite(drift_bound):
        if lam is None:
            return cap_v
        return min(2.0 * lam, cap_v)
    if lam is None or not lam > 0:
        raise DomainError("lam must be > 0")
    if moment is None:
        raise ConditionFailedError("no exponential-moment certificate supplied")
    if isinstance(moment, CertificateReport):
        ok = moment.verdict in (Verdict.HOLDS, Verdict.PASS) and \
            math.isfinite(moment.lhs)
    elif isinstance(moment, MomentEstimate):
        ok = math.isfinite(moment.value) and not getattr(moment, "diverged", False)
    else:
        ok = math.isfinite(float(moment))
    if not ok:
        raise ConditionFailedError("exponential-moment certificate diverged")
    return min(2.0 * lam, cap_v)


@dataclass
class MomentTrend:
    levels: list[int]
    values: list[float]
    std_errors: list[float]
    nonexplosive: bool
    warnings: list[str] = field(default_factory=list)


def drift_moment_trend(spec: SpectrumSpec, td: TruncatedDrift, lam: float,
                       levels=(4, 8, 16), n_samples: int = 20000,
                       seed: int = 0, n_sigma: float = 3.0) -> MomentTrend:
    """``mu0^{(n)}(exp(lam |Z_n|^2))`` per level from exact Gaussian samples.

    Non-explosive means finite values that do not increase across levels
    beyond ``n_sigma`` combined standard errors. Each level is a fixed-n
    estimate; nothing is claimed about the limit.
    """
    levels = sorted(int(v) for v in levels)
    paths = np.arange(n_samples, dtype=np.uint64)
    vals, ses = [], []
    for n in levels:
        lam_n = spec.eigenvalues(n)
        x = rng.normals(seed, paths, rng.AUX, 0, 1, n)[0] / np.sqrt(lam_n)
        zn = level_drift(spec, td, n)
        out = np.empty(n_samples)
        for a in range(0, n_samples, 2048):
            z = zn(x[a:a + 2048])
            out[a:a + 2048] = np.exp(lam * np.sum(z * z, axis=-1))
        vals.append(float(out.mean()))
        ses.append(float(out.std(ddof=1) / math.sqrt(n_samples)))
    warns = []
    ok = all(math.isfinite(v) for v in vals)
    if td.bound is not None:
        cap = math.exp(lam * td.bound ** 2)
        if any(v - n_sigma * s > cap for v, s in zip(vals, ses)):
            ok = False
            warns.append(f"moment exceeds the a priori bound {cap:.6g}")
    monotone = all(abs(b - a) <= n_sigma * math.hypot(sa, sb) or b >= a
                   for a, b, sa, sb in zip(vals, vals[1:], ses, ses[1:])) or \
        all(abs(b - a) <= n_sigma * math.hypot(sa, sb) or b <= a
            for a, b, sa, sb in zip(vals, vals[1:], ses, ses[1:]))
    if not monotone:
        warns.append("trend across levels is not monotone")
    return MomentTrend(levels, vals, ses, ok and monotone, warns)
