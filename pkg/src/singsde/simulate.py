"""Path simulation of the reference and perturbed SDEs.

Perturbed dynamics: ``dX = (Z + Z0)(X) dt + sqrt(2) sigma(X) dW``. With
``girsanov=True`` the paths follow the reference dynamics (Z dropped) and a
per-path accumulator integrates the Girsanov log-weight against the very
same Brownian increments.

Paths are independent: every random number is keyed by (seed, path index,
step), so results do not depend on ``threads`` or on how paths are sharded.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng
from .girsanov import GirsanovAccumulator
from .model import DiffusionModel, DriftSpec
from .report import DomainError, SingSDEError

Array = np.ndarray

SCHEMES = ("euler_maruyama", "tamed_euler", "exact_ou_splitting")
MAX_REFINE = 10
_SUBSTEP_STREAM = 16


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-2
    t_max: float = 1.0
    explosion_radii: tuple[float, ...] = (10.0, 100.0, 1000.0)
    scheme: str | None = None
    adaptive: bool = False
    seed: int = 0
    noise: bool = True
    record_stride: int = 0          # store states every k steps (0: never)
    record_from: float = 0.0        # earliest time stored
    threads: int = 1
    chunk_steps: int = 256

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be > 0")
        if self.t_max < 0:
            raise DomainError("t_max must be >= 0")
        radii = tuple(float(r) for r in self.explosion_radii)
        if not radii or any(b <= a for a, b in zip(radii, radii[1:])):
            raise DomainError("explosion radii must be strictly increasing")
        object.__setattr__(self, "explosion_radii", radii)
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class TrajectoryEnsemble:
    path_ids: Array
    final: Array
    exploded: Array
    exit_times: Array               # (n_paths, n_radii); inf = never exited
    radii: tuple[float, ...]
    t_final: float
    config: SimConfig
    record_times: Array = field(default_factory=lambda: np.zeros(0))
    records: Array | None = None    # (n_records, n_paths, d)
    girsanov: GirsanovAccumulator | None = None
    diagnostics: list[str] = field(default_factory=list)
    start: Array | None = None
    integrals: Array | None = None  # (n_times, n_paths)

    @property
    def n_paths(self) -> int:
        return self.path_ids.size

    @property
    def dim(self) -> int:
        return self.final.shape[1]


# ----------------------------------------------------------------------
# scheme helpers


def ou_step_coefficients(a, h: float):
    """Exact joint step of ``dY = -a Y dt + dW`` over h.

    Returns ``(decay, c1, c2)`` such that with iid standard normals xi1, xi2
    the Brownian increment is ``sqrt(h) xi1`` and the stochastic convolution
    ``int_0^h e^{-a(h-s)} dW_s`` is ``c1 xi1 + c2 xi2``.
    """
    a = np.asarray(a, dtype=float)
    decay = np.exp(-a * h)
    cov = np.where(a > 0, -np.expm1(-a * h) / np.where(a > 0, a, 1.0), h)
    var = np.where(a > 0, -np.expm1(-2 * a * h) / np.where(a > 0, 2 * a, 1.0), h)
    c1 = cov / math.sqrt(h)
    c2 = np.sqrt(np.maximum(var - c1 * c1, 0.0))
    return decay, c1, c2


def _resolve_scheme(model: DiffusionModel, drift: DriftSpec, cfg: SimConfig) -> str:
    scheme = cfg.scheme
    if scheme is None:
        scheme = "tamed_euler" if drift.superlinear else "euler_maruyama"
    if scheme == "exact_ou_splitting":
        if model.lambda0 is None or model.sigma_kind not in ("identity", "scalar"):
            raise DomainError("exact_ou_splitting needs sigma = cI and quadratic V")
    return scheme


def _noise_width(scheme: str, d: int) -> int:
    return 2 * d if scheme == "exact_ou_splitting" else d


class _Stepper:
    """Advances one shard of paths; all state is per path."""

    def __init__(self, model, drift, cfg, scheme, girsanov, seed, path_ids):
        self.model = model
        self.drift = drift
        self.cfg = cfg
        self.scheme = scheme
        self.girsanov = girsanov
        self.seed = seed
        self.path_ids = path_ids
        self.d = model.dim
        self.sqrt2 = math.sqrt(2.0) if cfg.noise else 0.0
        self.radii = np.asarray(cfg.explosion_radii)
        if scheme == "exact_ou_splitting":
            c = model.sigma_scale
            self.ou_rate = c * c * model.lambda0
            self.ou_coef = ou_step_coefficients(self.ou_rate, cfg.dt)

    def dyn_drift(self, x: Array) -> tuple[Array, Array]:
        """(drift used by the dynamics, Z at x)."""
        z = self.drift.evaluate(x)
        if self.scheme == "exact_ou_splitting":
            base = np.zeros_like(x)
        else:
            base = self.model.z0(x)
        if self.girsanov:
            return base, z
        return base + z, z

    def accumulate(self, acc, idx, x, z, dw, h):
        acc.add(idx, self.model.solve_sigma(x, z), dw, h)

    def euler_like(self, x, b, dw, h, tamed):
        if tamed:
            nb = np.linalg.norm(b, axis=-1, keepdims=True)
            incr = b * h / (1.0 + h * nb)
        else:
            incr = b * h
        return x + incr + self.sqrt2 * self.model.apply_sigma(x, dw)

    def step(self, x, xi, step_idx, t, alive, acc, exits, exploded, diag):
        """One base step for the alive rows of x (in place)."""
        cfg = self.cfg
        dt = cfg.dt
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            return
        xs = x[idx]
        if self.scheme == "exact_ou_splitting":
            decay, c1, c2 = self.ou_coef
            xi1, xi2 = xi[idx, :self.d], xi[idx, self.d:]
            dw = math.sqrt(dt) * xi1
            b, z = self.dyn_drift(xs)
            if acc is not None:
                self.accumulate(acc, idx, xs, z, dw, dt)
            conv = c1 * xi1 + c2 * xi2
            noise = self.sqrt2 * self.model.sigma_scale * conv
            new = decay * xs + noise + b * dt
            self._commit(x, idx, new, t + dt, exits, exploded, alive, diag)
            return
        dw = math.sqrt(dt) * xi[idx]
        b, z = self.dyn_drift(xs)
        tamed = self.scheme == "tamed_euler"
        if cfg.adaptive:
            nb = np.linalg.norm(b, axis=-1)
            ratio = dt * nb * nb / 0.02     # substeps needed: 2^m >= ratio
            with np.errstate(divide="ignore"):
                m_req = np.where(ratio > 1.0, np.ceil(np.log2(ratio)), 0.0)
            m = np.minimum(m_req, MAX_REFINE).astype(int)
            plain = m == 0
        else:
            m = np.zeros(idx.size, dtype=int)
            plain = np.ones(idx.size, dtype=bool)
        if np.any(plain):
            sub = idx[plain]
            if acc is not None:
                self.accumulate(acc, sub, xs[plain], z[plain], dw[plain], dt)
            new = self.euler_like(xs[plain], b[plain], dw[plain], dt, tamed)
            self._commit(x, sub, new, t + dt, exits, exploded, alive, diag)
        for level in np.unique(m[~plain]):
            sel = m == level
            force_tame = tamed | (m_req[sel] > MAX_REFINE)
            self._refined(x, idx[sel], dw[sel], step_idx, t, int(level),
                          force_tame, acc, exits, exploded, alive, diag)

    def _refined(self, x, rows, dw, step_idx, t, level, tame, acc, exits,
                 exploded, alive, diag):
        k = 1 << level
        h = self.cfg.dt / k
        eta = rng.normals(self.seed, self.path_ids[rows], _SUBSTEP_STREAM + level,
                          step_idx, 1, self.d * k)[0].reshape(-1, k, self.d)
        eta *= math.sqrt(h)
        # Brownian bridge: substep increments summing to the base increment
        eta += (dw[:, None, :] - eta.sum(axis=1, keepdims=True)) / k
        tame = np.broadcast_to(np.asarray(tame), rows.shape)
        any_tame, all_tame = bool(tame.any()), bool(tame.all())
        sub = rows
        pos = np.arange(rows.size)
        xs = x[sub]
        for j in range(k):
            b, z = self.dyn_drift(xs)
            e = eta[pos, j]
            if acc is not None:
                self.accumulate(acc, sub, xs, z, e, h)
            if all_tame or not any_tame:
                new = self.euler_like(xs, b, e, h, all_tame)
            else:
                tm = tame[pos][:, None]
                new = np.where(tm, self.euler_like(xs, b, e, h, True),
                               self.euler_like(xs, b, e, h, False))
            if self._commit(x, sub, new, t + (j + 1) * h, exits, exploded,
                            alive, diag):
                keep = alive[sub]
                sub, pos = sub[keep], pos[keep]
                if sub.size == 0:
                    break
                xs = x[sub]
            else:
                xs = new

    def _commit(self, x, rows, new, t_new, exits, exploded, alive, diag):
        """Store new states; returns True if some row stopped or hit a
        non-finite value (the caller must then re-read x)."""
        r2 = np.einsum("ij,ij->i", new, new)
        if not np.isfinite(r2).all() or r2.max(initial=0.0) >= self.radii[0] ** 2:
            return self._commit_slow(x, rows, new, t_new, exits, exploded, alive,
                                     diag)
        x[rows] = new
        return False

    def _commit_slow(self, x, rows, new, t_new, exits, exploded, alive, diag):
        bad = ~np.all(np.isfinite(new), axis=-1)
        r = np.linalg.norm(np.where(bad[:, None], 0.0, new), axis=-1)
        r = np.where(bad, np.inf, r)
        if np.any(bad):
            for p in self.path_ids[rows[bad]]:
                diag.append(f"path {int(p)}: non-finite state at t={t_new:.6g}")
        crossed = (r[:, None] >= self.radii[None, :]) & np.isinf(exits[rows])
        if np.any(crossed):
            ex = exits[rows]
            ex[crossed] = t_new
            exits[rows] = ex
        top = r >= self.radii[-1]
        x[rows] = np.where(bad[:, None], x[rows], new)
        if np.any(top):
            exploded[rows[top]] = True
            alive[rows[top]] = False
        return True


def _run_shard(model, drift, cfg, scheme, girsanov, path_ids, x_init,
               start_step, integrand=None, snap_steps=()):
    n = path_ids.size
    d = model.dim
    st = _Stepper(model, drift, cfg, scheme, girsanov, cfg.seed, path_ids)
    streams = rng.PathStreams(cfg.seed, path_ids, _noise_width(scheme, d))
    x = np.array(x_init, dtype=float, copy=True)
    exits = np.full((n, len(cfg.explosion_radii)), np.inf)
    exploded = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    diag: list[str] = []
    acc = GirsanovAccumulator.zeros(n) if girsanov else None
    # initial exits (start outside a ladder radius)
    st._commit(x, np.arange(n), x.copy(), 0.0, exits, exploded, alive, diag)
    recs, rec_t = [], []
    running = np.zeros(n) if integrand is not None else None
    snaps = {}
    n_steps = cfg.n_steps
    for c0 in range(0, n_steps, cfg.chunk_steps):
        m = min(cfg.chunk_steps, n_steps - c0)
        xi = streams.block(start_step + c0, m)
        for k in range(m):
            s = c0 + k
            t = s * cfg.dt
            if running is not None:
                # left-point rule; exploded paths keep their frozen value
                running += np.where(alive, integrand(x), 0.0) * cfg.dt
            st.step(x, xi[k], start_step + s, t, alive, acc, exits, exploded,
                    diag)
            if running is not None and (s + 1) in snap_steps:
                snaps[s + 1] = running.copy()
            if cfg.record_stride and (s + 1) % cfg.record_stride == 0:
                t_rec = (s + 1) * cfg.dt
                if t_rec >= cfg.record_from - 1e-12:
                    snap = x.copy()
                    snap[exploded] = np.nan
                    recs.append(snap)
                    rec_t.append(t_rec)
        if not alive.any() and running is None:
            break
    records = np.stack(recs) if recs else None
    integ = None
    if running is not None:
        integ = np.stack([snaps.get(k, running) for k in snap_steps]) if snap_steps \
            else running[None, :]
    return x, exploded, exits, acc, records, np.array(rec_t), diag, integ


def initial_states(x0, model: DiffusionModel, n_paths: int, seed: int,
                   path_ids: Array) -> Array:
    """Resolve ``x0``: a point, an (n, d) array, ``"mu0"`` or a callable
    mapping per-path standard normals (n, d) to states."""
    d = model.dim
    if isinstance(x0, str):
        if x0 != "mu0":
            raise DomainError(f"unknown initial law {x0!r}")
        if model.lambda0 is None or model.sigma_kind not in ("identity", "scalar"):
            raise DomainError("mu0 sampling needs a quadratic potential")
        g = rng.normals(seed, path_ids, rng.INITIAL, 0, 1, d)[0]
        return g / math.sqrt(model.lambda0)
    if callable(x0):
        g = rng.normals(seed, path_ids, rng.INITIAL, 0, 1, d)[0]
        return np.asarray(x0(g), dtype=float)
    arr = np.asarray(x0, dtype=float)
    if arr.ndim == 1:
        if arr.size != d:
            raise DomainError("x0 dimension mismatch")
        return np.broadcast_to(arr, (n_paths, d)).copy()
    if arr.shape != (n_paths, d):
        raise DomainError("x0 array must have shape (n_paths, d)")
    return arr.copy()


def simulate_ensemble(model: DiffusionModel, drift: DriftSpec, cfg: SimConfig,
                      x0, n_paths: int, girsanov: bool = False,
                      path_offset: int = 0, start_step: int = 0,
                      integrand: Callable[[Array], Array] | None = None,
                      integrand_times: tuple[float, ...] = ()
                      ) -> TrajectoryEnsemble:
    """Simulate ``n_paths`` paths with ids ``path_offset + 0 .. n_paths-1``.

    ``start_step`` offsets the noise counters, so a continuation run from
    saved states draws fresh increments. With ``integrand`` F, every path
    also carries ``int_0^t F(X_s) ds`` (left-point rule), reported at
    ``integrand_times`` (default: the horizon) in ``ens.integrals``.
    """
    if drift.dim != model.dim:
        raise DomainError("drift and model dimensions differ")
    scheme = _resolve_scheme(model, drift, cfg)
    path_ids = np.arange(path_offset, path_offset + n_paths, dtype=np.uint64)
    x_init = initial_states(x0, model, n_paths, cfg.seed, path_ids)
    if cfg.noise is False and girsanov:
        raise DomainError("Girsanov weights need noise")
    threads = max(1, int(cfg.threads))
    bounds = np.linspace(0, n_paths, min(threads, max(n_paths, 1)) + 1).astype(int)
    jobs = [(path_ids[a:b], x_init[a:b]) for a, b in zip(bounds, bounds[1:])
            if b > a]

    snap_steps = tuple(int(round(tt / cfg.dt)) for tt in integrand_times)
    if any(k > cfg.n_steps or k < 1 for k in snap_steps):
        raise DomainError("integrand times must lie in (0, t_max]")

    def run(job):
        return _run_shard(model, drift, cfg, scheme, girsanov, job[0], job[1],
                          start_step, integrand, snap_steps)

    if len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    final = np.concatenate([p[0] for p in parts])
    exploded = np.concatenate([p[1] for p in parts])
    exits = np.concatenate([p[2] for p in parts])
    acc = None
    if girsanov:
        acc = GirsanovAccumulator.concat([p[3] for p in parts])
    records = None
    rec_t = parts[0][5]
    if parts[0][4] is not None:
        n_rec = min(p[4].shape[0] for p in parts)
        records = np.concatenate([p[4][:n_rec] for p in parts], axis=1)
        rec_t = rec_t[:n_rec]
    diag = [m for p in parts for m in p[6]]
    integrals = None
    if integrand is not None:
        integrals = np.concatenate([p[7] for p in parts], axis=1)
    return TrajectoryEnsemble(
        path_ids=path_ids, final=final, exploded=exploded, exit_times=exits,
        radii=cfg.explosion_radii, t_final=cfg.n_steps * cfg.dt, config=cfg,
        record_times=rec_t, records=records, girsanov=acc, diagnostics=diag,
        start=x_init, integrals=integrals)


# ----------------------------------------------------------------------
# ensemble statistics


@dataclass
class ExplosionEstimate:
    estimate: float
    std_error: float
    ladder_profile: list[float]
    T: float

    @property
    def numerically_non_explosive(self) -> bool:
        return self.estimate == 0.0 and all(
            b <= a for a, b in zip(self.ladder_profile, self.ladder_profile[1:]))


def explosion_probability(ens: TrajectoryEnsemble, T: float) -> ExplosionEstimate:
    """Fraction of paths leaving the top ladder radius by time T."""
    if T > ens.t_final + 1e-12 and not ens.exploded.all():
        raise DomainError("ensemble horizon is shorter than T")
    n = ens.n_paths
    prof = [float(np.count_nonzero(ens.exit_times[:, k] <= T)) / n
            for k in range(len(ens.radii))]
    p = prof[-1]
    return ExplosionEstimate(p, math.sqrt(p * (1 - p) / n), prof, T)


@dataclass
class OccupationMeasure:
    """Pooled post-burn-in states with equal weights; ``groups`` holds the
    path id of every sample (used for batch error bars)."""

    samples: Array
    weights: Array
    n_paths_used: int
    burn_in: float
    groups: Array | None = None

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_samples(cls, samples: Array, n_groups: int = 20) -> "OccupationMeasure":
        """Wrap iid samples; groups are assigned round-robin."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[0] == 1 and samples.shape[1] > 1:
            samples = samples.T
        n = samples.shape[0]
        return cls(samples, np.full(n, 1.0 / n), n, 0.0, np.arange(n) % n_groups)


class EmptyMeasureError(SingSDEError):
    code = "simulate.empty_measure"


def occupation_measure(ens: TrajectoryEnsemble, burn_in: float, stride: int = 1
                       ) -> OccupationMeasure:
    if ens.records is None:
        raise DomainError("ensemble has no stored states (record_stride = 0)")
    if burn_in >= ens.t_final:
        raise DomainError("burn_in must be below t_max")
    keep = ~ens.exploded
    if not keep.any():
        raise EmptyMeasureError("all paths exploded")
    sel = np.flatnonzero(ens.record_times >= burn_in - 1e-12)[::max(1, stride)]
    pts = ens.records[sel][:, keep, :].reshape(-1, ens.dim)
    ids = np.broadcast_to(ens.path_ids[keep], (sel.size, int(keep.sum()))).reshape(-1)
    fin = np.all(np.isfinite(pts), axis=1)
    pts, ids = pts[fin], ids[fin]
    if pts.size == 0:
        raise EmptyMeasureError("no stored states after burn-in")
    return OccupationMeasure(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]),
                             int(keep.sum()), burn_in, ids.astype(np.int64))


def coordinate_moments(samples: Array) -> tuple[Array, Array, Array, Array]:
    """Per-coordinate mean, variance and their standard errors (iid formula)."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    var = samples.var(axis=0, ddof=1)
    c = samples - mean
    m4 = np.mean(c ** 4, axis=0)
    return mean, var, np.sqrt(var / n), np.sqrt(np.maximum(m4 - var ** 2, 0) / n)


def running_variance(ens: TrajectoryEnsemble) -> tuple[Array, Array]:
    """Cross-path coordinate variance at every stored time."""
    if ens.records is None:
        raise DomainError("ensemble has no stored states")
    v = np.array([np.nanvar(r, axis=0, ddof=1).mean() for r in ens.records])
    return ens.record_times, v


def batch_means_se(series: Array, n_batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    series = np.asarray(series, dtype=float)
    m = series.size // n_batches
    if m < 1:
        return float("nan")
    b = series[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(b.std(ddof=1) / math.sqrt(n_batches))


def stationary_variance(ens: TrajectoryEnsemble, burn_in: float) -> tuple[float, float]:
    """Time- and path-averaged coordinate variance after burn-in with an SE
    from path-level batches (paths are independent)."""
    occ_sel = np.flatnonzero(ens.record_times >= burn_in - 1e-12)
    keep = ~ens.exploded
    rec = ens.records[occ_sel][:, keep, :]
    # per-path time averages of x^2, then mean over paths
    per_path = np.mean(rec * rec, axis=(0, 2))
    mean_sq = float(per_path.mean())
    m = float(np.mean(rec))
    var = mean_sq - m * m
    se = float(per_path.std(ddof=1) / math.sqrt(per_path.size))
    return var, se


def with_config(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw)
