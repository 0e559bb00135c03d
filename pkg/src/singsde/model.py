"""Diffusion geometry (sigma, V), the reference drift Z0 and drift specifications.

All fields evaluate on batches: points have shape ``(n, d)``, matrix fields
return ``(n, d, d)`` and vector fields ``(n, d)``. Single points of shape
``(d,)`` are accepted by the public helpers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.stats import qmc

from .report import DegenerateDiffusionError, DomainError, EvaluationError

Array = np.ndarray
MatrixField = Callable[[Array], Array]
ScalarField = Callable[[Array], Array]
VectorField = Callable[[Array], Array]


def _as_batch(x, dim: int) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != dim:
            raise DomainError(f"point has {x.size} coordinates, model has {dim}")
        return x[None, :], True
    return x, False


def fd_step(x: Array) -> Array:
    """Central-difference step, ``max(1e-5, 1e-7 |x|)`` per point."""
    return np.maximum(1e-5, 1e-7 * np.linalg.norm(x, axis=-1))


def fd_gradient(f: ScalarField, x: Array) -> Array:
    n, d = x.shape
    h = fd_step(x)
    out = np.empty((n, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        step = h[:, None] * e
        out[:, j] = (f(x + step) - f(x - step)) / (2.0 * h)
    return out


def fd_div_matrix(a: MatrixField, x: Array) -> Array:
    """``sum_j d_j a_ij`` by central differences."""
    n, d = x.shape
    h = fd_step(x)
    out = np.zeros((n, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        step = h[:, None] * e
        out += (a(x + step)[:, :, j] - a(x - step)[:, :, j]) / (2.0 * h[:, None])
    return out


@dataclass(frozen=True)
class DiffusionModel:
    """Diffusion matrix sigma and potential V for ``mu0(dx) = e^{-V} dx``.

    ``div_a`` and ``grad_potential`` are optional analytic derivatives; when
    missing, central finite differences are used. ``sigma_kind`` lets the
    simulator skip matrix algebra for identity/scalar/diagonal sigma, and
    ``lambda0`` marks ``V = c + lambda0 |x|^2 / 2`` (required by the exact
    OU splitting scheme).
    """

    dim: int
    sigma: MatrixField
    potential: ScalarField
    grad_potential: VectorField | None = None
    div_a: VectorField | None = None
    sigma_kind: str = "general"
    sigma_scale: float = 1.0
    lambda0: float | None = None
    name: str = "model"

    # constructors -----------------------------------------------------

    @classmethod
    def ou(cls, dim: int, lambda0: float = 1.0, sigma_scale: float = 1.0,
           const: float = 0.0) -> "DiffusionModel":
        """sigma = c I (c = sigma_scale), V = const + lambda0 |x|^2 / 2."""
        c = float(sigma_scale)
        eye = np.eye(dim)
        return cls(
            dim=dim,
            sigma=lambda x: np.broadcast_to(c * eye, (len(x), dim, dim)).copy(),
            potential=lambda x: const + 0.5 * lambda0 * np.sum(x * x, axis=-1),
            grad_potential=lambda x: lambda0 * x,
            div_a=lambda x: np.zeros_like(x),
            sigma_kind="identity" if c == 1.0 else "scalar",
            sigma_scale=c,
            lambda0=float(lambda0),
            name=f"ou(lambda0={lambda0})",
        )

    @classmethod
    def flat(cls, dim: int) -> "DiffusionModel":
        """sigma = I, V = 0 (Lebesgue reference; no mu0 probability measure)."""
        eye = np.eye(dim)
        return cls(
            dim=dim,
            sigma=lambda x: np.broadcast_to(eye, (len(x), dim, dim)).copy(),
            potential=lambda x: np.zeros(len(x)),
            grad_potential=lambda x: np.zeros_like(x),
            div_a=lambda x: np.zeros_like(x),
            sigma_kind="identity",
            name="flat",
        )

    # derived fields ---------------------------------------------------

    def a(self, x) -> Array:
        xb, single = _as_batch(x, self.dim)
        s = self.sigma(xb)
        out = s @ np.swapaxes(s, -1, -2)
        return out[0] if single else out

    def grad_V(self, x: Array) -> Array:
        if self.grad_potential is not None:
            return self.grad_potential(x)
        return fd_gradient(self.potential, x)

    def divergence_a(self, x: Array) -> Array:
        if self.div_a is not None:
            return self.div_a(x)
        return fd_div_matrix(lambda y: self.a(y), x)

    def check_nondegenerate(self, x) -> None:
        xb, _ = _as_batch(x, self.dim)
        if self.sigma_kind in ("identity", "scalar"):
            if self.sigma_scale == 0:
                raise DegenerateDiffusionError("sigma = 0")
            return
        s = self.sigma(xb)
        if not np.all(np.isfinite(s)):
            raise EvaluationError("sigma is not finite")
        sv = np.linalg.svd(s, compute_uv=False)
        bad = sv[:, -1] <= 1e-14 * np.maximum(sv[:, 0], 1e-300)
        if np.any(bad):
            raise DegenerateDiffusionError(
                f"sigma(x) singular at {xb[np.argmax(bad)]}")

    def sigma_inv(self, x: Array) -> Array:
        if self.sigma_kind in ("identity", "scalar"):
            eye = np.eye(self.dim) / self.sigma_scale
            return np.broadcast_to(eye, (len(x), self.dim, self.dim))
        self.check_nondegenerate(x)
        return np.linalg.inv(self.sigma(x))

    def z0(self, x: Array) -> Array:
        """Batch reference drift ``sum_j (d_j a_ij - a_ij d_j V)``."""
        if self.sigma_kind == "identity":
            return -self.grad_V(x)
        if self.sigma_kind == "scalar":
            return -(self.sigma_scale ** 2) * self.grad_V(x)
        a = self.a(x)
        return self.divergence_a(x) - np.einsum("nij,nj->ni", a, self.grad_V(x))

    def apply_sigma(self, x: Array, v: Array) -> Array:
        """``sigma(x) v`` per point."""
        if self.sigma_kind in ("identity", "scalar"):
            return self.sigma_scale * v
        return np.einsum("nij,nj->ni", self.sigma(x), v)

    def solve_sigma(self, x: Array, v: Array) -> Array:
        """``sigma(x)^{-1} v`` per point."""
        if self.sigma_kind in ("identity", "scalar"):
            return v / self.sigma_scale
        return np.linalg.solve(self.sigma(x), v[..., None])[..., 0]

    def apply_sigma_t(self, x: Array, v: Array) -> Array:
        """``sigma(x)^* v`` per point."""
        if self.sigma_kind in ("identity", "scalar"):
            return self.sigma_scale * v
        return np.einsum("nji,nj->ni", self.sigma(x), v)


def derive_z0(model: DiffusionModel, x) -> Array:
    """Reference drift Z0 at one point or a batch of points."""
    xb, single = _as_batch(x, model.dim)
    model.check_nondegenerate(xb)
    z = model.z0(xb)
    if not np.all(np.isfinite(z)):
        raise EvaluationError("NaN/inf in reference drift derivatives")
    return z[0] if single else z


# ----------------------------------------------------------------------
# drifts


@dataclass(frozen=True)
class DriftSpec:
    """Perturbing drift Z with growth tag and evaluation cap.

    ``growth`` is one of ``bounded``, ``compact-support``, ``linear``,
    ``superlinear`` or ``singular-lattice``; ``params`` carries the tag's
    parameters (``R``, ``r``, ``theta``/``x0``).
    """

    z: VectorField
    dim: int
    growth: str = "bounded"
    params: dict = field(default_factory=dict)
    eval_cap: float = 1e6
    name: str = "drift"

    def __call__(self, x: Array) -> Array:
        return self.evaluate(x)

    def evaluate(self, x: Array) -> Array:
        xb, single = _as_batch(x, self.dim)
        v = self.z(xb)
        norm = np.linalg.norm(v, axis=-1)
        over = norm > self.eval_cap
        if np.any(over):
            v = v.copy()
            v[over] *= (self.eval_cap / norm[over])[:, None]
        return v[0] if single else v

    @property
    def is_zero(self) -> bool:
        return self.growth == "zero"

    @property
    def superlinear(self) -> bool:
        return self.growth in ("superlinear",)

    # builtins ---------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "DriftSpec":
        return cls(z=lambda x: np.zeros_like(x), dim=dim, growth="zero",
                   name="zero")

    @classmethod
    def linear(cls, dim: int, r: float) -> "DriftSpec":
        r = float(r)
        return cls(z=lambda x: r * x, dim=dim, growth="linear",
                   params={"r": r}, eval_cap=math.inf, name=f"linear:{r}")

    @classmethod
    def constant(cls, c) -> "DriftSpec":
        c = np.asarray(c, dtype=float)
        return cls(z=lambda x: np.broadcast_to(c, x.shape).copy(), dim=c.size,
                   growth="bounded", params={"bound": float(np.linalg.norm(c))},
                   name="constant")

    @classmethod
    def tanh(cls, dim: int, scale: float = 1.0, modes: int | None = None
             ) -> "DriftSpec":
        """Z_i(x) = scale * tanh(x_i) for i < modes, else 0 (bounded Lipschitz)."""
        k = dim if modes is None else min(modes, dim)

        def z(x):
            out = np.zeros_like(x)
            out[:, :k] = scale * np.tanh(x[:, :k])
            return out

        return cls(z=z, dim=dim, growth="bounded",
                   params={"bound": abs(scale) * math.sqrt(k), "modes": k},
                   name=f"tanh:{scale}")

    @classmethod
    def cubic(cls, dim: int) -> "DriftSpec":
        """Outward Z(x) = |x|^2 x (x^3 in one dimension)."""
        return cls(z=lambda x: np.sum(x * x, axis=-1, keepdims=True) * x,
                   dim=dim, growth="superlinear", eval_cap=math.inf,
                   name="cubic")

    @classmethod
    def star002(cls, dim: int, theta: float = 0.5, x0=None,
                truncation_N: int = 10_000, cap: float = 1e6) -> "DriftSpec":
        x0 = _unit_x0(dim, x0)
        lattice = LatticeSum(x0, truncation_N)

        def z(x):
            s = np.minimum(cap, lattice.fast(x))
            return s[:, None] ** theta * x0

        return cls(z=z, dim=dim, growth="singular-lattice",
                   params={"theta": theta, "x0": x0, "N": truncation_N,
                           "cap": cap},
                   eval_cap=cap ** theta, name=f"star002:{theta}")


def _unit_x0(dim: int, x0) -> Array:
    if x0 is None:
        x0 = np.zeros(dim)
        x0[0] = 1.0
    x0 = np.asarray(x0, dtype=float)
    if abs(np.linalg.norm(x0) - 1.0) > 1e-12:
        raise DomainError("x0 must be a unit vector")
    return x0


@dataclass
class Star002Value:
    value: Array
    truncated_sum: float
    tail_bound: float
    singular: bool


def _lattice_terms(x: Array, x0: Array, N: int) -> Array:
    n = np.arange(1, N + 1, dtype=float)
    dist = np.linalg.norm(x[None, :] - n[:, None] * x0[None, :], axis=-1)
    with np.errstate(divide="ignore"):
        return np.log1p(1.0 / dist)


def drift_star002(x, x0, theta: float, truncation_N: int = 10_000,
                  cap: float = 1e6) -> Star002Value:
    """Lattice-singular drift ``x0 * min(cap, S)^theta`` by direct summation.

    ``S = sum_{n<=N} log(1 + 1/|x - n x0|)``. The untruncated series diverges
    (terms decay like 1/n), so ``tail_bound`` is infinite: the truncated sum
    is the drift.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    x0 = _unit_x0(x.size, x0)
    if not 0 < theta <= 0.5:
        raise DomainError("theta must lie in (0, 1/2]")
    if truncation_N < 1:
        raise DomainError("truncation_N must be >= 1")
    terms = _lattice_terms(x, x0, int(truncation_N))
    singular = bool(np.isinf(terms).any())
    s = math.inf if singular else math.fsum(terms)
    if s >= cap:
        s_used = cap
        singular = True
    else:
        s_used = s
    return Star002Value(value=x0 * s_used ** theta, truncated_sum=s,
                        tail_bound=math.inf, singular=singular)


class LatticeSum:
    """Fast batch evaluation of ``sum_{n=1}^N log(1 + 1/|x - n x0|)``.

    Terms within ``near`` of the projection of x on the x0 line are summed
    exactly; the smooth remainder uses Euler-Maclaurin with closed-form
    integrals of ``1/r - 1/(2r^2) + 1/(3r^3)``. Agrees with direct summation
    to about 2e-6 absolute (the dropped 1/(4r^4) terms).
    """

    def __init__(self, x0: Array, N: int, near: int = 48):
        self.x0 = np.asarray(x0, dtype=float)
        self.N = int(N)
        self.near = int(near)

    def fast(self, x: Array) -> Array:
        x = np.atleast_2d(x)
        s = x @ self.x0
        q2 = np.maximum(np.sum(x * x, axis=-1) - s * s, 0.0)
        q = np.sqrt(q2)
        N, K = self.N, self.near
        centre = np.clip(np.rint(s), 1, N).astype(np.int64)
        lo = np.maximum(centre - K, 1)
        hi = np.minimum(centre + K, N)
        offs = np.arange(-K, K + 1)
        n = centre[:, None] + offs[None, :]
        valid = (n >= lo[:, None]) & (n <= hi[:, None])
        v = n - s[:, None]
        r = np.sqrt(v * v + q2[:, None])
        with np.errstate(divide="ignore"):
            t = np.where(valid, np.log1p(1.0 / r), 0.0)
        total = t.sum(axis=1)
        # right tail n in [hi+1, N], left tail n in [1, lo-1]
        total += self._tail(hi + 1, np.full_like(hi, N), s, q, q2)
        total += self._tail(np.ones_like(lo), lo - 1, s, q, q2)
        return total

    @staticmethod
    def _f(v, q2):
        r = np.sqrt(v * v + q2)
        return np.log1p(1.0 / r)

    @staticmethod
    def _df(v, q2):
        r = np.sqrt(v * v + q2)
        return -v / (r * r * (r + 1.0))

    def _tail(self, a, b, s, q, q2):
        out = np.zeros_like(s)
        ok = b >= a
        if not np.any(ok):
            return out
        a, b, s, q, q2 = a[ok], b[ok], s[ok], q[ok], q2[ok]
        va = a - s
        vb = b - s
        integral = _antideriv(vb, q, q2) - _antideriv(va, q, q2)
        em = 0.5 * (self._f(va, q2) + self._f(vb, q2))
        em += (self._df(vb, q2) - self._df(va, q2)) / 12.0
        out[ok] = integral + em
        return out


def _antideriv(v, q, q2):
    """Antiderivative of ``1/r - 1/(2 r^2) + 1/(3 r^3)``, r = sqrt(v^2+q^2).

    Only differences over intervals not containing v = 0 are used.
    """
    r = np.sqrt(v * v + q2)
    w = np.abs(v)
    sgn = np.sign(v)
    # int dv/r = sgn * log(w + r)
    i1 = sgn * np.log(w + r)
    # int dv/r^2 = -int_w^inf = -sgn * atan(q/w)/q
    z = np.where(w > 0, q / np.where(w > 0, w, 1.0), np.inf)
    ratio = np.where(z > 1e-8, np.arctan(z) / np.where(z > 1e-8, z, 1.0),
                     1.0 - z * z / 3.0)
    i2 = -sgn * ratio / w
    # int dv/r^3 = -int_w^inf = -sgn / (r (r + w))
    i3 = -sgn / (r * (r + w))
    return i1 - 0.5 * i2 + i3 / 3.0


# ----------------------------------------------------------------------
# metric surrogate


class MetricSurrogate:
    """Radial lower bound ``U(x) = int_0^{|x|} dr / sigma_bar(r)`` of the
    intrinsic distance from the origin.

    ``sigma_bar(r)`` is the max operator norm of sigma over ``64 d``
    scrambled-Sobol points on the sphere of radius r (deterministic seed).
    Built eagerly on ``[0, r_max]``.
    """

    def __init__(self, model: DiffusionModel, r_max: float = 50.0,
                 n_grid: int = 4001, points_per_dim: int = 64):
        self.model = model
        self.r_max = float(r_max)
        self.radii = np.linspace(0.0, self.r_max, n_grid)
        d = model.dim
        if model.sigma_kind in ("identity", "scalar"):
            sb = np.full(n_grid, abs(model.sigma_scale))
        else:
            dirs = _sphere_points(d, points_per_dim * d)
            sb = np.empty(n_grid)
            for k, r in enumerate(self.radii):
                pts = r * dirs
                s = model.sigma(pts)
                sb[k] = np.max(np.linalg.norm(s, ord=2, axis=(-2, -1)))
        if np.any(sb <= 0) or not np.all(np.isfinite(sb)):
            raise DegenerateDiffusionError("sigma_bar vanishes on the radial grid")
        self.sigma_bar_grid = sb
        inv = 1.0 / sb
        if np.all(inv == inv[0]):
            self.u_grid = self.radii * inv[0]
        else:
            self.u_grid = np.concatenate(
                [[0.0], cumulative_simpson(inv, x=self.radii)])

    def sigma_bar(self, r) -> Array:
        return np.interp(r, self.radii, self.sigma_bar_grid)

    def U(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(np.atleast_2d(x), axis=-1)
        if np.any(r > self.r_max):
            raise DomainError(f"|x| = {r.max():.3g} beyond surrogate grid "
                              f"r_max = {self.r_max}")
        u = np.interp(r, self.radii, self.u_grid)
        return u[0] if x.ndim == 1 else u


def _sphere_points(d: int, n: int) -> Array:
    if d == 1:
        return np.array([[-1.0], [1.0]])
    m = 1 << int(math.ceil(math.log2(n)))
    u = qmc.Sobol(d, scramble=True, seed=12345).random(m)[:n]
    from scipy.special import ndtri
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def metric_surrogate_U(model: DiffusionModel, x, r_max: float | None = None
                       ) -> float | Array:
    """Conservative stand-in for the intrinsic distance rho_sigma(0, x).

    U <= rho_sigma(0, .), so an integrability check using U in place of
    rho_sigma is sufficient but not necessary.
    """
    x = np.asarray(x, dtype=float)
    need = float(np.max(np.linalg.norm(np.atleast_2d(x), axis=-1)))
    surrogate = MetricSurrogate(model, r_max=r_max or max(1.0, 1.25 * need))
    return surrogate.U(x)


# psi choices for the intrinsic-gradient term


def psi_energy(model: DiffusionModel, x: Array, choice: str = "abs") -> Array:
    """``|sigma^* grad psi|^2`` for psi = |x| or psi = log log(e + |x|)."""
    r = np.linalg.norm(x, axis=-1)
    unit = x / np.where(r > 0, r, 1.0)[:, None]
    if choice == "abs":
        g = unit
    elif choice == "loglog":
        fac = 1.0 / ((math.e + r) * np.log(math.e + r))
        g = unit * fac[:, None]
    else:
        raise DomainError(f"unknown psi {choice!r}")
    v = model.apply_sigma_t(x, g)
    return np.sum(v * v, axis=-1)
