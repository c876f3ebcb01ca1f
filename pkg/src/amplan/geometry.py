"""Superquadric shapes, inside-outside tests, boundary proxies and closest-pair solving.

A superquadric (SQ) is the implicit surface F(x) = 0 with F negative inside.
Boundary points are parameterized by angular variables through signed-power
trigonometric functions, which lets a "proxy" point slide along the surface.
All functions here are pure; shape objects are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid shape parameters or non-finite geometric input."""


def signed_pow(v, e):
    """sign(v)*|v|**e, elementwise; defined as 0 at v == 0 to avoid NaN."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.abs(v) ** e


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = -((-a + np.pi) % (2.0 * np.pi) - np.pi)
    return out if out.ndim else float(out)


def rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _check_positive(name, *vals):
    for v in vals:
        if not (np.isfinite(v) and v > 0):
            raise GeometryError(f"{name} must be positive and finite, got {v}")


def _check_eps(*vals):
    for v in vals:
        if not (0.0 < v <= 2.0):
            raise GeometryError(f"shape exponent must lie in (0, 2], got {v}")


@dataclass(frozen=True)
class Superquadric2:
    """Planar superquadric: semi-axes a1, a2, exponent eps, pose (angle, center)."""

    a1: float
    a2: float
    eps: float
    angle: float = 0.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        _check_positive("semi-axis", self.a1, self.a2)
        _check_eps(self.eps)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def rotation(self) -> np.ndarray:
        return rot2(self.angle)

    def to_body(self, pts_world):
        p = np.asarray(pts_world, dtype=float)
        return (p - np.asarray(self.center)) @ self.rotation

    def to_world(self, pts_body):
        p = np.asarray(pts_body, dtype=float)
        return p @ self.rotation.T + np.asarray(self.center)

    def inside_outside(self, pts_world):
        """Inside-outside value: negative inside, 0 on the boundary, positive outside."""
        p = self.to_body(pts_world)
        if not np.all(np.isfinite(p)):
            raise GeometryError("non-finite point in inside_outside")
        e = 2.0 / self.eps
        x, y = p[..., 0], p[..., 1]
        val = np.abs(x / self.a1) ** e + np.abs(y / self.a2) ** e - 1.0
        return float(val) if np.ndim(val) == 0 else val

    def boundary_point(self, gamma):
        """World-frame boundary point p(gamma), vectorized over gamma."""
        g = np.asarray(gamma, dtype=float)
        pb = np.stack(
            [self.a1 * signed_pow(np.cos(g), self.eps),
             self.a2 * signed_pow(np.sin(g), self.eps)], axis=-1)
        return self.to_world(pb)

    def boundary_tangent(self, gamma):
        """d p(gamma)/d gamma in the world frame (unnormalized)."""
        g = np.asarray(gamma, dtype=float)
        c, s = np.cos(g), np.sin(g)
        # d/dg sign(c)|c|^e = -e |c|^(e-1) s ; floor avoids the axis singularity for eps<1
        ac = np.maximum(np.abs(c), 1e-12)
        as_ = np.maximum(np.abs(s), 1e-12)
        tb = np.stack(
            [-self.a1 * self.eps * ac ** (self.eps - 1.0) * s,
             self.a2 * self.eps * as_ ** (self.eps - 1.0) * c], axis=-1)
        return tb @ self.rotation.T


@dataclass(frozen=True)
class Superquadric3:
    """3D superquadric with semi-axes (a1, a2, a3), exponents (eps1, eps2) and rigid pose."""

    a1: float
    a2: float
    a3: float
    eps1: float
    eps2: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        _check_positive("semi-axis", self.a1, self.a2, self.a3)
        _check_eps(self.eps1, self.eps2)
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9) \
                or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation must be orthonormal with det +1 (tol 1e-9)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def to_body(self, pts_world):
        p = np.asarray(pts_world, dtype=float)
        return (p - self.translation) @ self.rotation

    def to_world(self, pts_body):
        p = np.asarray(pts_body, dtype=float)
        return p @ self.rotation.T + self.translation

    def inside_outside(self, pts_world):
        """F_3d on the body-frame point: negative inside, 0 on boundary, positive outside."""
        p = self.to_body(pts_world)
        if not np.all(np.isfinite(p)):
            raise GeometryError("non-finite point in inside_outside")
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        planar = (np.abs(x / self.a1) ** (2.0 / self.eps2)
                  + np.abs(y / self.a2) ** (2.0 / self.eps2))
        val = planar ** (self.eps2 / self.eps1) + np.abs(z / self.a3) ** (2.0 / self.eps1) - 1.0
        return float(val) if np.ndim(val) == 0 else val

    def boundary_point(self, gamma1, gamma2=0.0):
        """World boundary point for angular parameters (gamma1, gamma2)."""
        g1 = np.asarray(gamma1, dtype=float)
        g2 = np.asarray(gamma2, dtype=float)
        c1 = signed_pow(np.cos(g1), self.eps1)
        pb = np.stack(
            [self.a1 * c1 * signed_pow(np.cos(g2), self.eps2),
             self.a2 * c1 * signed_pow(np.sin(g2), self.eps2),
             self.a3 * signed_pow(np.sin(g1), self.eps1)], axis=-1)
        return self.to_world(pb)


@dataclass(frozen=True)
class ProxyPair:
    """Angular parameters of the interacting closest points on two SQ boundaries."""

    gamma_i: float
    gamma_j: float

    def __post_init__(self):
        object.__setattr__(self, "gamma_i", float(wrap_angle(self.gamma_i)))
        object.__setattr__(self, "gamma_j", float(wrap_angle(self.gamma_j)))


@dataclass(frozen=True)
class StiffnessParams:
    """Bounds and scales of the nonlinear proxy stiffness."""

    k_min: float = 1.0e-7
    k_max: float = 1.0e3
    d0: float = 1.0e-3
    d_prime: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.k_min < self.k_max):
            raise GeometryError("need 0 < k_min < k_max")
        if self.d0 <= 0.0 or self.d_prime < 0.0:
            raise GeometryError("need d0 > 0 and d_prime >= 0")


def stiffness(d, params: StiffnessParams):
    """Nonlinear stiffness k(d): large when d is small, decaying to k_min for large d."""
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise GeometryError("non-finite distance in stiffness")
    k = params.k_min + 0.5 * (1.0 - np.tanh(d / params.d0)) * params.k_max
    return float(k) if k.ndim == 0 else k


def stiffness_slope(d, params: StiffnessParams):
    """Analytic dk/dd of the nonlinear stiffness."""
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise GeometryError("non-finite distance in stiffness_slope")
    s = -0.5 * params.k_max / (params.d0 * np.cosh(d / params.d0) ** 2)
    return float(s) if s.ndim == 0 else s


@dataclass(frozen=True)
class ClosestPairResult:
    proxy: ProxyPair
    gap: float
    converged: bool
    iterations: int


def _init_gammas(sq_i: Superquadric2, sq_j: Superquadric2) -> tuple[float, float]:
    ci = np.asarray(sq_i.center)
    cj = np.asarray(sq_j.center)
    di = sq_i.rotation.T @ (cj - ci)
    dj = sq_j.rotation.T @ (ci - cj)
    return math.atan2(di[1], di[0]), math.atan2(dj[1], dj[0])


def closest_pair(sq_i: Superquadric2, sq_j: Superquadric2, init: ProxyPair | None = None,
                 tol: float = 1e-8, max_iter: int = 200) -> ClosestPairResult:
    """Find the proxy pair minimizing ||p(gamma_i) - p(gamma_j)|| between two SQs.

    Joint gradient descent with backtracking on the squared proxy distance,
    followed by a Newton polish once the gradient is small.  Initialization is
    the center-to-center direction unless an explicit warm start is given.
    The returned gap is flipped negative when either proxy lies strictly
    inside the other shape (penetration).
    """
    if init is None:
        g = np.array(_init_gammas(sq_i, sq_j))
    else:
        g = np.array([init.gamma_i, init.gamma_j], dtype=float)
    if not np.all(np.isfinite(g)):
        raise GeometryError("non-finite proxy initialization")

    def value_grad(gam):
        pi = sq_i.boundary_point(gam[0])
        pj = sq_j.boundary_point(gam[1])
        diff = pi - pj
        f = float(diff @ diff)
        gr = np.array([2.0 * diff @ sq_i.boundary_tangent(gam[0]),
                       -2.0 * diff @ sq_j.boundary_tangent(gam[1])])
        return f, gr

    f, gr = value_grad(g)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(gr))
        if gnorm == 0.0:
            converged = True
            break
        # cap the trial update length at 0.25 rad to stay within the local basin
        step = min(1.0, 0.25 / gnorm)
        moved = None
        for _ in range(40):
            g_new = g - step * gr
            f_new, gr_new = value_grad(g_new)
            if f_new <= f - 1e-4 * step * gnorm * gnorm:
                moved = (g_new, f_new, gr_new, step * gnorm)
                break
            step *= 0.5
        if moved is None:
            converged = True  # no descent possible at float precision
            break
        g, f, gr, upd = moved[0], moved[1], moved[2], moved[3]
        if upd < tol:
            converged = True
            break

    # Newton polish on the 2x2 system (finite-difference Hessian of the objective)
    for _ in range(8):
        f, gr = value_grad(g)
        if np.linalg.norm(gr) == 0.0:
            break
        h = 1e-6
        H = np.empty((2, 2))
        for k in range(2):
            ek = np.zeros(2)
            ek[k] = h
            _, gp = value_grad(g + ek)
            _, gm = value_grad(g - ek)
            H[:, k] = (gp - gm) / (2.0 * h)
        H = 0.5 * (H + H.T)
        try:
            dg = np.linalg.solve(H + 1e-12 * np.eye(2), -gr)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(dg)) or np.linalg.norm(dg) > 0.3:
            break
        f_new, _ = value_grad(g + dg)
        if f_new > f + 1e-12:
            break
        g = g + dg
        if np.linalg.norm(dg) < tol:
            converged = True
            break

    pi = sq_i.boundary_point(g[0])
    pj = sq_j.boundary_point(g[1])
    gap = float(np.linalg.norm(pi - pj))
    if sq_j.inside_outside(pi) < 0.0 or sq_i.inside_outside(pj) < 0.0:
        gap = -gap
    return ClosestPairResult(ProxyPair(g[0], g[1]), gap, converged, it)
