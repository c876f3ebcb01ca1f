"""Whole-body planner: potential-field equilibrium tracking along a clearance path.

The planar system configuration is z = [x, y, psi, th1, th3] (base position,
base heading, two arm joints).  The vehicle footprint is a set of planar SQ
parts (six rotor disks plus two arm links) whose proxy points interact with
every obstacle through a stiff short-range potential.  A moving end-effector
attractor u(s) slides along the clearance path; the configuration follows the
potential's equilibrium manifold through an adaptively damped ODE in the path
parameter s, integrated with a fixed-step RK4 scheme.

All configuration-space derivatives of the potential are taken by central
finite differences, evaluated in a single vectorized batch per RK4 stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (StiffnessParams, Superquadric2, closest_pair, signed_pow,
                       wrap_angle)
from .voronoi import SolutionPath

FD_GRAD = 1e-6
FD_HESS = 1e-4


class PlannerError(RuntimeError):
    pass


_ROTOR_BETA = np.arange(6) * (math.pi / 3.0)


@dataclass(frozen=True)
class VehicleGeometry:
    """Planar SQ decomposition of the aerial manipulator footprint.

    Parts 0..5 are the rotor disks, part 6 is the shoulder link, part 7 the
    forearm link; the end effector sits at the forearm tip.
    """

    rotor_arm: float = 0.278
    blade_radius: float = 0.11
    arm_base_offset: float = 0.15
    l1: float = 0.25
    l2: float = 0.25
    link_halfwidth: float = 0.02
    link_eps: float = 0.4

    @property
    def n_parts(self) -> int:
        return 8

    @property
    def part_axes(self):
        a1 = np.array([self.blade_radius] * 6 + [self.l1 / 2, self.l2 / 2])
        a2 = np.array([self.blade_radius] * 6 + [self.link_halfwidth] * 2)
        eps = np.array([1.0] * 6 + [self.link_eps] * 2)
        return a1, a2, eps

    def part_poses(self, Z):
        """Part centers (B, 8, 2) and orientations (B, 8) plus EEF pose (B, 3)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        x, y, psi, t1, t3 = Z.T
        B = Z.shape[0]
        centers = np.empty((B, 8, 2))
        angles = np.empty((B, 8))

        rot_ang = psi[:, None] + _ROTOR_BETA
        centers[:, :6, 0] = x[:, None] + self.rotor_arm * np.cos(rot_ang)
        centers[:, :6, 1] = y[:, None] + self.rotor_arm * np.sin(rot_ang)
        angles[:, :6] = psi[:, None]

        a1 = psi + t1
        a2 = a1 + t3
        c0, s0 = np.cos(psi), np.sin(psi)
        c1, s1 = np.cos(a1), np.sin(a1)
        c2, s2 = np.cos(a2), np.sin(a2)
        bx = x + self.arm_base_offset * c0
        by = y + self.arm_base_offset * s0
        jx = bx + self.l1 * c1
        jy = by + self.l1 * s1
        centers[:, 6, 0] = bx + (self.l1 / 2.0) * c1
        centers[:, 6, 1] = by + (self.l1 / 2.0) * s1
        centers[:, 7, 0] = jx + (self.l2 / 2.0) * c2
        centers[:, 7, 1] = jy + (self.l2 / 2.0) * s2
        angles[:, 6] = a1
        angles[:, 7] = a2

        eef = np.empty((B, 3))
        eef[:, 0] = jx + self.l2 * c2
        eef[:, 1] = jy + self.l2 * s2
        eef[:, 2] = a2
        return centers, angles, eef

    def forward_kinematics_eef(self, z):
        """End-effector pose [x_e, y_e, theta_e] at configuration z."""
        _, _, eef = self.part_poses(np.asarray(z, dtype=float)[None, :])
        return eef[0]

    def part_superquadrics(self, z) -> list[Superquadric2]:
        """The part shapes as individual SQ objects at configuration z."""
        centers, angles, _ = self.part_poses(np.asarray(z, dtype=float)[None, :])
        a1, a2, eps = self.part_axes
        return [Superquadric2(a1=a1[k], a2=a2[k], eps=eps[k],
                              angle=float(angles[0, k]),
                              center=tuple(centers[0, k]))
                for k in range(self.n_parts)]


@dataclass
class ObstacleSet:
    """Obstacle SQ parameters flattened into arrays for batched evaluation."""

    shapes: list

    def __post_init__(self):
        self.a1 = np.array([s.a1 for s in self.shapes])
        self.a2 = np.array([s.a2 for s in self.shapes])
        self.eps = np.array([s.eps for s in self.shapes])
        self.angle = np.array([s.angle for s in self.shapes])
        self.center = np.array([s.center for s in self.shapes]).reshape(-1, 2)

    def __len__(self):
        return len(self.shapes)


@dataclass
class PlannerParams:
    eta: float = 20.0
    alpha: float = 20.0
    k_tgt: np.ndarray = field(default_factory=lambda: 800.0 * np.diag([2.0, 2.0, 1.0]))
    k_reg: float = 1.0
    n_s: int = 400
    stiffness: StiffnessParams = field(default_factory=StiffnessParams)
    cond_limit: float = 1e10
    prerelax_tol: float = 1e-4
    prerelax_max_iter: int = 200

    def __post_init__(self):
        self.k_tgt = np.asarray(self.k_tgt, dtype=float)
        if self.eta <= 0 or self.alpha <= 0 or self.n_s < 2:
            raise PlannerError("need eta > 0, alpha > 0 and n_s >= 2")


def pair_index(n_parts: int, n_obs: int):
    """Flat pair ordering: pair q = (part q // n_obs, obstacle q % n_obs)."""
    parts = np.repeat(np.arange(n_parts), n_obs)
    obs = np.tile(np.arange(n_obs), n_parts)
    return parts, obs


class _Evaluator:
    """Caches per-pair parameter arrays so each RK4 stage is one fused batch."""

    def __init__(self, geom: VehicleGeometry, obs: ObstacleSet, stiff: StiffnessParams):
        self.geom = geom
        self.obs = obs
        self.stiff = stiff
        self.pi, self.oi = pair_index(geom.n_parts, len(obs))
        a1, a2, eps = geom.part_axes
        self.pa1, self.pa2, self.peps = a1[self.pi], a2[self.pi], eps[self.pi]
        self.oa1, self.oa2 = obs.a1[self.oi], obs.a2[self.oi]
        self.oeps = obs.eps[self.oi]
        self.oexp = 2.0 / self.oeps
        self.ocos = np.cos(obs.angle[self.oi])
        self.osin = np.sin(obs.angle[self.oi])
        self.ocx = obs.center[self.oi, 0]
        self.ocy = obs.center[self.oi, 1]
        self.P = self.pi.size

    def terms(self, Z, Gp, Go):
        """Per-pair potential terms 0.5 k(F - d') ||p_part - p_obs||^2, shape (B, P)."""
        centers, angles, _ = self.geom.part_poses(Z)
        return self.terms_from_poses(centers, angles, Gp, Go)

    def terms_from_poses(self, centers, angles, Gp, Go):
        B = centers.shape[0]
        Gp = np.broadcast_to(np.asarray(Gp, dtype=float), (B, self.P))
        Go = np.broadcast_to(np.asarray(Go, dtype=float), (B, self.P))

        pbx = self.pa1 * signed_pow(np.cos(Gp), self.peps)
        pby = self.pa2 * signed_pow(np.sin(Gp), self.peps)
        ang = angles[:, self.pi]
        ca, sa = np.cos(ang), np.sin(ang)
        px = centers[:, self.pi, 0] + ca * pbx - sa * pby
        py = centers[:, self.pi, 1] + sa * pbx + ca * pby

        obx = self.oa1 * signed_pow(np.cos(Go), self.oeps)
        oby = self.oa2 * signed_pow(np.sin(Go), self.oeps)
        qx = self.ocx + self.ocos * obx - self.osin * oby
        qy = self.ocy + self.osin * obx + self.ocos * oby

        # inside-outside value of the part proxy in the obstacle frame
        dx, dy = px - self.ocx, py - self.ocy
        bx = self.ocos * dx + self.osin * dy
        by = -self.osin * dx + self.ocos * dy
        F = np.abs(bx / self.oa1) ** self.oexp + np.abs(by / self.oa2) ** self.oexp - 1.0

        st = self.stiff
        k = st.k_min + 0.5 * (1.0 - np.tanh((F - st.d_prime) / st.d0)) * st.k_max
        dist2 = (px - qx) ** 2 + (py - qy) ** 2
        return 0.5 * k * dist2


def pair_terms(geom: VehicleGeometry, obs: ObstacleSet, Z, Gp, Go,
               stiff: StiffnessParams):
    """Per-pair potential terms for an ad-hoc call (no caching)."""
    return _Evaluator(geom, obs, stiff).terms(Z, Gp, Go)


def _target_terms(eef, u, k_tgt):
    r = u - eef
    r[..., 2] = wrap_angle(r[..., 2])
    return 0.5 * np.einsum("...i,ij,...j->...", r, k_tgt, r)


def potential(geom, obs, params: PlannerParams, z, Gp, Go, u):
    """Scalar total potential W(z, Gamma, u)."""
    if not isinstance(obs, ObstacleSet):
        obs = ObstacleSet(list(obs))
    return _potential(_Evaluator(geom, obs, params.stiffness), params,
                      np.asarray(z, dtype=float), Gp, Go, u)


def _potential(ev: _Evaluator, params, z, Gp, Go, u):
    Z = z[None, :]
    _, _, eef = ev.geom.part_poses(Z)
    w_proxy = float(ev.terms(Z, Gp, Go).sum())
    w_tgt = float(_target_terms(eef[0], np.asarray(u, dtype=float), params.k_tgt))
    w_reg = 0.5 * params.k_reg * float(z[3] ** 2 + z[4] ** 2)
    return w_proxy + w_tgt + w_reg


def _stencil_offsets():
    """Fixed FD offsets: base, gradient pairs, Hessian diagonal and cross pairs."""
    rows = [np.zeros(5)]
    for k in range(5):
        e = np.zeros(5)
        e[k] = FD_GRAD
        rows += [e, -e]
    for k in range(5):
        e = np.zeros(5)
        e[k] = FD_HESS
        rows += [e, -e]
    offdiag = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    for (i, j) in offdiag:
        e = np.zeros(5)
        e[i] = FD_HESS
        f = np.zeros(5)
        f[j] = FD_HESS
        rows += [e + f, -e - f, e - f, -e + f]
    return np.array(rows), offdiag


_STENCIL, _OFFDIAG = _stencil_offsets()


def _fused_derivatives(ev: _Evaluator, params, z, Gp, Go, u):
    """(grad_z W, hess_z W, J_eef, grad_Gamma W) from one batched evaluation.

    Rows 0..60 perturb the configuration (gradient and Hessian stencils); four
    trailing rows perturb every proxy angle at once, which is exact because
    the pair terms are mutually independent in the proxy angles.
    """
    P = ev.P
    Z = np.vstack([z + _STENCIL, np.broadcast_to(z, (4, 5))])
    Gpb = np.broadcast_to(Gp, (65, P)).copy()
    Gob = np.broadcast_to(Go, (65, P)).copy()
    Gpb[61] += FD_GRAD
    Gpb[62] -= FD_GRAD
    Gob[63] += FD_GRAD
    Gob[64] -= FD_GRAD

    centers, angles, eef = ev.geom.part_poses(Z)
    t = ev.terms_from_poses(centers, angles, Gpb, Gob)
    r = np.asarray(u, dtype=float)[None, :] - eef[:61]
    r[:, 2] = wrap_angle(r[:, 2])
    w = (t[:61].sum(axis=1)
         + 0.5 * np.einsum("bi,ij,bj->b", r, params.k_tgt, r)
         + 0.5 * params.k_reg * (Z[:61, 3] ** 2 + Z[:61, 4] ** 2))

    gz = (w[1:11:2] - w[2:11:2]) / (2.0 * FD_GRAD)
    H = np.empty((5, 5))
    w0 = w[0]
    for k in range(5):
        H[k, k] = (w[11 + 2 * k] + w[12 + 2 * k] - 2.0 * w0) / FD_HESS ** 2
    for idx, (i, j) in enumerate(_OFFDIAG):
        base = 21 + 4 * idx
        H[i, j] = H[j, i] = (w[base] + w[base + 1] - w[base + 2] - w[base + 3]) \
            / (4.0 * FD_HESS ** 2)

    J = np.empty((3, 5))
    for k in range(5):
        d = eef[1 + 2 * k] - eef[2 + 2 * k]
        d[2] = wrap_angle(d[2])
        J[:, k] = d / (2.0 * FD_GRAD)

    gG = np.empty(2 * P)
    gG[:P] = (t[61] - t[62]) / (2.0 * FD_GRAD)
    gG[P:] = (t[63] - t[64]) / (2.0 * FD_GRAD)
    return gz, H, J, gG


def _derivatives(geom, obs, params, z, Gp, Go, u):
    """Ad-hoc derivative evaluation (builds a fresh evaluator)."""
    if not isinstance(obs, ObstacleSet):
        obs = ObstacleSet(list(obs))
    return _fused_derivatives(_Evaluator(geom, obs, params.stiffness), params,
                              np.asarray(z, dtype=float), Gp, Go, u)


def _init_gammas(geom, obs, z):
    """Warm proxy angles from independent closest-pair solves at configuration z."""
    parts = geom.part_superquadrics(z)
    pi, oi = pair_index(geom.n_parts, len(obs))
    Gp = np.empty(pi.size)
    Go = np.empty(pi.size)
    for q in range(pi.size):
        res = closest_pair(parts[pi[q]], obs.shapes[oi[q]])
        Gp[q], Go[q] = res.proxy.gamma_i, res.proxy.gamma_j
    return Gp, Go


def _prerelax(ev: _Evaluator, params, z0, Gp, Go, u0):
    """Damped Newton flow on z (and descent on Gamma) down to a local equilibrium."""
    z = np.asarray(z0, dtype=float).copy()
    for _ in range(params.prerelax_max_iter):
        gz, H, _, gG = _fused_derivatives(ev, params, z, Gp, Go, u0)
        if np.linalg.norm(gz) < params.prerelax_tol:
            return z, Gp, Go
        Hs = 0.5 * (H + H.T)
        try:
            dz = np.linalg.solve(Hs + 1e-10 * np.eye(5), -gz)
        except np.linalg.LinAlgError:
            dz = -gz
        if dz @ gz > 0.0:
            dz = -gz
        w0 = _potential(ev, params, z, Gp, Go, u0)
        step = 1.0
        for _ in range(30):
            z_new = z + step * dz
            if _potential(ev, params, z_new, Gp, Go, u0) < w0 + 1e-4 * step * (dz @ gz):
                z = z_new
                break
            step *= 0.5
        else:
            break
        P = Gp.size
        gn = np.abs(gG).max()
        if gn > 0.0:
            sg = min(1.0 / params.alpha, 0.25 / gn)
            Gp = Gp - sg * gG[:P]
            Go = Go - sg * gG[P:]
    gz, _, _, _ = _fused_derivatives(ev, params, z, Gp, Go, u0)
    if np.linalg.norm(gz) >= params.prerelax_tol:
        raise PlannerError(
            f"pre-relaxation stalled with |grad| = {np.linalg.norm(gz):.3e}")
    return z, Gp, Go


def attractors_from_path(path: SolutionPath, start_heading: float, goal_pose):
    """Attractor poses: one per clearance-path node, then the goal pose.

    Each node's heading is the normal of its outgoing path edge, flipped by pi
    when that points away from the previously resolved heading, then unwrapped
    so consecutive attractor angles stay continuous.
    """
    if not path.found:
        raise PlannerError("no clearance path to build attractors from")
    goal_pose = np.asarray(goal_pose, dtype=float)
    attrs = []
    prev = float(start_heading)
    n_nodes = len(path.nodes)
    for k in range(n_nodes):
        if len(path.edge_normals) == 0:
            raw = prev
        else:
            raw = float(path.edge_normals[min(k, len(path.edge_normals) - 1)])
        cand = min((raw, raw + math.pi), key=lambda a: abs(wrap_angle(a - prev)))
        ang = prev + wrap_angle(cand - prev)
        attrs.append(np.array([path.nodes[k][0], path.nodes[k][1], ang]))
        prev = ang
    g_ang = prev + wrap_angle(goal_pose[2] - prev)
    attrs.append(np.array([goal_pose[0], goal_pose[1], g_ang]))
    return attrs


@dataclass
class PlannedTrajectory:
    s: np.ndarray          # (N+1,) path parameter samples in [0, 1]
    z: np.ndarray          # (N+1, 5) configurations [x, y, psi, th1, th3]
    eef: np.ndarray        # (N+1, 3) end-effector poses
    u: np.ndarray          # (N+1, 3) attractor schedule samples
    gammas: np.ndarray     # (N+1, 2P) proxy angles, part block then obstacle block
    attractors: list


def integrate_em(geom: VehicleGeometry, obstacles, z0, attractors,
                 params: PlannerParams | None = None) -> PlannedTrajectory:
    """Track the potential equilibrium while the attractor slides along the path.

    z' = -H^{-1} (dW^2/dz du) u' - eta H^{-1} dW/dz with H the configuration
    Hessian of W, and gradient flow on the proxy angles, integrated by RK4 over
    s in [0, 1] with steps aligned to the piecewise-linear attractor segments.
    """
    params = params or PlannerParams()
    obs = obstacles if isinstance(obstacles, ObstacleSet) else ObstacleSet(list(obstacles))
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (5,):
        raise PlannerError("configuration must be [x, y, psi, th1, th3]")

    ev = _Evaluator(geom, obs, params.stiffness)
    Gp, Go = _init_gammas(geom, obs, z0)
    P = Gp.size
    u0 = geom.forward_kinematics_eef(z0)
    z, Gp, Go = _prerelax(ev, params, z0, Gp, Go, u0)
    u0 = geom.forward_kinematics_eef(z)

    attrs = [np.asarray(u0, dtype=float)] + [np.asarray(a, dtype=float) for a in attractors]
    K = len(attrs) - 1
    if K < 1:
        raise PlannerError("need at least one attractor")
    n_seg = max(1, params.n_s // K)
    h = (1.0 / K) / n_seg

    def f(y, u, udot):
        zz, gp, go = y[:5], y[5:5 + P], y[5 + P:]
        gz, H, J, gG = _fused_derivatives(ev, params, zz, gp, go, u)
        Hs = 0.5 * (H + H.T)
        if np.linalg.cond(Hs) > params.cond_limit:
            raise PlannerError("singular potential Hessian along the equilibrium manifold")
        zdot = np.linalg.solve(Hs, J.T @ (params.k_tgt @ udot) - params.eta * gz)
        return np.concatenate([zdot, -params.alpha * gG])

    y = np.concatenate([z, Gp, Go])
    N = K * n_seg
    s_grid = np.empty(N + 1)
    z_out = np.empty((N + 1, 5))
    u_out = np.empty((N + 1, 3))
    g_out = np.empty((N + 1, 2 * P))

    def record(idx, s, y, u):
        s_grid[idx] = s
        z_out[idx] = y[:5]
        u_out[idx] = u
        g_out[idx] = y[5:]

    record(0, 0.0, y, attrs[0])
    idx = 0
    for seg in range(K):
        ua, ub = attrs[seg], attrs[seg + 1]
        du = (ub - ua)
        du[2] = wrap_angle(du[2])
        udot = K * du
        for n in range(n_seg):
            s_loc = n * h
            u_of = lambda ds: ua + (s_loc + ds) * udot  # noqa: E731
            k1 = f(y, u_of(0.0), udot)
            k2 = f(y + 0.5 * h * k1, u_of(0.5 * h), udot)
            k3 = f(y + 0.5 * h * k2, u_of(0.5 * h), udot)
            k4 = f(y + h * k3, u_of(h), udot)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise PlannerError("non-finite state during equilibrium integration")
            idx += 1
            record(idx, seg / K + (n + 1) * h, y, u_of(h))

    eef = np.array([geom.forward_kinematics_eef(z_out[k]) for k in range(N + 1)])
    return PlannedTrajectory(s=s_grid, z=z_out, eef=eef, u=u_out,
                             gammas=g_out, attractors=attrs)


def target_pose(traj: PlannedTrajectory, t: float, duration: float, height: float):
    """Reference (q_t, theta_t) at mission time t from the planned trajectory.

    The path parameter advances linearly, s = t / duration clamped to [0, 1];
    configurations are interpolated linearly between stored samples.
    """
    if duration <= 0.0:
        raise PlannerError("duration must be positive")
    s = min(max(t / duration, 0.0), 1.0)
    k = int(np.searchsorted(traj.s, s, side="right") - 1)
    k = min(max(k, 0), len(traj.s) - 2)
    w = (s - traj.s[k]) / (traj.s[k + 1] - traj.s[k])
    z = (1.0 - w) * traj.z[k] + w * traj.z[k + 1]
    q_t = np.array([z[0], z[1], height, 0.0, 0.0, z[2]])
    theta_t = np.array([z[3], 0.0, z[4]])
    return q_t, theta_t
