"""Rigid-body model of the tilted-rotor hexarotor with attached arm.

Generalized coordinates q = [position; ZYX Euler angles] in R^6.  The arm is
not part of the generalized coordinates; its reaction on the base enters the
plant as part of the lumped disturbance, and its joints follow commanded
references through a critically damped second-order tracking law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PITCH_MARGIN = 1e-3


class EulerSingularityError(RuntimeError):
    """Pitch too close to +-pi/2 for the Euler-rate map to be regular."""


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation(phi) -> np.ndarray:
    """Body-to-world rotation for ZYX Euler angles phi = [roll, pitch, yaw]."""
    r, p, y = phi
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def _check_pitch(phi):
    if abs(phi[1]) >= math.pi / 2 - PITCH_MARGIN:
        raise EulerSingularityError(f"pitch {phi[1]:.4f} too close to +-pi/2")


def euler_rate_map(phi) -> np.ndarray:
    """Q with body angular velocity omega = Q @ phidot, phi = [roll, pitch, yaw]."""
    _check_pitch(phi)
    r, p, _ = phi
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    return np.array([[1.0, 0.0, -sp],
                     [0.0, cr, sr * cp],
                     [0.0, -sr, cr * cp]])


def euler_rate_map_dot(phi, phidot) -> np.ndarray:
    """Time derivative of Q along (phi, phidot)."""
    r, p, _ = phi
    rd, pd, _ = phidot
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    return np.array([
        [0.0, 0.0, -cp * pd],
        [0.0, -sr * rd, cr * cp * rd - sr * sp * pd],
        [0.0, -cr * rd, -sr * cp * rd - cr * sp * pd]])


@dataclass
class ModelParams:
    """True plant parameters plus the controller's nominal copies."""

    m: float = 3.5
    J: np.ndarray = field(default_factory=lambda: np.diag([0.055, 0.055, 0.095]))
    L: float = 0.278
    alpha_p: float = math.pi / 12
    k_f: float = 0.016
    g: float = 9.81
    m_hat: float | None = None
    J_hat: np.ndarray | None = None
    thrust_sat: tuple = (0.0, 18.0)  # plant-side physical saturation, wider than the control band

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.m <= 0 or self.g <= 0:
            raise ValueError("mass and gravity must be positive")
        if not (0.0 < self.alpha_p < math.pi / 2):
            raise ValueError("motor tilt must lie in (0, pi/2)")
        if np.abs(self.J - self.J.T).max() > 1e-12 or np.linalg.eigvalsh(self.J).min() <= 0:
            raise ValueError("J must be symmetric positive definite")
        if self.m_hat is None:
            self.m_hat = self.m
        if self.J_hat is None:
            self.J_hat = self.J.copy()
        else:
            self.J_hat = np.asarray(self.J_hat, dtype=float)

    def pick(self, nominal: bool):
        return (self.m_hat, self.J_hat) if nominal else (self.m, self.J)


def mass_matrix(phi, params: ModelParams, nominal: bool = False) -> np.ndarray:
    m, J = params.pick(nominal)
    Q = euler_rate_map(phi)
    M = np.zeros((6, 6))
    M[:3, :3] = m * np.eye(3)
    M[3:, 3:] = Q.T @ J @ Q
    return M


def coriolis_vec(phi, phidot, params: ModelParams, nominal: bool = False) -> np.ndarray:
    m, J = params.pick(nominal)
    Q = euler_rate_map(phi)
    Qd = euler_rate_map_dot(phi, phidot)
    pd = np.asarray(phidot, dtype=float)
    w = Q @ pd
    C = np.zeros(6)
    C[3:] = Q.T @ (J @ (Qd @ pd) + skew(w) @ (J @ w))
    return C


def gravity_vec(params: ModelParams, nominal: bool = False) -> np.ndarray:
    m, _ = params.pick(nominal)
    G = np.zeros(6)
    G[2] = m * params.g
    return G


def allocation_body(params: ModelParams) -> np.ndarray:
    """Constant thrust-to-wrench matrix in the body frame (6 tilted rotors)."""
    sa, ca = math.sin(params.alpha_p), math.cos(params.alpha_p)
    P1 = params.L * ca + params.k_f * sa
    P2 = params.L * sa - params.k_f * ca
    h = 0.5
    r3 = math.sqrt(3.0) / 2.0
    return np.array([
        [h * sa, -sa, h * sa, h * sa, -sa, h * sa],
        [-r3 * sa, 0.0, r3 * sa, -r3 * sa, 0.0, r3 * sa],
        [ca, ca, ca, ca, ca, ca],
        [-h * P1, -P1, -h * P1, h * P1, P1, h * P1],
        [r3 * P1, 0.0, -r3 * P1, -r3 * P1, 0.0, r3 * P1],
        [P2, -P2, P2, -P2, P2, -P2]])


def allocation(phi, params: ModelParams) -> np.ndarray:
    """B(phi) mapping the six rotor thrusts to the generalized wrench."""
    R = rotation(phi)
    Q = euler_rate_map(phi)
    Bw = np.zeros((6, 6))
    Bw[:3, :3] = R
    Bw[3:, 3:] = Q.T
    return Bw @ allocation_body(params)


def hover_thrust(params: ModelParams) -> float:
    """Per-rotor thrust balancing gravity at level attitude."""
    return params.m * params.g / (6.0 * math.cos(params.alpha_p))


@dataclass
class VehicleState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(6))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thetadot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qdot = np.asarray(self.qdot, dtype=float).copy()
        self.theta = np.asarray(self.theta, dtype=float).copy()
        self.thetadot = np.asarray(self.thetadot, dtype=float).copy()

    def copy(self) -> "VehicleState":
        return VehicleState(self.q, self.qdot, self.theta, self.thetadot)


ARM_TRACK_GAIN = 20.0  # [1/s], critically damped joint tracking


def step(state: VehicleState, T, theta_d, thetadot_d, thetaddot_d, d_true, dt,
         params: ModelParams, arm_gain: float = ARM_TRACK_GAIN) -> VehicleState:
    """Advance the true plant one step (semi-implicit Euler).

    The injected lumped disturbance d_true enters as the external generalized
    wrench; rotor thrusts saturate at the physical band before allocation.
    """
    if not (0.0 < dt <= 0.01):
        raise ValueError("dt must lie in (0, 0.01]")
    phi = state.q[3:]
    _check_pitch(phi)
    T = np.clip(np.asarray(T, dtype=float), params.thrust_sat[0], params.thrust_sat[1])
    M = mass_matrix(phi, params)
    C = coriolis_vec(phi, state.qdot[3:], params)
    G = gravity_vec(params)
    tau = allocation(phi, params) @ T
    qddot = np.linalg.solve(M, tau + np.asarray(d_true, dtype=float) - C - G)
    if not np.all(np.isfinite(qddot)):
        raise RuntimeError("non-finite acceleration in plant step")

    new = state.copy()
    new.qdot = state.qdot + dt * qddot
    new.q = state.q + dt * new.qdot

    thddot = (np.asarray(thetaddot_d, dtype=float)
              + 2.0 * arm_gain * (np.asarray(thetadot_d, dtype=float) - state.thetadot)
              + arm_gain ** 2 * (np.asarray(theta_d, dtype=float) - state.theta))
    new.thetadot = state.thetadot + dt * thddot
    new.theta = state.theta + dt * new.thetadot
    return new
