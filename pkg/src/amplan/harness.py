"""Scenario ingestion, pipeline orchestration, metrics and file emission.

A scenario file describes the world box, the obstacle superquadrics, the start
configuration and the goal pose, plus optional parameter overrides; defaults
follow the reference tuning.  The pipeline builds the clearance diagram, plans
a whole-body trajectory along the solution path, simulates the closed-loop
mission under a wind disturbance, and reduces everything to a small metrics
report.  All emitted files use fixed float formatting so identical inputs
produce byte-identical outputs.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from . import control as ctl
from . import dynamics as dyn
from . import voronoi as vor
from .geometry import Superquadric2, closest_pair
from .planner import (ObstacleSet, PlannedTrajectory, PlannerParams,
                      VehicleGeometry, _derivatives, attractors_from_path,
                      integrate_em, target_pose)
from .qp import ActiveSetSolver


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario description."""


class HarnessError(RuntimeError):
    """Pipeline failure outside scenario validation."""


SCENARIO_FORMAT = 1
_ENV_DIGITS = "AMPLAN_DIGITS"

# Node-snap radius [m] for the clearance graph: collapses the pseudo-triple
# points left by the straight-bisector approximation between unequal shapes
# (their spread grows with shape disparity; well below any edge length here).
GRAPH_SNAP = 0.15


def _emit_digits() -> int:
    raw = os.environ.get(_ENV_DIGITS, "")
    if not raw:
        return 17
    try:
        d = int(raw)
    except ValueError as exc:
        raise HarnessError(f"{_ENV_DIGITS} must be an integer, got {raw!r}") from exc
    if not (1 <= d <= 17):
        raise HarnessError(f"{_ENV_DIGITS} must lie in [1, 17], got {d}")
    return d


def _fmt(x, digits=None) -> str:
    return format(float(x), f".{digits or _emit_digits()}g")


@dataclass
class WindProfile:
    """Smoothed square-wave force on one translational axis, plus optional
    band-limited noise (zero by default so runs stay deterministic)."""

    amplitude: float = 2.0
    period: float = 12.0
    smoothing: float = 0.35
    axis: int = 0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.period <= 0.0 or self.smoothing <= 0.0:
            raise ScenarioError("wind.period and wind.smoothing must be positive")
        if self.axis not in (0, 1, 2):
            raise ScenarioError("wind.axis must be 0, 1 or 2")
        if self.noise_std < 0.0:
            raise ScenarioError("wind.noise_std must be nonnegative")

    def force(self, t: float) -> np.ndarray:
        d = np.zeros(6)
        d[self.axis] = self.amplitude * math.tanh(
            math.sin(2.0 * math.pi * t / self.period) / self.smoothing)
        return d


@dataclass
class Scenario:
    name: str
    world_box: tuple
    obstacles: list
    start: np.ndarray          # planar configuration [x, y, psi, th1, th3]
    goal: np.ndarray           # end-effector goal pose [x, y, heading]
    flight_height: float = 1.0
    duration: float = 20.0
    settle_time: float = 4.0
    dt: float = 0.005
    wind: WindProfile = field(default_factory=WindProfile)
    vehicle: VehicleGeometry = field(default_factory=VehicleGeometry)
    planner: PlannerParams = field(default_factory=PlannerParams)
    gains: ctl.GainSet = field(default_factory=ctl.GainSet)
    safety: ctl.SafetyParams = field(default_factory=ctl.SafetyParams)
    model: dyn.ModelParams = field(default_factory=dyn.ModelParams)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.start.shape != (5,):
            raise ScenarioError("start: must be [x, y, psi, th1, th3]")
        if self.goal.shape != (3,):
            raise ScenarioError("goal: must be [x, y, heading]")
        if len(self.world_box) != 4 or not (self.world_box[0] < self.world_box[2]
                                            and self.world_box[1] < self.world_box[3]):
            raise ScenarioError("world_box: must be [xmin, ymin, xmax, ymax] with "
                                "positive extent")
        for t in (self.flight_height, self.duration, self.settle_time, self.dt):
            if not np.isfinite(t):
                raise ScenarioError("timing fields must be finite")
        if self.duration <= 0.0 or self.dt <= 0.0 or self.settle_time < 0.0:
            raise ScenarioError("need duration > 0, dt > 0, settle_time >= 0")
        self._check_obstacles()
        self._check_start_clear()

    def _check_obstacles(self):
        xmin, ymin, xmax, ymax = self.world_box
        g = np.linspace(-math.pi, math.pi, 128, endpoint=False)
        for i, sq in enumerate(self.obstacles):
            pts = sq.boundary_point(g)
            if (pts[:, 0].min() < xmin or pts[:, 0].max() > xmax
                    or pts[:, 1].min() < ymin or pts[:, 1].max() > ymax):
                raise ScenarioError(f"obstacles[{i}]: not contained in world_box")
        for i in range(len(self.obstacles)):
            for j in range(i + 1, len(self.obstacles)):
                if closest_pair(self.obstacles[i], self.obstacles[j]).gap <= 0.0:
                    raise ScenarioError(f"obstacles {i} and {j} overlap")

    def _check_start_clear(self):
        parts = self.vehicle.part_superquadrics(self.start)
        for p, part in enumerate(parts):
            for o, sq in enumerate(self.obstacles):
                if closest_pair(part, sq).gap <= 0.0:
                    raise ScenarioError(
                        f"start: vehicle part {p} collides with obstacles[{o}]")


def _require(raw: dict, key: str):
    if key not in raw:
        raise ScenarioError(f"{key}: required field missing")
    return raw[key]


def _obstacle_from_dict(d: dict, path: str) -> Superquadric2:
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: must be a mapping")
    for key in ("a1", "a2", "eps", "center"):
        if key not in d:
            raise ScenarioError(f"{path}.{key}: required field missing")
    try:
        return Superquadric2(a1=float(d["a1"]), a2=float(d["a2"]),
                             eps=float(d["eps"]), angle=float(d.get("angle", 0.0)),
                             center=tuple(float(c) for c in d["center"]))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _sub_params(raw: dict, key: str, factory, path_types=(int, float)):
    """Build a parameter dataclass from an optional override mapping."""
    overrides = raw.get(key, {})
    if overrides is None:
        overrides = {}
    if not isinstance(overrides, dict):
        raise ScenarioError(f"{key}: must be a mapping of overrides")
    allowed = {f.name for f in fields(factory)}
    kwargs = {}
    for k, v in overrides.items():
        if k not in allowed:
            raise ScenarioError(f"{key}.{k}: unknown field")
        kwargs[k] = v
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{key}: {exc}") from exc


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file, applying default parameters."""
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario file is not valid structured text: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a top-level mapping")
    if int(raw.get("format", -1)) != SCENARIO_FORMAT:
        raise ScenarioError(f"format: expected {SCENARIO_FORMAT}")

    obstacles_raw = _require(raw, "obstacles")
    if obstacles_raw is None:
        obstacles_raw = []
    obstacles = [_obstacle_from_dict(d, f"obstacles[{i}]")
                 for i, d in enumerate(obstacles_raw)]

    try:
        return Scenario(
            name=str(raw.get("name", "scenario")),
            world_box=tuple(float(v) for v in _require(raw, "world_box")),
            obstacles=obstacles,
            start=_require(raw, "start"),
            goal=_require(raw, "goal"),
            flight_height=float(raw.get("flight_height", 1.0)),
            duration=float(raw.get("duration", 20.0)),
            settle_time=float(raw.get("settle_time", 4.0)),
            dt=float(raw.get("dt", 0.005)),
            wind=_sub_params(raw, "wind", WindProfile),
            planner=_sub_params(raw, "planner", PlannerParams),
            safety=_sub_params(raw, "safety", ctl.SafetyParams),
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


# --- ellipse ablation ----------------------------------------------------------

def ellipse_obstacles(obstacles: list) -> list:
    """Circumscribing-ellipse model of each obstacle (exponent 1, same center).

    The semi-axes are scaled by the shape's maximal radial excess over the
    same-axes ellipse, 2^((1 - eps) / 2) for eps < 1, so the ellipse contains
    the original shape and touches it along the diagonals.
    """
    out = []
    for sq in obstacles:
        scale = max(1.0, 2.0 ** ((1.0 - sq.eps) / 2.0))
        out.append(Superquadric2(a1=sq.a1 * scale, a2=sq.a2 * scale, eps=1.0,
                                 angle=sq.angle, center=sq.center))
    return out


def _model_obstacles(s: Scenario, mode: str) -> list:
    if mode == "sq":
        return list(s.obstacles)
    if mode == "ellipse":
        return ellipse_obstacles(s.obstacles)
    raise ScenarioError(f"mode must be 'sq' or 'ellipse', got {mode!r}")


# --- planning stage ------------------------------------------------------------

@dataclass
class PlanResult:
    traj: PlannedTrajectory
    cells: list | None
    graph: object | None
    path: object | None
    plan_time: float           # wall time of the equilibrium integration only
    grad_norms: np.ndarray     # |dW/dz| at every trajectory sample


def equilibrium_residuals(traj: PlannedTrajectory, geom: VehicleGeometry,
                          obstacles, params: PlannerParams) -> np.ndarray:
    """Norm of the configuration gradient of W at every stored sample."""
    obs = ObstacleSet(list(obstacles))
    P = (traj.gammas.shape[1] // 2) if traj.gammas.size else 0
    out = np.empty(len(traj.s))
    for k in range(len(traj.s)):
        gz, _, _, _ = _derivatives(geom, obs, params, traj.z[k],
                                   traj.gammas[k, :P], traj.gammas[k, P:],
                                   traj.u[k])
        out[k] = float(np.linalg.norm(gz))
    return out


def plan(s: Scenario, mode: str = "sq", n_s: int | None = None) -> PlanResult:
    """Clearance diagram, path search and equilibrium-manifold integration."""
    obstacles = _model_obstacles(s, mode)
    params = s.planner
    if n_s is not None:
        params = PlannerParams(eta=params.eta, alpha=params.alpha,
                               k_tgt=params.k_tgt, k_reg=params.k_reg,
                               n_s=int(n_s), stiffness=params.stiffness,
                               cond_limit=params.cond_limit,
                               prerelax_tol=params.prerelax_tol,
                               prerelax_max_iter=params.prerelax_max_iter)
    eef0 = s.vehicle.forward_kinematics_eef(s.start)

    cells = graph = path = None
    if obstacles:
        try:
            cells = vor.build_cells(obstacles, s.world_box)
            graph = vor.build_graph(cells, merge_radius=GRAPH_SNAP)
            path = vor.solve_path(graph, eef0[:2], s.goal[:2])
        except vor.VoronoiError as exc:
            raise HarnessError(f"clearance diagram stage failed: {exc}") from exc
        attractors = attractors_from_path(path, eef0[2], s.goal)
    else:
        attractors = [np.asarray(s.goal, dtype=float)]

    t0 = time.perf_counter()
    traj = integrate_em(s.vehicle, obstacles, s.start, attractors, params)
    plan_time = time.perf_counter() - t0
    grads = equilibrium_residuals(traj, s.vehicle, obstacles, params)
    return PlanResult(traj=traj, cells=cells, graph=graph, path=path,
                      plan_time=plan_time, grad_norms=grads)


# --- closed-loop simulation ----------------------------------------------------

@dataclass
class Telemetry:
    t: np.ndarray
    q: np.ndarray              # (N, 6)
    qdot: np.ndarray           # (N, 6)
    theta: np.ndarray          # (N, 3)
    thrust: np.ndarray         # (N, 6)
    d_hat: np.ndarray          # (N, 6)
    d_true: np.ndarray         # (N, 6)
    h_min: np.ndarray          # (N,) min barrier value over pairs
    feasible: np.ndarray       # (N,) bool


def _dob_rest_state(q, params: dyn.ModelParams) -> ctl.DobState:
    """Observer state at the disturbance-free hover equilibrium."""
    state = ctl.DobState.initialize(q)
    phi = np.asarray(q, dtype=float)[3:]
    M_hat = dyn.mass_matrix(phi, params, nominal=True)
    state.xp[0] = np.linalg.solve(M_hat, dyn.gravity_vec(params, nominal=True))
    return state


def simulate(s: Scenario, traj: PlannedTrajectory, mode: str = "sq",
             seed: int | None = None) -> Telemetry:
    """Run the full mission: hover settle phase, then trajectory tracking.

    Each tick: observer update, proxy refresh, constraint rows, outer-loop QP,
    inner-loop thrust from the pre-update references (so the thrust-band rows
    are exact), then reference integration and one plant step.
    """
    geom = s.vehicle
    gains, safety, model = s.gains, s.safety, s.model
    obstacles2d = _model_obstacles(s, mode)
    obstacles3d = [ctl.extrude_obstacle(o, safety.obstacle_height)
                   for o in obstacles2d]
    tracker = ctl.ProxyTracker(geom, obstacles2d)
    solver = ActiveSetSolver()

    q0 = np.array([s.start[0], s.start[1], s.flight_height, 0.0, 0.0, s.start[2]])
    theta0 = np.array([s.start[3], 0.0, s.start[4]])
    state = dyn.VehicleState(q=q0, theta=theta0)
    q_d = q0.copy()
    theta_d = theta0.copy()
    thetadot_d = np.zeros(3)
    dob = _dob_rest_state(q0, model)
    T = np.linalg.solve(dyn.allocation(q0[3:], model),
                        dyn.gravity_vec(model, nominal=True))
    prev_x = None

    dt = s.dt
    n = int(round((s.settle_time + s.duration) / dt))
    noise = np.zeros((n, 6))
    if s.wind.noise_std > 0.0:
        rng = np.random.default_rng(0 if seed is None else seed)
        noise[:, s.wind.axis] = s.wind.noise_std * rng.standard_normal(n)

    tel = Telemetry(t=np.empty(n), q=np.empty((n, 6)), qdot=np.empty((n, 6)),
                    theta=np.empty((n, 3)), thrust=np.empty((n, 6)),
                    d_hat=np.empty((n, 6)), d_true=np.empty((n, 6)),
                    h_min=np.empty(n), feasible=np.empty(n, dtype=bool))

    for k in range(n):
        t = k * dt
        dob, d_hat = ctl.dob_update(dob, state.q, state.qdot, T, model, gains, dt)
        if t < s.settle_time:
            q_t, theta_t = q0, theta0
        else:
            q_t, theta_t = target_pose(traj, t - s.settle_time, s.duration,
                                       s.flight_height)
        proxies = tracker.refresh(state.q, state.theta)
        A1, b1 = ctl.thrust_limit_rows(q_d, state.q, state.qdot, d_hat, model,
                                       gains, safety.t_min, safety.t_max)
        A2, b2, h_vals = ctl.cbf_rows(geom, obstacles3d, proxies, state.q,
                                      state.qdot, state.theta, state.thetadot,
                                      q_d, gains, safety, h_threshold=4.0)
        res = ctl.outer_loop(solver, q_t, theta_t, q_d, theta_d, thetadot_d,
                             np.vstack([A1, A2]), np.concatenate([b1, b2]),
                             gains, prev_x)
        prev_x = res.x
        T = ctl.inner_loop(q_d, res.qdot_d, state.q, state.qdot, d_hat, model,
                           gains)
        d_true = s.wind.force(t) + noise[k]

        tel.t[k] = t
        tel.q[k] = state.q
        tel.qdot[k] = state.qdot
        tel.theta[k] = state.theta
        tel.thrust[k] = T
        tel.d_hat[k] = d_hat
        tel.d_true[k] = d_true
        tel.h_min[k] = h_vals.min() if h_vals.size else math.inf
        tel.feasible[k] = res.feasible

        q_d = q_d + dt * res.qdot_d
        thetadot_d = thetadot_d + dt * res.thetaddot_d
        theta_d = theta_d + dt * thetadot_d
        state = dyn.step(state, T, theta_d, thetadot_d, res.thetaddot_d,
                         d_true, dt, model)
    return tel


# --- metrics -------------------------------------------------------------------

@dataclass
class MetricsReport:
    plan_time: float
    min_distance: float
    arc_length: float
    jerkiness: float
    h_co_min: float = math.nan
    thrust_min: float = math.nan
    thrust_max: float = math.nan
    infeasible_ticks: int = 0
    total_ticks: int = 0

    def lines(self):
        out = ["amplan metrics v1"]
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int":
                out.append(f"{f.name} {int(v)}")
            else:
                out.append(f"{f.name} {_fmt(v)}")
        return out


def min_distance_profile(traj: PlannedTrajectory, geom: VehicleGeometry,
                         obstacles: list) -> np.ndarray:
    """Min signed gap between any vehicle part and any obstacle per sample.

    Always evaluated against the shapes passed in (the caller supplies the
    original obstacle set, regardless of the planning mode); the batched
    proxy tracker warm-starts the closest-pair solves along the trajectory.
    """
    if not obstacles:
        return np.full(len(traj.s), math.inf)
    tracker = ctl.ProxyTracker(geom, list(obstacles))
    out = np.empty(len(traj.s))
    for k in range(len(traj.s)):
        z = traj.z[k]
        q = np.array([z[0], z[1], 0.0, 0.0, 0.0, z[2]])
        theta = np.array([z[3], 0.0, z[4]])
        out[k] = min(gap for (_, _, _, gap) in tracker.refresh(q, theta))
    return out


def metrics(traj: PlannedTrajectory, telemetry: Telemetry | None, s: Scenario,
            plan_time: float) -> MetricsReport:
    """Reduce a planned trajectory (and optional telemetry) to the report."""
    if len(traj.s) < 4:
        raise HarnessError("metrics needs at least 4 trajectory samples")
    pos = traj.eef[:, :2]
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    arc_length = float(seg.sum())

    ds = float(traj.s[1] - traj.s[0])
    if len(pos) >= 5 and arc_length > 0.0:
        d3 = (pos[4:] - 2.0 * pos[3:-1] + 2.0 * pos[1:-3] - pos[:-4]) \
            / (2.0 * ds ** 3)
        jerkiness = float(np.mean(np.sum(d3 ** 2, axis=1))) / arc_length
    else:
        jerkiness = 0.0

    min_distance = float(min_distance_profile(traj, s.vehicle, s.obstacles).min())

    report = MetricsReport(plan_time=plan_time, min_distance=min_distance,
                           arc_length=arc_length, jerkiness=jerkiness)
    if telemetry is not None:
        report.h_co_min = float(telemetry.h_min.min())
        feas = telemetry.feasible
        if feas.any():
            report.thrust_min = float(telemetry.thrust[feas].min())
            report.thrust_max = float(telemetry.thrust[feas].max())
        report.infeasible_ticks = int((~feas).sum())
        report.total_ticks = int(len(feas))
    return report


def run_pipeline(s: Scenario, mode: str = "sq", n_s: int | None = None,
                 seed: int | None = None):
    """Plan, simulate and score a scenario; returns (PlanResult, Telemetry, report)."""
    pr = plan(s, mode, n_s=n_s)
    tel = simulate(s, pr.traj, mode, seed=seed)
    report = metrics(pr.traj, tel, s, pr.plan_time)
    return pr, tel, report


# --- file emission -------------------------------------------------------------

_TRAJ_HEADER = ("s,x,y,psi,theta1,theta3,eef_x,eef_y,eef_yaw,u_x,u_y,u_yaw")
_TEL_HEADER = ("t,"
               + ",".join(f"q{i}" for i in range(6)) + ","
               + ",".join(f"qdot{i}" for i in range(6)) + ","
               + ",".join(f"theta{i}" for i in range(3)) + ","
               + ",".join(f"T{i}" for i in range(6)) + ","
               + ",".join(f"dhat{i}" for i in range(6)) + ","
               + ",".join(f"dtrue{i}" for i in range(6)) + ","
               + "h_min,feasible")


def _write(path, text):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as exc:
        raise HarnessError(f"cannot write {path}: {exc}") from exc


def trajectory_csv(traj: PlannedTrajectory) -> str:
    rows = [_TRAJ_HEADER]
    for k in range(len(traj.s)):
        vals = ([traj.s[k]] + list(traj.z[k]) + list(traj.eef[k])
                + list(traj.u[k]))
        rows.append(",".join(_fmt(v) for v in vals))
    return "\n".join(rows) + "\n"


def telemetry_csv(tel: Telemetry) -> str:
    rows = [_TEL_HEADER]
    for k in range(len(tel.t)):
        vals = ([tel.t[k]] + list(tel.q[k]) + list(tel.qdot[k])
                + list(tel.theta[k]) + list(tel.thrust[k]) + list(tel.d_hat[k])
                + list(tel.d_true[k]) + [tel.h_min[k]])
        rows.append(",".join(_fmt(v) for v in vals) + f",{int(tel.feasible[k])}")
    return "\n".join(rows) + "\n"


def emit(out_dir, traj: PlannedTrajectory, telemetry: Telemetry | None,
         report: MetricsReport, cells=None, graph=None):
    """Write trajectory/telemetry CSVs, the diagram dump and the metrics file."""
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "trajectory.csv"), trajectory_csv(traj))
    if telemetry is not None:
        _write(os.path.join(out_dir, "telemetry.csv"), telemetry_csv(telemetry))
    if cells is not None and graph is not None:
        _write(os.path.join(out_dir, "voronoi.txt"), vor.dump_diagram(cells, graph))
    _write(os.path.join(out_dir, "metrics.txt"), "\n".join(report.lines()) + "\n")


def _parse_csv(text, expected_header):
    lines = text.strip().split("\n")
    if not lines or lines[0] != expected_header:
        raise HarnessError("unexpected CSV header")
    ncol = len(expected_header.split(","))
    data = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != ncol:
            raise HarnessError(f"CSV row has {len(parts)} columns, expected {ncol}")
        data.append([float(v) for v in parts])
    return np.asarray(data, dtype=float)


def load_trajectory_csv(path) -> PlannedTrajectory:
    with open(path, "r") as f:
        m = _parse_csv(f.read(), _TRAJ_HEADER)
    return PlannedTrajectory(s=m[:, 0], z=m[:, 1:6], eef=m[:, 6:9],
                             u=m[:, 9:12], gammas=np.zeros((len(m), 0)),
                             attractors=[])


def load_telemetry_csv(path) -> Telemetry:
    with open(path, "r") as f:
        m = _parse_csv(f.read(), _TEL_HEADER)
    return Telemetry(t=m[:, 0], q=m[:, 1:7], qdot=m[:, 7:13], theta=m[:, 13:16],
                     thrust=m[:, 16:22], d_hat=m[:, 22:28], d_true=m[:, 28:34],
                     h_min=m[:, 34], feasible=m[:, 35].astype(bool))


def load_metrics(path) -> MetricsReport:
    with open(path, "r") as f:
        lines = f.read().strip().split("\n")
    if not lines or lines[0] != "amplan metrics v1":
        raise HarnessError("unrecognized metrics file")
    vals = {}
    for ln in lines[1:]:
        key, _, raw = ln.partition(" ")
        vals[key] = raw
    kwargs = {}
    for f_ in fields(MetricsReport):
        if f_.name not in vals:
            raise HarnessError(f"metrics file missing field {f_.name}")
        kwargs[f_.name] = int(vals[f_.name]) if f_.type == "int" \
            else float(vals[f_.name])
    return MetricsReport(**kwargs)
