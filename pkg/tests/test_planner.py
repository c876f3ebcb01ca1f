import math

import numpy as np
import pytest

from amplan import planner as pl
from amplan.geometry import Superquadric2, closest_pair, stiffness
from amplan.voronoi import SolutionPath
from oracles import central_diff_gradient


def far_obstacle():
    return pl.ObstacleSet([Superquadric2(a1=0.3, a2=0.3, eps=1.0, center=(50.0, 50.0))])


class TestForwardKinematics:
    def test_straight_arm(self):
        geom = pl.VehicleGeometry()
        eef = geom.forward_kinematics_eef([0, 0, 0, 0, 0])
        np.testing.assert_allclose(eef, [0.65, 0.0, 0.0], atol=1e-12)

    def test_translated_rotated_base(self):
        geom = pl.VehicleGeometry()
        eef = geom.forward_kinematics_eef([1.0, 2.0, math.pi / 2, 0.0, 0.0])
        np.testing.assert_allclose(eef, [1.0, 2.65, math.pi / 2], atol=1e-12)

    def test_elbow_bend(self):
        geom = pl.VehicleGeometry()
        eef = geom.forward_kinematics_eef([0, 0, 0, math.pi / 2, -math.pi / 2])
        # shoulder points +y from the base offset, forearm folds back to +x
        np.testing.assert_allclose(eef, [0.15 + 0.25, 0.25, 0.0], atol=1e-12)

    def test_rotor_disk_positions(self):
        geom = pl.VehicleGeometry()
        centers, angles, _ = geom.part_poses(np.zeros((1, 5)))
        np.testing.assert_allclose(centers[0, 0], [geom.rotor_arm, 0.0], atol=1e-12)
        np.testing.assert_allclose(
            centers[0, 3], [-geom.rotor_arm, 0.0], atol=1e-12)
        assert np.all(angles[0, :6] == 0.0)

    def test_part_shapes_match_batched_poses(self, rng):
        geom = pl.VehicleGeometry()
        z = rng.uniform(-1, 1, size=5)
        parts = geom.part_superquadrics(z)
        centers, angles, _ = geom.part_poses(z[None, :])
        for k, sq in enumerate(parts):
            np.testing.assert_allclose(sq.center, centers[0, k], atol=1e-12)
            assert sq.angle == pytest.approx(angles[0, k], abs=1e-12)


class TestPotential:
    def scalar_terms(self, geom, obs, z, Gp, Go, stiff):
        parts = geom.part_superquadrics(z)
        pi, oi = pl.pair_index(geom.n_parts, len(obs))
        out = np.empty(pi.size)
        for q in range(pi.size):
            p = parts[pi[q]].boundary_point(Gp[q])
            o = obs.shapes[oi[q]].boundary_point(Go[q])
            F = obs.shapes[oi[q]].inside_outside(p)
            k = stiffness(F - stiff.d_prime, stiff)
            out[q] = 0.5 * k * float((p - o) @ (p - o))
        return out

    def test_pair_terms_match_scalar_recomputation(self, rng):
        geom = pl.VehicleGeometry()
        obs = pl.ObstacleSet([
            Superquadric2(a1=0.4, a2=0.3, eps=0.5, angle=0.3, center=(1.5, 0.2)),
            Superquadric2(a1=0.3, a2=0.3, eps=1.0, center=(-1.0, 1.0))])
        params = pl.PlannerParams()
        for _ in range(5):
            z = rng.uniform(-0.5, 0.5, size=5)
            P = geom.n_parts * len(obs)
            Gp = rng.uniform(-math.pi, math.pi, size=P)
            Go = rng.uniform(-math.pi, math.pi, size=P)
            got = pl.pair_terms(geom, obs, z[None, :], Gp, Go, params.stiffness)[0]
            want = self.scalar_terms(geom, obs, z, Gp, Go, params.stiffness)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)

    def test_target_term_arithmetic(self):
        geom = pl.VehicleGeometry()
        params = pl.PlannerParams()
        z = np.zeros(5)
        P = geom.n_parts
        eef = geom.forward_kinematics_eef(z)
        base = pl.potential(geom, far_obstacle(), params, z, np.zeros(P), np.zeros(P), eef)
        w = pl.potential(geom, far_obstacle(), params, z, np.zeros(P), np.zeros(P),
                         eef + np.array([0.1, 0.0, 0.0]))
        # 0.5 * 0.1^2 * 1600 on top of the (residual-free) proxy background
        assert w - base == pytest.approx(8.0, abs=1e-9)

    def test_angle_residual_wraps(self):
        geom = pl.VehicleGeometry()
        params = pl.PlannerParams()
        z = np.zeros(5)
        P = geom.n_parts
        eef = geom.forward_kinematics_eef(z)
        base = pl.potential(geom, far_obstacle(), params, z, np.zeros(P), np.zeros(P), eef)
        w = pl.potential(geom, far_obstacle(), params, z, np.zeros(P), np.zeros(P),
                         eef + np.array([0.0, 0.0, 2.0 * math.pi]))
        assert w - base == pytest.approx(0.0, abs=1e-9)


class TestDerivatives:
    def setup_case(self, rng):
        geom = pl.VehicleGeometry()
        obs = pl.ObstacleSet([
            Superquadric2(a1=0.4, a2=0.35, eps=0.8, center=(1.2, 0.4))])
        params = pl.PlannerParams()
        z = np.array([0.1, -0.05, 0.2, 0.3, -0.2])
        P = geom.n_parts * len(obs)
        Gp = rng.uniform(-math.pi, math.pi, size=P)
        Go = rng.uniform(-math.pi, math.pi, size=P)
        u = geom.forward_kinematics_eef(z) + np.array([0.2, 0.1, 0.1])
        return geom, obs, params, z, Gp, Go, u

    def test_configuration_gradient(self, rng):
        geom, obs, params, z, Gp, Go, u = self.setup_case(rng)
        gz, H, J, gG = pl._derivatives(geom, obs, params, z, Gp, Go, u)
        oracle = central_diff_gradient(
            lambda zz: pl.potential(geom, obs, params, zz, Gp, Go, u), z, h=1e-5)
        np.testing.assert_allclose(gz, oracle, atol=1e-4)
        np.testing.assert_allclose(H, H.T, atol=1e-12)

    def test_eef_jacobian(self, rng):
        geom, obs, params, z, Gp, Go, u = self.setup_case(rng)
        _, _, J, _ = pl._derivatives(geom, obs, params, z, Gp, Go, u)
        for k in range(5):
            e = np.zeros(5)
            e[k] = 1e-5
            d = (geom.forward_kinematics_eef(z + e) - geom.forward_kinematics_eef(z - e)) / 2e-5
            np.testing.assert_allclose(J[:, k], d, atol=1e-5)
        np.testing.assert_allclose(J[2], [0, 0, 1, 1, 1], atol=1e-9)

    def test_proxy_gradient(self, rng):
        geom, obs, params, z, Gp, Go, u = self.setup_case(rng)
        _, _, _, gG = pl._derivatives(geom, obs, params, z, Gp, Go, u)
        P = Gp.size

        def w_of_gamma(g):
            return pl.potential(geom, obs, params, z, g[:P], g[P:], u)

        oracle = central_diff_gradient(w_of_gamma, np.concatenate([Gp, Go]), h=1e-5)
        np.testing.assert_allclose(gG, oracle, atol=1e-4)


class TestAttractors:
    def test_normal_flip_toward_heading(self):
        path = SolutionPath(found=True, nodes=np.array([[0.0, 0.0], [1.0, 0.0]]),
                            edge_normals=np.array([math.pi]), cost=1.0)
        attrs = pl.attractors_from_path(path, start_heading=0.0, goal_pose=(2.0, 0.0, 0.1))
        assert len(attrs) == 3
        assert attrs[0][2] == pytest.approx(0.0, abs=1e-12)
        assert attrs[1][2] == pytest.approx(0.0, abs=1e-12)
        assert attrs[2][2] == pytest.approx(0.1, abs=1e-12)

    def test_angles_stay_continuous(self):
        path = SolutionPath(found=True,
                            nodes=np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]]),
                            edge_normals=np.array([3.0, -3.0]), cost=2.0)
        attrs = pl.attractors_from_path(path, start_heading=2.8, goal_pose=(3.0, 1.0, -3.1))
        angles = [a[2] for a in attrs]
        for a, b in zip(angles, angles[1:]):
            assert abs(b - a) < math.pi / 2 + 1e-9

    def test_not_found_raises(self):
        path = SolutionPath(found=False, nodes=np.zeros((0, 2)), edge_normals=np.zeros(0))
        with pytest.raises(pl.PlannerError):
            pl.attractors_from_path(path, 0.0, (0, 0, 0))


class TestIntegration:
    def test_free_space_convergence(self):
        geom = pl.VehicleGeometry()
        params = pl.PlannerParams(n_s=200)
        goal = np.array([1.5, 0.5, 0.5])
        traj = pl.integrate_em(geom, far_obstacle(), np.zeros(5), [goal], params)
        np.testing.assert_allclose(traj.eef[-1][:2], goal[:2], atol=1e-3)
        assert abs(traj.eef[-1][2] - goal[2]) < 1e-2

    def test_step_doubling_consistency(self):
        geom = pl.VehicleGeometry()
        goal = np.array([1.0, 0.3, 0.2])
        t1 = pl.integrate_em(geom, far_obstacle(), np.zeros(5), [goal],
                             pl.PlannerParams(n_s=100))
        t2 = pl.integrate_em(geom, far_obstacle(), np.zeros(5), [goal],
                             pl.PlannerParams(n_s=200))
        assert np.abs(t1.z[-1] - t2.z[-1]).max() < 1e-4

    def test_singular_hessian_raises(self):
        geom = pl.VehicleGeometry()
        params = pl.PlannerParams(k_tgt=np.zeros((3, 3)), k_reg=1.0, n_s=10)
        with pytest.raises(pl.PlannerError):
            pl.integrate_em(geom, far_obstacle(), np.zeros(5), [np.array([1.0, 0.0, 0.0])],
                            params)

    def test_cleared_route_stays_clear(self):
        # attractors detour above the obstacle, mimicking a clearance-path route
        geom = pl.VehicleGeometry()
        shape = Superquadric2(a1=0.35, a2=0.35, eps=1.0, center=(1.6, 0.0))
        obs = pl.ObstacleSet([shape])
        params = pl.PlannerParams(n_s=240)
        attrs = [np.array([1.6, 1.4, 0.0]), np.array([3.3, 1.4, 0.0]),
                 np.array([3.3, 0.2, -0.5])]
        traj = pl.integrate_em(geom, obs, np.zeros(5), attrs, params)
        for k in range(0, len(traj.z), 8):
            for part in geom.part_superquadrics(traj.z[k]):
                assert closest_pair(part, shape).gap > 0.0
        np.testing.assert_allclose(traj.eef[-1][:2], [3.3, 0.2], atol=0.05)

    def test_slow_approach_stops_short_of_face(self):
        # goal pose 0.05 outside the obstacle face: planner reaches it cleanly
        geom = pl.VehicleGeometry()
        shape = Superquadric2(a1=0.35, a2=0.35, eps=1.0, center=(1.6, 0.0))
        obs = pl.ObstacleSet([shape])
        traj = pl.integrate_em(geom, obs, np.zeros(5), [np.array([1.2, 0.0, 0.0])],
                               pl.PlannerParams(n_s=200))
        np.testing.assert_allclose(traj.eef[-1], [1.2, 0.0, 0.0], atol=1e-3)
        gap = min(closest_pair(p, shape).gap for p in geom.part_superquadrics(traj.z[-1]))
        assert gap == pytest.approx(0.05, abs=5e-3)

    def test_determinism(self):
        geom = pl.VehicleGeometry()
        goal = np.array([1.0, 0.4, 0.0])
        a = pl.integrate_em(geom, far_obstacle(), np.zeros(5), [goal],
                            pl.PlannerParams(n_s=64))
        b = pl.integrate_em(geom, far_obstacle(), np.zeros(5), [goal],
                            pl.PlannerParams(n_s=64))
        assert np.array_equal(a.z, b.z)
        assert np.array_equal(a.gammas, b.gammas)


class TestTargetPose:
    def traj(self):
        geom = pl.VehicleGeometry()
        return pl.integrate_em(geom, far_obstacle(), np.zeros(5),
                               [np.array([1.0, 0.0, 0.0])], pl.PlannerParams(n_s=50))

    def test_endpoints_and_clamping(self):
        traj = self.traj()
        q0, th0 = pl.target_pose(traj, 0.0, 30.0, 1.2)
        np.testing.assert_allclose(q0[:2], traj.z[0][:2], atol=1e-12)
        assert q0[2] == 1.2
        np.testing.assert_allclose(q0[3:5], [0.0, 0.0], atol=1e-12)
        q1, th1 = pl.target_pose(traj, 99.0, 30.0, 1.2)
        np.testing.assert_allclose(q1[:2], traj.z[-1][:2], atol=1e-12)
        np.testing.assert_allclose(th1, [traj.z[-1][3], 0.0, traj.z[-1][4]], atol=1e-12)

    def test_interpolation_midway(self):
        traj = self.traj()
        qa, _ = pl.target_pose(traj, 14.999, 30.0, 1.0)
        qb, _ = pl.target_pose(traj, 15.001, 30.0, 1.0)
        assert np.abs(qa - qb).max() < 1e-3

    def test_bad_duration(self):
        with pytest.raises(pl.PlannerError):
            pl.target_pose(self.traj(), 1.0, 0.0, 1.0)
