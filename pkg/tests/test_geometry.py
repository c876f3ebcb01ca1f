import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amplan.geometry import (
    ClosestPairResult,
    GeometryError,
    ProxyPair,
    StiffnessParams,
    Superquadric2,
    Superquadric3,
    closest_pair,
    signed_pow,
    stiffness,
    wrap_angle,
)
from oracles import sampled_gap


def unit_sphere():
    return Superquadric3(1.0, 1.0, 1.0, 1.0, 1.0)


class TestInsideOutside:
    def test_unit_sphere_boundary(self):
        assert unit_sphere().inside_outside([1.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-14)

    def test_unit_sphere_outside(self):
        assert unit_sphere().inside_outside([2.0, 0.0, 0.0]) == pytest.approx(3.0, abs=1e-12)

    def test_box_like_matches_direct_formula(self):
        sq = Superquadric3(1.0, 1.0, 1.0, 0.2, 0.2)
        x, y, z = 0.9, 0.9, 0.0
        expected = (abs(x) ** 10 + abs(y) ** 10) ** 1.0 + abs(z) ** 10 - 1.0
        assert sq.inside_outside([x, y, z]) == pytest.approx(expected, abs=1e-12)

    def test_2d_overload(self):
        sq = Superquadric2(2.0, 1.0, 1.0)
        assert sq.inside_outside([2.0, 0.0]) == pytest.approx(0.0, abs=1e-14)
        assert sq.inside_outside([0.0, 0.5]) < 0.0

    def test_nonfinite_point_rejected(self):
        with pytest.raises(GeometryError):
            unit_sphere().inside_outside([np.nan, 0.0, 0.0])

    def test_invalid_params_rejected(self):
        with pytest.raises(GeometryError):
            Superquadric2(-1.0, 1.0, 1.0)
        with pytest.raises(GeometryError):
            Superquadric2(1.0, 1.0, 2.5)
        with pytest.raises(GeometryError):
            Superquadric3(1, 1, 1, 1, 1, rotation=2 * np.eye(3))


class TestProxyPoint:
    def test_axis_point(self):
        sq = Superquadric3(1.5, 1.0, 0.5, 0.7, 1.3)
        np.testing.assert_allclose(sq.boundary_point(0.0, 0.0), [1.5, 0.0, 0.0], atol=1e-14)

    def test_pole(self):
        sq = Superquadric3(1.5, 1.0, 0.5, 0.7, 1.3)
        np.testing.assert_allclose(sq.boundary_point(math.pi / 2, 0.3), [0.0, 0.0, 0.5], atol=1e-10)

    def test_2d_translated_circle(self):
        sq = Superquadric2(2.0, 2.0, 1.0, center=(1.0, 1.0))
        np.testing.assert_allclose(sq.boundary_point(math.pi), [-1.0, 1.0], atol=1e-12)

    def test_signed_pow_zero(self):
        assert signed_pow(0.0, 0.3) == 0.0


class TestStiffness:
    def test_at_zero(self):
        p = StiffnessParams(1.0, 10.0, 0.5, 0.0)
        assert stiffness(0.0, p) == pytest.approx(1.0 + 5.0)

    def test_limit(self):
        p = StiffnessParams(1.0, 10.0, 0.5, 0.0)
        assert stiffness(1e6, p) == pytest.approx(1.0, abs=1e-9)

    def test_table_values_at_d0(self):
        p = StiffnessParams(1e-7, 1e3, 1.0, 0.0)
        assert stiffness(1.0, p) == pytest.approx(1e-7 + 1e3 * (1 - math.tanh(1.0)) / 2)

    @given(st.floats(-0.4, 0.4), st.floats(1e-3, 1.0))
    def test_monotone_decreasing(self, d1, delta):
        p = StiffnessParams(1e-7, 1e3, 0.1, 0.0)
        assert stiffness(d1, p) > stiffness(d1 + delta, p)
        k = stiffness(d1, p)
        assert p.k_min < k < p.k_min + p.k_max

    def test_invalid_params(self):
        with pytest.raises(GeometryError):
            StiffnessParams(2.0, 1.0, 0.1, 0.0)
        with pytest.raises(GeometryError):
            StiffnessParams(1.0, 2.0, -0.1, 0.0)


def random_convex_sq(rng, box=3.0):
    return Superquadric2(
        a1=rng.uniform(0.3, 1.0),
        a2=rng.uniform(0.3, 1.0),
        eps=rng.uniform(0.3, 1.8),
        angle=rng.uniform(-math.pi, math.pi),
        center=tuple(rng.uniform(-box, box, size=2)),
    )


def random_disjoint_pair(rng):
    while True:
        a, b = random_convex_sq(rng), random_convex_sq(rng)
        if sampled_gap(a, b, n=600) > 0.05:
            return a, b


class TestClosestPair:
    def test_two_unit_circles(self):
        a = Superquadric2(1, 1, 1.0, center=(0, 0))
        b = Superquadric2(1, 1, 1.0, center=(3, 0))
        res = closest_pair(a, b)
        assert res.gap == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(a.boundary_point(res.proxy.gamma_i), [1, 0], atol=1e-6)
        np.testing.assert_allclose(b.boundary_point(res.proxy.gamma_j), [2, 0], atol=1e-6)

    def test_face_to_face_squares(self):
        gap = 0.4
        a = Superquadric2(0.5, 0.5, 0.2, center=(0, 0))
        b = Superquadric2(0.5, 0.5, 0.2, center=(1.0 + gap, 0))
        res = closest_pair(a, b)
        assert res.gap == pytest.approx(sampled_gap(a, b), abs=1e-4)

    def test_overlapping_circles_signed(self):
        a = Superquadric2(1, 1, 1.0, center=(0, 0))
        b = Superquadric2(1, 1, 1.0, center=(1.5, 0))
        res = closest_pair(a, b)
        assert res.gap == pytest.approx(-0.5, abs=1e-4)
        assert res.gap == pytest.approx(sampled_gap(a, b), abs=1e-4)

    def test_symmetry(self, rng):
        for _ in range(20):
            a, b = random_disjoint_pair(rng)
            g1 = closest_pair(a, b).gap
            g2 = closest_pair(b, a).gap
            assert g1 == pytest.approx(g2, abs=1e-8)

    def test_oracle_equivalence(self, rng):
        for _ in range(30):
            a, b = random_disjoint_pair(rng)
            res = closest_pair(a, b)
            oracle = sampled_gap(a, b)
            assert res.gap == pytest.approx(oracle, abs=max(1e-3, 0.005 * oracle))

    def test_warm_start(self):
        a = Superquadric2(1, 1, 1.0, center=(0, 0))
        b = Superquadric2(1, 1, 1.0, center=(3, 0))
        res = closest_pair(a, b, init=ProxyPair(0.3, math.pi - 0.3))
        assert res.gap == pytest.approx(1.0, abs=1e-6)

    def test_unconverged_flag(self):
        a = Superquadric2(1, 1, 1.0, center=(0, 0))
        b = Superquadric2(1, 1, 1.0, center=(3, 0))
        res = closest_pair(a, b, init=ProxyPair(2.0, 0.5), tol=1e-16, max_iter=1)
        assert isinstance(res, ClosestPairResult)


class TestBoundaryConsistency:
    @given(st.floats(-math.pi, math.pi), st.floats(0.3, 1.8))
    @settings(max_examples=60)
    def test_proxy_on_boundary_2d(self, gamma, eps):
        sq = Superquadric2(1.3, 0.7, eps, angle=0.4, center=(1.0, -2.0))
        assert abs(sq.inside_outside(sq.boundary_point(gamma))) < 1e-9

    @given(st.floats(-math.pi / 2, math.pi / 2), st.floats(-math.pi, math.pi))
    @settings(max_examples=60)
    def test_proxy_on_boundary_3d(self, g1, g2):
        sq = Superquadric3(1.2, 0.8, 0.5, 0.8, 1.2, translation=np.array([0.3, 0.1, -0.2]))
        assert abs(sq.inside_outside(sq.boundary_point(g1, g2))) < 1e-9


class TestEllipseSpecialization:
    @given(st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=60)
    def test_eps_one_matches_analytic_ellipse(self, x, y):
        sq = Superquadric2(1.4, 0.6, 1.0)
        analytic = (x / 1.4) ** 2 + (y / 0.6) ** 2 - 1.0
        assert sq.inside_outside([x, y]) == pytest.approx(analytic, abs=1e-12)


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.1) == pytest.approx(0.1)
