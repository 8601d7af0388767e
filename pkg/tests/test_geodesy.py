import numpy as np
import pytest

from heis import core, geodesy
from heis.geodesy import (
    TWO_PI,
    GeodesicParam,
    NonUniqueGeodesic,
    angle,
    cc_distance,
    gamma,
    gamma_inverse,
    midpoint,
    midpoint_set,
    pair_table,
)


def pt(*vals):
    return np.array(vals, dtype=float)


def rand_points(rng, k, n=1, scale=2.0):
    return rng.normal(size=(k, 2 * n + 1)) * scale


class TestGamma:
    def test_theta_zero_is_straight(self):
        p = GeodesicParam(np.array([1.5 - 0.5j]), 0.0)
        for s in (0.0, 0.3, 1.0):
            got = gamma(s, p)
            assert np.allclose(got, pt(1.5 * s, -0.5 * s, 0.0), atol=1e-15)

    def test_starts_at_origin(self):
        p = GeodesicParam(np.array([1.0 + 2.0j]), 1.0)
        assert np.allclose(gamma(0.0, p), core.origin(1), atol=1e-300)

    def test_full_turn_lands_on_center(self):
        # chi=1, theta=2pi, s=1: zeta factor vanishes, t = 2 * 2pi / (2pi)^2
        p = GeodesicParam(np.array([1.0 + 0j]), TWO_PI)
        got = gamma(1.0, p)
        assert abs(got[0]) < 1e-15 and abs(got[1]) < 1e-15
        assert got[2] == pytest.approx(1.0 / np.pi, abs=1e-14)

    def test_scaling_identity(self):
        # Gamma_s(chi, theta) == Gamma_1(s chi, s theta)
        rng = np.random.default_rng(0)
        for _ in range(20):
            chi = rng.normal(size=2) @ np.array([1, 1j])
            theta = rng.uniform(-TWO_PI, TWO_PI)
            s = rng.uniform(0, 1)
            p = GeodesicParam(np.array([chi]), theta)
            q = GeodesicParam(np.array([s * chi]), s * theta)
            assert np.allclose(gamma(s, p), gamma(1.0, q), atol=1e-14)

    def test_continuity_at_theta_zero(self):
        chi = np.array([0.7 + 0.2j])
        a = gamma(1.0, GeodesicParam(chi, 1e-9))
        b = gamma(1.0, GeodesicParam(chi, 0.0))
        assert np.allclose(a, b, atol=1e-8)

    def test_range_errors(self):
        p = GeodesicParam(np.array([1.0 + 0j]), 0.0)
        with pytest.raises(ValueError):
            gamma(1.5, p)
        with pytest.raises(ValueError):
            GeodesicParam(np.array([1.0 + 0j]), 7.0)


class TestGammaInverse:
    def test_horizontal_point(self):
        res = gamma_inverse(pt(1.0, 0.0, 0.0))
        assert res.unique
        assert res.params[0].theta == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(res.params[0].chi, [1.0 + 0j], atol=1e-12)
        assert res.distance == pytest.approx(1.0, abs=1e-12)

    def test_center_point_family(self):
        res = gamma_inverse(pt(0.0, 0.0, 1.0 / np.pi))
        assert not res.unique
        assert res.params[0].theta == pytest.approx(TWO_PI)
        assert res.distance == pytest.approx(1.0, abs=1e-12)
        # the representative reproduces the point through the forward map
        back = gamma(1.0, res.params[0])
        assert np.allclose(back, pt(0.0, 0.0, 1.0 / np.pi), atol=1e-12)

    def test_origin(self):
        res = gamma_inverse(core.origin(1))
        assert res.unique and res.distance == 0.0

    def test_round_trip_random(self):
        rng = np.random.default_rng(1)
        ys = rand_points(rng, 500)
        for y in ys:
            res = gamma_inverse(y)
            back = gamma(1.0, res.params[0])
            assert np.allclose(back, y, atol=1e-9)

    def test_round_trip_n2(self):
        rng = np.random.default_rng(2)
        for y in rand_points(rng, 50, n=2):
            back = gamma(1.0, gamma_inverse(y).params[0])
            assert np.allclose(back, y, atol=1e-9)

    def test_residual_tolerance(self):
        # the solved theta satisfies the defining scalar equation tightly
        rng = np.random.default_rng(3)
        for y in rand_points(rng, 200):
            zeta, t = core.to_complex(y)
            az2 = float(np.sum(np.abs(zeta) ** 2))
            u = t / az2
            th = gamma_inverse(y).params[0].theta
            assert abs(geodesy._m(th) - u) <= 1e-12 * max(1.0, abs(u))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            gamma_inverse(pt(np.nan, 0.0, 0.0))


class TestDistance:
    def test_identity(self):
        rng = np.random.default_rng(4)
        for x in rand_points(rng, 10):
            assert cc_distance(x, x) == 0.0

    def test_horizontal_segment(self):
        for r in (0.5, 1.0, 3.0):
            assert cc_distance(core.origin(1), pt(r, 0.0, 0.0)) == pytest.approx(r, abs=1e-12)

    def test_center_distance(self):
        for t in (0.1, 1.0, 10.0):
            want = np.sqrt(np.pi * t)
            assert cc_distance(core.origin(1), pt(0.0, 0.0, t)) == pytest.approx(want, abs=1e-9)
            assert cc_distance(core.origin(1), pt(0.0, 0.0, -t)) == pytest.approx(want, abs=1e-9)

    def test_left_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            z, x, y = rand_points(rng, 3)
            d0 = cc_distance(x, y)
            d1 = cc_distance(core.group_mul(z, x), core.group_mul(z, y))
            assert abs(d0 - d1) <= 1e-9

    def test_dilation_homogeneity(self):
        rng = np.random.default_rng(6)
        for lam in (0.5, 2.0, 3.0):
            x, y = rand_points(rng, 2)
            d = cc_distance(x, y)
            dl = cc_distance(core.dilate(lam, x), core.dilate(lam, y))
            assert abs(dl - lam * d) <= 1e-9 * max(1.0, lam)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            x, y, z = rand_points(rng, 3)
            assert cc_distance(x, z) <= cc_distance(x, y) + cc_distance(y, z) + 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x, y = rand_points(rng, 2)
            assert cc_distance(x, y) == pytest.approx(cc_distance(y, x), abs=1e-12)

    def test_constant_speed(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            chi = np.array([rng.normal() + 1j * rng.normal()])
            theta = rng.uniform(-TWO_PI + 0.05, TWO_PI - 0.05)
            p = GeodesicParam(chi, theta)
            s1, s2 = sorted(rng.uniform(0, 1, size=2))
            d = cc_distance(gamma(s1, p), gamma(s2, p))
            assert abs(d - (s2 - s1) * p.speed) <= 1e-9


class TestAngle:
    def test_self_angle_zero(self):
        rng = np.random.default_rng(10)
        for x in rand_points(rng, 5):
            assert angle(x, x) == 0.0

    def test_center_pair(self):
        assert angle(core.origin(1), pt(0.0, 0.0, 1.0)) == pytest.approx(TWO_PI)

    def test_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x, y = rand_points(rng, 2)
            assert angle(x, y) == pytest.approx(angle(y, x), abs=1e-10)


class TestMidpoint:
    def test_endpoints(self):
        rng = np.random.default_rng(12)
        x, y = rand_points(rng, 2)
        assert np.allclose(midpoint(0.0, x, y), x, atol=1e-12)
        assert np.allclose(midpoint(1.0, x, y), y, atol=1e-9)

    def test_constant_geodesic(self):
        x = pt(0.3, -0.7, 0.9)
        assert np.allclose(midpoint(0.5, x, x), x, atol=1e-12)

    def test_straight_line(self):
        got = midpoint(0.5, core.origin(1), pt(2.0, 0.0, 0.0))
        assert np.allclose(got, pt(1.0, 0.0, 0.0), atol=1e-12)

    def test_metric_split(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            x, y = rand_points(rng, 2)
            s = rng.uniform(0, 1)
            z = midpoint(s, x, y)
            d = cc_distance(x, y)
            assert abs(cc_distance(x, z) - s * d) <= 1e-9
            assert abs(cc_distance(z, y) - (1 - s) * d) <= 1e-9

    def test_center_pair_raises(self):
        with pytest.raises(NonUniqueGeodesic):
            midpoint(0.5, core.origin(1), pt(0.0, 0.0, 1.0))


class TestMidpointSet:
    def test_singleton(self):
        x = pt(0.5, 0.5, 0.5)
        ms = midpoint_set(0.5, x[None, :], x[None, :])
        assert ms.points.shape == (1, 3)
        assert np.allclose(ms.points[0], x, atol=1e-12)
        assert ms.skipped == 0

    def test_s_zero_returns_source_set(self):
        rng = np.random.default_rng(14)
        A = rand_points(rng, 6)
        B = rand_points(rng, 4)
        ms = midpoint_set(0.0, A, B)
        assert ms.points.shape[0] == 6  # deduplicated copies of A
        got = set(map(tuple, np.round(ms.points, 9)))
        want = set(map(tuple, np.round(A, 9)))
        assert got == want

    def test_derived_pair(self):
        ms = midpoint_set(0.5, core.origin(1)[None, :], pt(2.0, 0.0, 0.0)[None, :])
        assert np.allclose(ms.points, pt(1.0, 0.0, 0.0)[None, :], atol=1e-12)

    def test_center_pairs_skipped(self):
        A = np.vstack([core.origin(1), pt(1.0, 0.0, 0.0)])
        B = pt(0.0, 0.0, 1.0)[None, :]
        ms = midpoint_set(0.5, A, B)
        assert ms.skipped == 1
        assert ms.points.shape[0] == 1

    def test_matches_scalar_midpoint(self):
        rng = np.random.default_rng(15)
        A = rand_points(rng, 3)
        B = rand_points(rng, 3)
        ms = midpoint_set(0.3, A, B)
        singles = np.array([midpoint(0.3, a, b) for a in A for b in B])
        got = np.array(sorted(map(tuple, np.round(ms.points, 10))))
        want = np.array(sorted(map(tuple, np.round(singles, 10))))
        assert np.allclose(got, want, atol=1e-9)


class TestPairTable:
    def test_matches_scalar_ops(self):
        rng = np.random.default_rng(16)
        xs = rand_points(rng, 7)
        ys = rand_points(rng, 5)
        tab = pair_table(xs, ys, want_chi=True)
        for i in range(7):
            for j in range(5):
                assert tab.dist[i, j] == pytest.approx(cc_distance(xs[i], ys[j]), abs=1e-10)
                assert abs(tab.theta[i, j]) == pytest.approx(angle(xs[i], ys[j]), abs=1e-10)

    def test_zero_diagonal(self):
        rng = np.random.default_rng(17)
        xs = rand_points(rng, 5)
        tab = pair_table(xs, xs)
        assert np.array_equal(np.diag(tab.dist), np.zeros(5))

    def test_worker_count_invariance(self):
        rng = np.random.default_rng(18)
        xs = rand_points(rng, 40)
        ys = rand_points(rng, 30)
        tab1 = pair_table(xs, ys)
        geodesy.set_max_workers(4)
        try:
            tab2 = pair_table(xs, ys)
        finally:
            geodesy.set_max_workers(1)
        assert np.array_equal(tab1.dist, tab2.dist)
        assert np.array_equal(tab1.theta, tab2.theta)
