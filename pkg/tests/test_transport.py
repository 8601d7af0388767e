import itertools

import numpy as np
import pytest

from heis import core, geodesy
from heis.measures import BoxRegion, DiscreteMeasure, normalized_measure
from heis.transport import (
    GeodesicPlan,
    SinkhornError,
    TransportPlan,
    cost_matrix,
    geodesic_plan,
    interpolant_support_volume,
    interpolate,
    solve_exact,
    solve_sinkhorn,
    w2,
)


def cloud(rng, k, shift=0.0):
    pts = rng.random((k, 3))
    pts[:, 0] += shift
    return pts


def measure(pts, weights=None):
    w = np.full(len(pts), 1.0 / len(pts)) if weights is None else weights
    return DiscreteMeasure(pts, w)


def brute_force_assignment_cost(C):
    m = C.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(m)):
        best = min(best, sum(C[i, perm[i]] for i in range(m)) / m)
    return best


class TestCostMatrix:
    def test_zero_diagonal_iff_equal(self):
        rng = np.random.default_rng(0)
        pts = cloud(rng, 6)
        C = cost_matrix(measure(pts), measure(pts))
        assert np.array_equal(np.diag(C.cost), np.zeros(6))
        off = C.cost[~np.eye(6, dtype=bool)]
        assert np.all(off > 0)

    def test_single_pair(self):
        x = np.array([[0.0, 0.0, 0.0]])
        y = np.array([[1.0, 0.0, 0.0]])
        C = cost_matrix(measure(x), measure(y))
        assert C.cost[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_symmetry_under_transpose(self):
        rng = np.random.default_rng(1)
        a, b = cloud(rng, 4), cloud(rng, 5)
        C1 = cost_matrix(measure(a), measure(b))
        C2 = cost_matrix(measure(b), measure(a))
        assert np.allclose(C1.cost, C2.cost.T, atol=1e-10)
        assert np.allclose(C1.angles, C2.angles.T, atol=1e-10)


class TestSolveExact:
    def test_single_dirac_pair(self):
        x = np.array([[0.0, 0.0, 0.0]])
        y = np.array([[2.0, 0.0, 0.0]])
        plan = solve_exact(cost_matrix(measure(x), measure(y)), [1.0], [1.0])
        assert len(plan) == 1 and plan.mass[0] == 1.0
        assert plan.cost == pytest.approx(4.0, abs=1e-9)

    def test_zero_cost_matching(self):
        C = cost_matrix(measure(np.array([[0, 0, 0], [1, 0, 0.0]])),
                        measure(np.array([[0, 0, 0], [1, 0, 0.0]])))
        plan = solve_exact(C, [0.5, 0.5], [0.5, 0.5])
        assert plan.cost == 0.0

    def test_matches_bruteforce_on_small_uniform_clouds(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            m = int(rng.integers(2, 7))
            C = cost_matrix(measure(cloud(rng, m)), measure(cloud(rng, m, shift=0.5)))
            plan = solve_exact(C, np.full(m, 1.0 / m), np.full(m, 1.0 / m))
            want = brute_force_assignment_cost(C.cost)
            assert np.round(plan.cost, 12) == np.round(want, 12)

    def test_network_simplex_matches_linprog(self):
        from scipy.optimize import linprog

        rng = np.random.default_rng(3)
        for trial in range(8):
            m, n = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            C = rng.random((m, n))
            a = rng.random(m) + 0.1
            a /= a.sum()
            b = rng.random(n) + 0.1
            b /= b.sum()
            cm = cost_matrix(measure(cloud(rng, m)), measure(cloud(rng, n)))
            cm.cost = C  # exercise the LP on arbitrary costs
            plan = solve_exact(cm, a, b)
            A_eq = np.zeros((m + n, m * n))
            for i in range(m):
                A_eq[i, i * n:(i + 1) * n] = 1
            for j in range(n):
                A_eq[m + j, j::n] = 1
            res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]),
                          method="highs")
            assert plan.cost == pytest.approx(res.fun, abs=1e-9)

    def test_support_size_bound(self):
        rng = np.random.default_rng(4)
        m, n = 8, 5
        a = rng.random(m) + 0.1
        a /= a.sum()
        b = rng.random(n) + 0.1
        b /= b.sum()
        plan = solve_exact(cost_matrix(measure(cloud(rng, m)), measure(cloud(rng, n))), a, b)
        assert len(plan) <= m + n - 1

    def test_marginals_exact(self):
        rng = np.random.default_rng(5)
        m, n = 10, 7
        a = rng.random(m) + 0.1
        a /= a.sum()
        b = rng.random(n) + 0.1
        b /= b.sum()
        plan = solve_exact(cost_matrix(measure(cloud(rng, m)), measure(cloud(rng, n))), a, b)
        assert np.max(np.abs(plan.row_sums(m) - a)) <= 1e-9
        assert np.max(np.abs(plan.col_sums(n) - b)) <= 1e-9

    def test_beats_random_feasible_plans(self):
        rng = np.random.default_rng(6)
        m = 12
        C = cost_matrix(measure(cloud(rng, m)), measure(cloud(rng, m, shift=1.0)))
        w = np.full(m, 1.0 / m)
        plan = solve_exact(C, w, w)
        for _ in range(100):
            perm = rng.permutation(m)
            rand_cost = C.cost[np.arange(m), perm].sum() / m
            assert plan.cost <= rand_cost + 1e-12

    def test_infeasible_marginals_rejected(self):
        rng = np.random.default_rng(7)
        C = cost_matrix(measure(cloud(rng, 3)), measure(cloud(rng, 3)))
        with pytest.raises(ValueError):
            solve_exact(C, [0.5, 0.3, 0.2], [0.5, 0.3, 0.3])

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        pts_a, pts_b = cloud(rng, 9), cloud(rng, 9)
        C1 = cost_matrix(measure(pts_a), measure(pts_b))
        C2 = cost_matrix(measure(pts_a), measure(pts_b))
        w = np.full(9, 1.0 / 9)
        p1, p2 = solve_exact(C1, w, w), solve_exact(C2, w, w)
        assert np.array_equal(p1.i, p2.i) and np.array_equal(p1.j, p2.j)
        assert p1.cost == p2.cost

    def test_plan_json_roundtrip(self):
        rng = np.random.default_rng(9)
        C = cost_matrix(measure(cloud(rng, 3)), measure(cloud(rng, 3)))
        w = np.full(3, 1.0 / 3)
        plan = solve_exact(C, w, w)
        back = TransportPlan.from_json(plan.to_json())
        assert np.array_equal(back.i, plan.i)
        assert np.array_equal(back.mass, plan.mass)
        assert back.cost == plan.cost


class TestSinkhorn:
    def test_small_eps_close_to_exact(self):
        rng = np.random.default_rng(10)
        C = cost_matrix(measure(cloud(rng, 2)), measure(cloud(rng, 2, shift=1.0)))
        w = np.array([0.5, 0.5])
        exact = solve_exact(C, w, w)
        approx = solve_sinkhorn(C, w, w, epsilon=1e-3 * float(np.median(C.cost)))
        tv = np.abs(approx.matrix(2, 2) - exact.matrix(2, 2)).sum()
        assert tv <= 1e-3

    def test_identity_cost_to_zero(self):
        rng = np.random.default_rng(11)
        pts = cloud(rng, 5)
        C = cost_matrix(measure(pts), measure(pts))
        w = np.full(5, 0.2)
        plan = solve_sinkhorn(C, w, w, epsilon=1e-4)
        assert plan.cost <= 1e-3

    def test_marginal_violation_below_tol(self):
        rng = np.random.default_rng(12)
        C = cost_matrix(measure(cloud(rng, 8)), measure(cloud(rng, 8, shift=0.5)))
        w = np.full(8, 1.0 / 8)
        plan = solve_sinkhorn(C, w, w, epsilon=0.05, tol=1e-9)
        assert plan.marginal_violation <= 2e-9

    def test_nonconvergence_raises_with_violation(self):
        rng = np.random.default_rng(13)
        C = cost_matrix(measure(cloud(rng, 6)), measure(cloud(rng, 6, shift=2.0)))
        w = np.full(6, 1.0 / 6)
        with pytest.raises(SinkhornError) as ei:
            solve_sinkhorn(C, w, w, epsilon=1e-4, max_iter=5, tol=1e-12)
        assert ei.value.violation > 0

    def test_regularized_cost_reported(self):
        rng = np.random.default_rng(14)
        C = cost_matrix(measure(cloud(rng, 4)), measure(cloud(rng, 4, shift=1.0)))
        w = np.full(4, 0.25)
        plan = solve_sinkhorn(C, w, w, epsilon=0.05)
        assert plan.cost_regularized is not None
        assert plan.method.startswith("sinkhorn")


class TestW2:
    def test_identity(self):
        rng = np.random.default_rng(15)
        m = measure(cloud(rng, 6))
        assert w2(m, m) == 0.0

    def test_dirac_pair_distance(self):
        x = measure(np.array([[0.0, 0.0, 0.0]]))
        y = measure(np.array([[0.0, 0.0, 1.0]]))
        assert w2(x, y) == pytest.approx(np.sqrt(np.pi), abs=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(16)
        for _ in range(5):
            ma = measure(cloud(rng, 10))
            mb = measure(cloud(rng, 10, shift=0.7))
            mc = measure(cloud(rng, 10, shift=1.4))
            assert w2(ma, mc) <= w2(ma, mb) + w2(mb, mc) + 1e-9


class TestInterpolation:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(17)
        src = measure(cloud(rng, 8))
        tgt = measure(cloud(rng, 8, shift=1.0))
        gp = geodesic_plan(src, tgt)
        m0 = interpolate(gp, 0.0)
        m1 = interpolate(gp, 1.0)
        assert np.array_equal(m0.points, src.points)
        assert np.array_equal(m1.points, tgt.points)
        assert np.allclose(m0.weights, src.weights, atol=1e-12)

    def test_dirac_midpoint(self):
        src = measure(np.array([[0.0, 0.0, 0.0]]))
        tgt = measure(np.array([[2.0, 0.0, 0.0]]))
        gp = geodesic_plan(src, tgt)
        mid = interpolate(gp, 0.5)
        assert np.allclose(mid.points, [[1.0, 0.0, 0.0]], atol=1e-12)

    def test_center_pair_rejected(self):
        src = measure(np.array([[0.0, 0.0, 0.0]]))
        tgt = measure(np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(geodesy.NonUniqueGeodesic):
            geodesic_plan(src, tgt)

    def test_wasserstein_geodesic_property(self):
        rng = np.random.default_rng(18)
        src = measure(cloud(rng, 32))
        tgt = measure(cloud(rng, 32, shift=1.5))
        gp = geodesic_plan(src, tgt)
        w01 = np.sqrt(gp.plan.cost)
        for s in (0.25, 0.5, 0.75):
            mu_s = interpolate(gp, s)
            assert abs(w2(src, mu_s) - s * w01) <= 1e-6 * w01
            assert abs(w2(mu_s, tgt) - (1 - s) * w01) <= 1e-6 * w01

    def test_interpolant_in_midpoint_set(self):
        rng = np.random.default_rng(19)
        A, B = cloud(rng, 5), cloud(rng, 5, shift=1.0)
        gp = geodesic_plan(measure(A), measure(B))
        mu_s = interpolate(gp, 0.4)
        ms = geodesy.midpoint_set(0.4, A, B)
        for p in mu_s.points:
            d = np.min(np.linalg.norm(ms.points - p, axis=1))
            assert d <= 1e-9

    def test_support_volume_monotone_in_r(self):
        rng = np.random.default_rng(20)
        src = measure(cloud(rng, 20))
        tgt = measure(cloud(rng, 20, shift=0.5))
        gp = geodesic_plan(src, tgt)
        bound = BoxRegion(np.array([[-1.0, 3.0]] * 3))
        vols = [interpolant_support_volume(gp, 0.5, r, 0.1, bound).volume
                for r in (0.0, 0.1)]
        assert vols[0] <= vols[1]

    def test_singleton_support_volume(self):
        src = measure(np.array([[0.5, 0.5, 0.5]]))
        tgt = measure(np.array([[0.6, 0.5, 0.5]]))
        gp = geodesic_plan(src, tgt)
        bound = BoxRegion(np.array([[-1.0, 2.0]] * 3))
        est = interpolant_support_volume(gp, 0.5, 0.0, 0.1, bound)
        assert est.volume == pytest.approx(0.1 ** 3)
