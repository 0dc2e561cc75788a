import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnegraph.functionals import (
    FunctionalSpec,
    StabilizationRecord,
    UnclosedVertexError,
    add_one_cost,
    evaluate,
    length_power,
    outdegree_count,
    second_difference,
    stabilization_radius,
)
from nnegraph.geometry import distance, distances_from, origin
from nnegraph.nne import build_nne, graph_from_lists
from nnegraph.sampling import (
    PointConfiguration,
    RandomStream,
    restrict,
    sample_poisson_ball,
    uniform_in_ball,
    with_points,
)

from conftest import E2, E3, H2


def toy_graph():
    # a-b inside-inside (length 1), a-c inside-outside (length 2)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [-2.0, 0.0]])
    config = PointConfiguration(E2, pts, 3.0, 1.5)
    return graph_from_lists(config, [[1, 2], [0], [0]])


def naive_length_power(graph, alpha, t):
    """Half the sum over window vertices of alpha-powers of all incident edges."""
    n = len(graph)
    pts = graph.config.points
    space = graph.space
    full = [set() for _ in range(n)]
    inside = [distance(space, origin(space), pts[x]) <= t for x in range(n)]
    for x in range(n):
        # vertices without a closed hull only count when inside the window
        if not graph.closed[x] and not inside[x]:
            continue
        for y in graph.out_neighbors(x):
            full[x].add(int(y))
            full[int(y)].add(x)
    total = 0.0
    for x in range(n):
        if inside[x]:
            for y in full[x]:
                total += distance(space, pts[x], pts[y]) ** alpha
    return total / 2


def naive_cost(config, x, spec):
    plus = with_points(config, x)
    return evaluate(build_nne(plus), spec) - evaluate(build_nne(config), spec)


def rotate(p, a):
    c, s = math.cos(a), math.sin(a)
    return [c * p[0] - s * p[1], s * p[0] + c * p[1]]


def isolated_triangle():
    """x near the origin closes on three window points that never adopt it.

    Each of the three closes on satellites (outside the window) nearer to it
    than x; the satellites are extreme points of the set and never close.
    """
    base = [[0, 1], [-0.5, 0.95], [0.5, 0.95], [0, 1.3]]
    pts = [rotate(p, k * 2 * math.pi / 3) for k in range(3) for p in base]
    return PointConfiguration(E2, np.array(pts, dtype=float), 2.0, 1.01), np.array([0.01, -0.02])


class TestFunctionalSpec:
    def test_rejects_negative_alpha(self):
        with pytest.raises(ValueError, match="non-negative"):
            FunctionalSpec.length_power(-0.5, 3.0)

    def test_rejects_small_k(self):
        spec = FunctionalSpec.outdegree_count(2, 3.0)
        with pytest.raises(ValueError, match="d\\+1"):
            spec.check(E2)
        with pytest.raises(ValueError):
            outdegree_count(toy_graph(), 2, 1.0)
        FunctionalSpec.outdegree_count(4, 3.0).check(E3)

    def test_rejects_bad_window(self):
        with pytest.raises(ValueError):
            FunctionalSpec.length_power(1, 0.0)

    def test_record(self):
        rec = StabilizationRecord.of(1.5, 1.0)
        assert rec.r == 2.0
        assert StabilizationRecord.of(3.0, 1.0).r == 3.0


class TestLengthPower:
    def test_toy_alpha_one(self):
        assert length_power(toy_graph(), 1, 1.5) == 2.0

    def test_toy_alpha_zero(self):
        assert length_power(toy_graph(), 0, 1.5) == 1.5

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
    def test_matches_naive_double_sum(self, alpha):
        config = sample_poisson_ball(E2, 9.8, RandomStream(31, 0))
        assert 250 < len(config) < 350
        g = build_nne(config)
        t = 5.5
        got = length_power(g, alpha, t, strict=True)
        assert got == pytest.approx(naive_length_power(g, alpha, t), rel=1e-10)

    def test_hyperbolic_matches_naive(self):
        g = build_nne(sample_poisson_ball(H2, 5.0, RandomStream(31, 1)))
        assert length_power(g, 1.0, 2.5, strict=True) == pytest.approx(
            naive_length_power(g, 1.0, 2.5), rel=1e-10
        )

    def test_non_decreasing_in_t(self):
        g = build_nne(sample_poisson_ball(E2, 8.0, RandomStream(31, 2)))
        values = [length_power(g, 1.0, t) for t in np.linspace(0.5, 4.0, 15)]
        assert all(a <= b for a, b in zip(values, values[1:]))


class TestOutdegreeCount:
    def test_example_window_with_x_only(self):
        pts = [[0, 0], [1, 0], [1.1, 0.3], [1.2, -0.3], [-2, 0.1]]
        g = build_nne(PointConfiguration(E2, np.array(pts, float), 3.0, 0.5))
        assert outdegree_count(g, 4, 0.5) == 1
        assert outdegree_count(g, 3, 0.5) == 0

    def test_empty_window(self):
        g = build_nne(sample_poisson_ball(E2, 5.0, RandomStream(2, 0)))
        assert outdegree_count(g, 3, 1e-6) == 0

    @pytest.mark.parametrize("space,R,t", [(E2, 8.0, 4.0), (H2, 4.5, 2.0)], ids=["E2", "H2"])
    def test_partition(self, space, R, t):
        g = build_nne(sample_poisson_ball(space, R, RandomStream(2, 1)))
        inside = g.config.norms <= t
        top = int(g.outdegree[g.closed].max())
        total = sum(outdegree_count(g, k, t) for k in range(space.dim + 1, top + 1))
        assert total == int(np.count_nonzero(inside & g.closed))


class TestUnclosedPolicy:
    def test_strict_raises_inside_window(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        g = build_nne(PointConfiguration(E2, pts, 2.0, 2.0))
        with pytest.raises(UnclosedVertexError) as info:
            length_power(g, 1.0, 2.0, strict=True)
        assert info.value.vertex == 0
        with pytest.raises(UnclosedVertexError):
            outdegree_count(g, 3, 2.0, strict=True)

    def test_lenient_warns_and_uses_all_edges(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        g = build_nne(PointConfiguration(E2, pts, 2.0, 2.0))
        with pytest.warns(RuntimeWarning):
            value = length_power(g, 0.0, 2.0)
        assert value == 3.0

    def test_unclosed_outside_window_is_ignored(self):
        g = build_nne(sample_poisson_ball(E2, 8.0, RandomStream(3, 3)))
        assert not g.closed.all()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            length_power(g, 1.0, 3.0, strict=True)


class TestAddOneCost:
    def test_far_insertion_is_zero(self):
        config = sample_poisson_ball(E2, 10.0, RandomStream(4, 0))
        spec = FunctionalSpec.length_power(1.0, 2.0)
        x = np.array([0.0, 9.0])
        rec = stabilization_radius(config, x, t=2.0)
        assert rec.r < 9.0 - 2.0
        assert add_one_cost(config, x, spec) == 0.0

    def test_d_plus_one_new_edges(self):
        config, x = isolated_triangle()
        g, g2 = build_nne(config), build_nne(with_points(config, x))
        for i in range(len(config)):
            assert list(g.out_neighbors(i)) == list(g2.out_neighbors(i)[g2.out_neighbors(i) != 12])
            if g.closed[i]:
                assert list(g.out_neighbors(i)) == list(g2.out_neighbors(i))
        assert g2.outdegree[12] == 3
        spec = FunctionalSpec.length_power(0.0, 1.01)
        assert add_one_cost(config, x, spec) == 3.0
        assert naive_cost(config, x, spec) == 3.0

    def test_outdegree_gain_is_one(self):
        config, x = isolated_triangle()
        spec = FunctionalSpec.outdegree_count(3, 1.01)
        assert add_one_cost(config, x, spec) == 1.0
        assert naive_cost(config, x, spec) == 1.0

    @pytest.mark.parametrize("space,R,t", [(E2, 9.0, 5.0), (H2, 4.5, 1.5)], ids=["E2", "H2"])
    def test_matches_two_builds(self, space, R, t):
        rng = np.random.default_rng(0)
        for s in range(6):
            config = sample_poisson_ball(space, R, RandomStream(40, s))
            x = uniform_in_ball(space, t, 1, rng)[0]
            for spec in (
                FunctionalSpec.length_power(1.0, t),
                FunctionalSpec.length_power(0.0, t),
                FunctionalSpec.outdegree_count(3, t),
            ):
                assert add_one_cost(config, x, spec) == pytest.approx(
                    naive_cost(config, x, spec), abs=1e-9
                )


class TestSecondDifference:
    def test_symmetric_and_matches_naive(self):
        rng = np.random.default_rng(1)
        for s in range(4):
            config = sample_poisson_ball(E2, 6.0, RandomStream(41, s))
            x, y = uniform_in_ball(E2, 3.0, 2, rng)
            for spec in (FunctionalSpec.length_power(1.0, 3.0), FunctionalSpec.outdegree_count(3, 3.0)):
                a = second_difference(config, x, y, spec)
                assert a == second_difference(config, y, x, spec)
                naive = (
                    evaluate(build_nne(with_points(config, np.vstack([x, y]))), spec)
                    - evaluate(build_nne(with_points(config, x)), spec)
                    - evaluate(build_nne(with_points(config, y)), spec)
                    + evaluate(build_nne(config), spec)
                )
                assert a == pytest.approx(naive, abs=1e-9)

    def test_far_apart_is_zero(self):
        config = sample_poisson_ball(E2, 9.0, RandomStream(42, 0))
        x, y = np.array([-3.0, 0.0]), np.array([3.0, 0.0])
        rx = stabilization_radius(config, x, t=6.0)
        ry = stabilization_radius(with_points(config, y), x, t=6.0)
        assert rx.r < 6.0 and rx.r == ry.r
        spec = FunctionalSpec.length_power(1.0, 6.0)
        assert second_difference(config, x, y, spec) == 0.0


class TestStabilization:
    def test_no_adopters(self):
        config, x = isolated_triangle()
        rec = stabilization_radius(config, x, t=1.01)
        assert rec.r2 == 0.0
        assert rec.r == rec.r1 == pytest.approx(float(distances_from(E2, x, config.points[[0, 4, 8]]).max()))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_record_invariants(self, seed):
        config = sample_poisson_ball(E2, 7.0, RandomStream(seed, 0))
        x = uniform_in_ball(E2, 3.0, 1, np.random.default_rng(seed))[0]
        rec = stabilization_radius(config, x, t=3.0)
        assert rec.r >= rec.r1 >= 0 and rec.r >= 2 * rec.r2 >= 0
        assert math.isfinite(rec.r)

    def test_censored_when_x_cannot_close(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0]])
        rec = stabilization_radius(PointConfiguration(E2, pts, 3.0, 3.0), [0.0, 1.0], t=3.0)
        assert rec.censored and rec.r1 == 3.0

    @pytest.mark.parametrize(
        "space,R,t", [(E2, 10.0, 6.0), (H2, 6.0, 3.0)], ids=["E2", "H2"]
    )
    def test_full_equals_restricted(self, space, R, t):
        rng = np.random.default_rng(2)
        for s in range(15):
            config = sample_poisson_ball(space, R, RandomStream(43, s))
            graph = build_nne(config)
            x = uniform_in_ball(space, t, 1, rng)[0]
            rec = stabilization_radius(config, x, t=t, graph=graph)
            assert not rec.censored
            for spec in (FunctionalSpec.length_power(1.0, t), FunctionalSpec.outdegree_count(3, t)):
                full = add_one_cost(config, x, spec)
                assert abs(full - add_one_cost(config, x, spec, radius=rec.r)) < 1e-12

    def test_restriction_to_ball_about_origin(self):
        # restricting about the origin to a radius covering B(x, R) leaves D_x F unchanged
        config = sample_poisson_ball(E2, 12.0, RandomStream(44, 0))
        x = np.array([0.5, -0.5])
        spec = FunctionalSpec.length_power(1.0, 2.0)
        rec = stabilization_radius(config, x, t=2.0)
        r = float(np.linalg.norm(x)) + rec.r + 1.0
        assert r < 12.0
        a = add_one_cost(config, x, spec)
        b = add_one_cost(restrict(config, r), x, spec)
        assert abs(a - b) < 1e-12


class TestProperties:
    def test_moments_of_stabilization_ball_do_not_grow_with_t(self):
        from nnegraph.mc import sample_stabilization_radii

        moments = []
        for t in (6.0, 10.0, 14.0):
            sample = sample_stabilization_radii(E2, t, 8.0, 1000, seed=77)
            assert sample.censored == 0
            # balls reaching past the sampled region see boundary vertices, not the process
            assert sample.contained.mean() > 0.99
            c = sample.ball_counts[sample.contained].astype(float)
            moments.append([np.mean(c**m) for m in (1, 2, 3)])
        moments = np.array(moments)
        assert np.all(moments.max(axis=0) / moments.min(axis=0) < 1.2)

    def test_second_difference_is_local(self):
        rng = np.random.default_rng(0)
        edges = [0.0, 1.0, 2.0, 3.0, 4.0, 6.0]
        hits = {b: [] for b in range(len(edges) - 1)}
        spec = FunctionalSpec.length_power(1.0, 4.0)
        s = 0
        while min(len(v) for v in hits.values()) < 100:
            config = sample_poisson_ball(E2, 8.0, RandomStream(45, s))
            s += 1
            x = uniform_in_ball(E2, 3.0, 1, rng)[0]
            open_bins = [b for b in hits if len(hits[b]) < 100]
            b = open_bins[int(rng.integers(len(open_bins)))]
            r, a = rng.uniform(edges[b], edges[b + 1]), rng.uniform(0, 2 * math.pi)
            y = x + r * np.array([math.cos(a), math.sin(a)])
            hits[b].append(second_difference(config, x, y, spec) != 0)
        freq = [np.mean(hits[b]) for b in hits]
        assert all(a >= b for a, b in zip(freq, freq[1:]))
        assert freq[0] > freq[-1]
