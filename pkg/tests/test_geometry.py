import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnegraph.geometry import (
    Space,
    TangentVector,
    apply_isometry,
    ball_volume,
    ball_volumes,
    boost,
    compute_volume_constants,
    distance,
    exp_map,
    klein_coords,
    log_map,
    minkowski_dot,
    origin,
    poincare_coords,
    random_isometry,
    rho,
    unit_ball_volume,
    volume_constants,
)
from nnegraph.hull import exact_contains, min_norm_point

from conftest import E2, E3, H2, H3

# frozen from mpmath at 30 digits
ARCCOSH_COSH1_SQ = 1.51337400659650395980
HVOL2_R1 = 3.41227626528490230645
HVOL3_R1 = 5.11093270570828897693
HVOL4_R1 = 6.87571958824142669052
HVOL4_R3 = 6528.63321182150677462
GAMMA2 = 2.34879626699317140684
RATIO3_AT2 = 1.34010827701660708942


def random_hyperbolic(space, n, rng, r_max=3.0):
    d = space.dim
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = rng.uniform(0, r_max, n)
    return np.column_stack([np.cosh(r), np.sinh(r)[:, None] * dirs])


def random_points(space, n, rng, r_max=3.0):
    if space.hyperbolic_kind:
        return random_hyperbolic(space, n, rng, r_max)
    return rng.uniform(-r_max, r_max, (n, space.dim))


class TestSpace:
    def test_dim_at_least_two(self):
        with pytest.raises(ValueError):
            Space.euclidean(1)

    def test_kinds(self):
        assert H2.hyperbolic_kind and not E2.hyperbolic_kind
        assert H3.ambient_dim == 4 and E3.ambient_dim == 3


class TestDistance:
    def test_pythagoras(self):
        assert distance(E2, [0, 0], [3, 4]) == 5.0

    def test_arclength(self):
        q = [math.cosh(1), math.sinh(1), 0]
        assert distance(H2, origin(H2), q) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_directions(self):
        a = [math.cosh(1), math.sinh(1), 0]
        b = [math.cosh(1), 0, math.sinh(1)]
        assert distance(H2, a, b) == pytest.approx(ARCCOSH_COSH1_SQ, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            distance(H2, [1, 0, 0], [1, 0])
        with pytest.raises(ValueError):
            distance(E2, [0, 0, 0], [1, 0, 0])

    def test_zero_iff_equal(self, rng):
        pts = random_hyperbolic(H3, 20, rng)
        for p in pts:
            assert distance(H3, p, p) == 0.0

    def test_far_from_origin_nearby_points(self):
        # naive arccosh(-<a,b>) loses everything here; the chord form keeps ~8 digits
        r = 15.0
        a = np.array([math.cosh(r), math.sinh(r), 0.0])
        b = exp_map(H2, TangentVector(a, np.array([0.0, 1e-6])))
        assert distance(H2, a, b) == pytest.approx(1e-6, rel=1e-6)

    @pytest.mark.parametrize("space", [E2, H2, E3, H3], ids=str)
    def test_metric_axioms(self, space, rng):
        n = 10_000
        a, b, c = (random_points(space, n, rng, 4.0) for _ in range(3))
        ab, bc, ac = distance(space, a, b), distance(space, b, c), distance(space, a, c)
        assert np.all(np.abs(ab - distance(space, b, a)) <= 1e-12 * np.maximum(1, ab))
        assert np.all(ac <= ab + bc + 1e-9)
        assert np.all(ab >= 0)


class TestExpMap:
    def test_euclidean_translation(self):
        out = exp_map(E2, TangentVector(np.array([1.0, 1.0]), np.array([2.0, 0.0])))
        assert np.allclose(out, [3, 1])

    def test_zero_vector(self):
        assert np.array_equal(exp_map(H2, TangentVector(origin(H2), np.zeros(2))), origin(H2))

    def test_first_axis_geodesic(self):
        out = exp_map(H2, TangentVector(origin(H2), np.array([2.0, 0.0])))
        assert np.allclose(out, [math.cosh(2), math.sinh(2), 0], rtol=1e-14, atol=1e-14)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            exp_map(H2, TangentVector(origin(H2), np.array([np.nan, 0.0])))

    @pytest.mark.parametrize("space", [E2, H2, E3, H3], ids=str)
    def test_round_trip_distance(self, space, rng):
        for _ in range(300):
            base = random_points(space, 1, rng, 3.0)[0]
            v = rng.standard_normal(space.dim)
            v *= rng.uniform(0, 10) / np.linalg.norm(v)
            q = exp_map(space, TangentVector(base, v))
            assert distance(space, base, q) == pytest.approx(np.linalg.norm(v), abs=1e-9)
            if space.hyperbolic_kind:
                # rounding in <q,q> scales with q0^2
                assert abs(minkowski_dot(q, q) + 1.0) <= 1e-14 * q[0] ** 2 + 1e-15

    @pytest.mark.parametrize("space", [H2, H3], ids=str)
    def test_log_inverts_exp(self, space, rng):
        for _ in range(100):
            base = random_hyperbolic(space, 1, rng)[0]
            v = rng.standard_normal(space.dim)
            q = exp_map(space, TangentVector(base, v))
            assert np.allclose(log_map(space, base, q).vec, v, atol=1e-8)


class TestVolume:
    def test_euclidean_disk(self):
        assert ball_volume(E2, 2.0) == pytest.approx(4 * math.pi, rel=1e-15)

    def test_kappa(self):
        for d in range(2, 8):
            assert unit_ball_volume(d) == pytest.approx(
                math.pi ** (d / 2) / math.gamma(1 + d / 2), rel=1e-12
            )

    def test_hyperbolic_closed_forms(self):
        assert ball_volume(H2, 1.0) == pytest.approx(HVOL2_R1, rel=1e-13)
        assert ball_volume(H3, 1.0) == pytest.approx(HVOL3_R1, rel=1e-13)

    def test_hyperbolic_quadrature(self):
        H4 = Space.hyperbolic(4)
        assert ball_volume(H4, 1.0) == pytest.approx(HVOL4_R1, rel=1e-10)
        assert ball_volume(H4, 3.0) == pytest.approx(HVOL4_R3, rel=1e-10)

    def test_small_radius_matches_euclidean(self):
        for space in (H2, H3, Space.hyperbolic(4)):
            r = 1e-4
            euc = unit_ball_volume(space.dim) * r**space.dim
            assert ball_volume(space, r) == pytest.approx(euc, rel=1e-7)

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            ball_volume(H2, -1.0)

    @pytest.mark.parametrize("space", [E2, H2, H3, Space.hyperbolic(4)], ids=str)
    def test_strictly_increasing(self, space):
        r = np.linspace(0, 8, 400)
        v = ball_volumes(space, r)
        assert np.all(np.diff(v) > 0)
        assert np.allclose(v[::40], [ball_volume(space, x) for x in r[::40]], rtol=1e-12)


class TestRho:
    def test_euclidean(self):
        assert rho(E2, 3.0) == pytest.approx(9 * math.pi)

    def test_hyperbolic_below_two(self):
        assert rho(H2, 1.0) == 0.0
        assert rho(H3, 1.999) == 0.0

    def test_hyperbolic_at_two(self):
        assert rho(H2, 2.0) == pytest.approx(GAMMA2 * math.e**2, rel=1e-9)

    def test_non_decreasing(self):
        for space in (E2, H2, H3):
            vals = [rho(space, r) for r in np.linspace(0, 10, 201)]
            assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestVolumeConstants:
    def test_plane(self):
        c = compute_volume_constants(H2, 20)
        assert c.gamma_d == pytest.approx(GAMMA2, rel=1e-12)
        assert c.Gamma_d == pytest.approx(math.pi, rel=1e-12)

    def test_space3(self):
        c = compute_volume_constants(H3, 20)
        assert c.gamma_d == pytest.approx(RATIO3_AT2, rel=1e-12)
        assert c.Gamma_d == pytest.approx(math.pi / 2, rel=1e-12)

    def test_rmax_too_small(self):
        with pytest.raises(ValueError):
            compute_volume_constants(H2, 3.0)

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_bounds_hold(self, d):
        space = Space.hyperbolic(d)
        c = volume_constants(space)
        assert 0 < c.gamma_d <= c.Gamma_d
        assert c.kappa_d == pytest.approx(unit_ball_volume(d), abs=1e-12)
        for r in (3.0, 5.0, 7.0):
            ratio = ball_volume(space, r) * math.exp(-r * (d - 1))
            assert c.gamma_d <= ratio <= c.Gamma_d

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_bounds_on_grid(self, d):
        space = Space.hyperbolic(d)
        c = volume_constants(space)
        r = np.arange(2.0, 12.0 + 1e-9, 0.05)
        ratio = ball_volumes(space, r) * np.exp(-r * (d - 1))
        assert np.all(ratio >= c.gamma_d * (1 - 1e-12))
        assert np.all(ratio <= c.Gamma_d * (1 + 1e-12))


class TestKlein:
    def test_centre_maps_to_zero(self, rng):
        for space in (H2, H3):
            x = random_hyperbolic(space, 1, rng)[0]
            assert np.allclose(klein_coords(space, x, x), 0, atol=1e-15)

    def test_gnomonic(self):
        q = [math.cosh(1), math.sinh(1), 0]
        assert np.allclose(klein_coords(H2, origin(H2), q), [math.tanh(1), 0], rtol=1e-14)

    def test_euclidean_translation(self):
        assert np.allclose(klein_coords(E2, [1, 1], [3, 1]), [2, 0])

    def test_inside_unit_ball(self, rng):
        x = random_hyperbolic(H3, 1, rng)[0]
        q = random_hyperbolic(H3, 500, rng, 8.0)
        assert np.all(np.linalg.norm(klein_coords(H3, x, q), axis=1) < 1)

    def test_norm_is_tanh_of_distance(self, rng):
        x = random_hyperbolic(H2, 1, rng)[0]
        q = random_hyperbolic(H2, 50, rng)
        k = np.linalg.norm(klein_coords(H2, x, q), axis=1)
        assert np.allclose(k, np.tanh(distance(H2, x, q)), rtol=1e-10)

    @pytest.mark.parametrize("space", [H2, H3], ids=str)
    def test_hull_membership_matches_flat_limit(self, space):
        """Klein-chart hull membership agrees with the rescaled tangent-space (flat) test."""
        rng = np.random.default_rng(7)
        d = space.dim
        agree = checked = 0
        for _ in range(1000):
            m = int(rng.integers(d + 1, d + 4))
            pts = random_hyperbolic(space, m, rng)
            x = random_hyperbolic(space, 1, rng, 1.5)[0]
            # flat limit: shrink everything toward x by 1e-3 along geodesics
            tangent = np.array([log_map(space, x, p).vec for p in pts])
            small = np.array([exp_map(space, TangentVector(x, 1e-3 * v)) for v in tangent])
            # skip instances within 1e-6 (before shrinking) of the hull boundary
            flat = min_norm_point(tangent, 1e-12)
            if flat.residual < 1e-6 and not flat.contains(1e-12):
                continue
            checked += 1
            a = exact_contains(klein_coords(space, x, small))
            b = exact_contains(1e-3 * tangent)
            c = exact_contains(klein_coords(space, x, pts))
            agree += a == b == c
        assert checked > 500
        assert agree == checked

    def test_chart_independence(self, rng):
        """Membership of x in conv(S) does not depend on which point the chart is centred at."""
        for _ in range(200):
            pts = random_hyperbolic(H2, 4, rng, 2.0)
            x = random_hyperbolic(H2, 1, rng, 1.0)[0]
            at_x = exact_contains(klein_coords(H2, x, pts))
            # chart at the origin: x lies in the hull iff its image does
            img = klein_coords(H2, origin(H2), np.vstack([pts, x]))
            at_p = exact_contains(img[:-1] - img[-1])
            assert at_x == at_p

    def test_poincare(self):
        q = np.array([math.cosh(1), math.sinh(1), 0])
        assert np.allclose(poincare_coords(H2, q), [math.tanh(0.5), 0])
        with pytest.raises(ValueError):
            poincare_coords(E2, [0, 0])


class TestIsometry:
    def test_identity(self, rng):
        from nnegraph.geometry import Isometry

        pts = random_hyperbolic(H2, 5, rng)
        assert np.allclose(apply_isometry(Isometry.identity(H2), pts), pts)

    def test_boost(self):
        out = apply_isometry(boost(H2, 1, 1.0), origin(H2))
        assert np.allclose(out, [math.cosh(1), math.sinh(1), 0], rtol=1e-14)

    @pytest.mark.parametrize("space", [E2, H2, E3, H3], ids=str)
    def test_preserves_distances(self, space, rng):
        for _ in range(20):
            pts = random_points(space, 30, rng)
            iso = random_isometry(space, rng)
            moved = apply_isometry(iso, pts)
            i, j = np.triu_indices(30, 1)
            before = distance(space, pts[i], pts[j])
            after = distance(space, moved[i], moved[j])
            assert np.max(np.abs(before - after)) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 3))
    def test_isometry_keeps_hyperboloid(self, seed, shift):
        rng = np.random.default_rng(seed)
        iso = random_isometry(H3, rng, max_shift=shift)
        q = apply_isometry(iso, random_hyperbolic(H3, 10, rng))
        assert np.all(np.abs(minkowski_dot(q, q) + 1.0) <= 1e-14 * q[:, 0] ** 2 + 1e-15)
        assert np.all(q[:, 0] >= 1)
