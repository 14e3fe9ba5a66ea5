import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import Akima1DInterpolator

from ugae.core import PointCloud
from ugae.errors import OverlapError
from ugae.metrics import (LOSSLESS, RDCurve, akima_fit, bd_br, bd_psnr,
                          classify_frequency, classify_loss, color_psnr,
                          d1_psnr, d2_psnr, overlap_ratio, top_fraction)
from ugae.spatial import estimate_normals


def random_cloud(rng, n, depth, colored=True):
    coords = np.unique(rng.integers(0, 1 << depth, (n, 3)), axis=0)
    attrs = rng.integers(0, 256, coords.shape).astype(np.uint8) if colored else None
    return PointCloud(coords, attrs, depth)


def brute_d1_mse(a, b):
    def one_way(p, q):
        d = p[:, None, :] - q[None, :, :]
        return np.min(np.sum(d * d, axis=2), axis=1).mean()
    return max(one_way(a, b), one_way(b, a))


def plane(n=24, z=5):
    g = np.stack(np.meshgrid(np.arange(n), np.arange(n), [z]), -1).reshape(-1, 3)
    return PointCloud(g, None, 5)


class TestD1:
    def test_identical_lossless(self):
        c = random_cloud(np.random.default_rng(0), 300, 8)
        assert d1_psnr(c, c) == LOSSLESS

    def test_unit_shift(self):
        a = PointCloud([[0, 0, 0]], None, 10)
        b = PointCloud([[1, 0, 0]], None, 10)
        assert d1_psnr(a, b) == pytest.approx(10 * math.log10(3 * 1023 ** 2))
        assert d1_psnr(a, b) == pytest.approx(64.97, abs=0.01)

    def test_brute_force_and_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = random_cloud(rng, 200, 6, False), random_cloud(rng, 150, 6, False)
        mse = brute_d1_mse(a.coords, b.coords)
        assert d1_psnr(a, b) == pytest.approx(10 * math.log10(3 * 63 ** 2 / mse), rel=1e-12)
        assert d1_psnr(a, b) == d1_psnr(b, a, peak=63)

    def test_order_invariant(self):
        rng = np.random.default_rng(2)
        a, b = random_cloud(rng, 200, 6, False), random_cloud(rng, 150, 6, False)
        perm = PointCloud(b.coords[rng.permutation(len(b))], None, 6)
        assert d1_psnr(a, b) == d1_psnr(a, perm)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            d1_psnr(PointCloud(np.zeros((0, 3), int), None, 3), PointCloud([[0, 0, 0]], None, 3))


class TestD2:
    def test_identical_lossless(self):
        c = plane()
        assert d2_psnr(c, c, estimate_normals(c)) == LOSSLESS

    def test_tangent_displacement(self):
        ref = plane()
        shifted = PointCloud(ref.coords[ref.coords[:, 0] < 23] + [1, 0, 0], None, 5)
        n = estimate_normals(ref)
        assert d2_psnr(ref, shifted, n) == LOSSLESS
        assert math.isfinite(d1_psnr(ref, shifted))

    def test_d2_at_least_d1_on_planes(self):
        rng = np.random.default_rng(3)
        ref = plane()
        n = estimate_normals(ref)
        for _ in range(10):
            noisy = np.clip(ref.coords + rng.integers(-1, 2, ref.coords.shape), 0, 31)
            deg = PointCloud(np.unique(noisy, axis=0), None, 5)
            assert d2_psnr(ref, deg, n) >= d1_psnr(ref, deg)

    def test_missing_normals(self):
        c = plane()
        with pytest.raises(ValueError):
            d2_psnr(c, c, None)


class TestColorPsnr:
    def test_identical(self):
        c = random_cloud(np.random.default_rng(0), 100, 6)
        p = color_psnr(c, c)
        assert p.y == p.u == p.v == p.yuv == LOSSLESS

    def test_luma_offset_one(self):
        rng = np.random.default_rng(1)
        c = random_cloud(rng, 500, 6)
        grey = np.repeat(rng.integers(0, 255, (len(c), 1)), 3, axis=1).astype(np.uint8)
        a, b = c.with_attrs(grey), c.with_attrs(grey + 1)
        p = color_psnr(a, b)
        assert p.y == pytest.approx(10 * math.log10(255 ** 2), abs=1e-9)
        # grey has no chroma up to floating-point round-off
        assert p.u > 200 and p.v > 200

    def test_weighting(self):
        from ugae.metrics import ColorPsnr
        assert ColorPsnr(30.0, 30.0, 30.0).yuv == 30.0
        assert ColorPsnr(32.0, 16.0, 16.0).yuv == pytest.approx(30.0)

    def test_requires_attributes(self):
        c = random_cloud(np.random.default_rng(0), 10, 4, False)
        with pytest.raises(ValueError):
            color_psnr(c, c)


class TestRegions:
    def test_constant_colour_tie_break(self):
        c = random_cloud(np.random.default_rng(0), 201, 6)
        c = c.with_attrs(np.full((len(c), 3), 77, np.uint8))
        labels = classify_frequency(c)
        order = np.argsort(c.morton_keys())
        expected = np.zeros(len(c), bool)
        expected[order[:math.ceil(len(c) / 2)]] = True
        assert np.array_equal(labels, expected)

    def test_checker_half_dominates(self):
        n = 32
        g = np.stack(np.meshgrid(np.arange(n), np.arange(n), [0]), -1).reshape(-1, 3)
        checker = ((g[:, 0] // 2 + g[:, 1] // 2) % 2) * 200 + 20
        flat = np.full(len(g), 120)
        col = np.where(g[:, 0] < n // 2, checker, flat)
        c = PointCloud(g, np.repeat(col[:, None], 3, 1).astype(np.uint8), 5)
        labels = classify_frequency(c)
        left = g[:, 0] < n // 2
        assert labels[left].mean() > 0.9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 400), st.floats(0.01, 1.0))
    def test_exact_count(self, n, fraction):
        rng = np.random.default_rng(n)
        scores = rng.integers(0, 4, n).astype(float)
        labels = top_fraction(scores, rng.permutation(n), fraction)
        assert labels.sum() == math.ceil(fraction * n)

    def test_classify_loss_subset(self):
        rng = np.random.default_rng(4)
        c = random_cloud(rng, 400, 6)
        deg = c.attrs.copy()
        hit = rng.choice(len(c), 100, replace=False)
        deg[hit] = 255 - deg[hit]
        deg[hit] = np.where(deg[hit] == c.attrs[hit], 0, deg[hit])
        labels = classify_loss(c, deg, fraction=100 / len(c))
        assert set(np.flatnonzero(labels)) == set(hit)

    def test_overlap(self):
        a = np.array([1, 1, 0, 0], bool)
        assert overlap_ratio(a, a) == 1.0
        assert overlap_ratio(a, ~a) == 0.0
        with pytest.raises(ValueError):
            overlap_ratio(a, a[:3])

    def test_random_baseline(self):
        rng = np.random.default_rng(5)
        vals = []
        for _ in range(10):
            a = np.zeros(10_000, bool)
            b = np.zeros(10_000, bool)
            a[rng.choice(10_000, 5000, replace=False)] = True
            b[rng.choice(10_000, 5000, replace=False)] = True
            vals.append(overlap_ratio(a, b))
        assert abs(np.mean(vals) - 0.5) <= 0.05


class TestAkima:
    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        for n in (4, 5, 8):
            x = np.cumsum(rng.random(n) + 0.1)
            y = rng.normal(size=n)
            q = np.linspace(x[0], x[-1], 101)
            np.testing.assert_allclose(akima_fit(x, y)(q), Akima1DInterpolator(x, y)(q),
                                       atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_exact_at_knots_and_lines(self, n):
        x = np.array([0.1, 0.7, 1.0, 2.5, 4.0])[:n]
        y = np.array([3.0, -1.0, 2.0, 0.5, 8.0])[:n]
        np.testing.assert_array_equal(akima_fit(x, y)(x), y)
        f = akima_fit(x, 2.5 * x - 1)
        q = np.linspace(x[0], x[-1], 37)
        np.testing.assert_allclose(f(q), 2.5 * q - 1, atol=1e-12)

    def test_three_knots_parabola(self):
        x = np.array([0.0, 1.0, 3.0])
        f = akima_fit(x, x ** 2)
        np.testing.assert_allclose(f(np.linspace(0, 3, 13)), np.linspace(0, 3, 13) ** 2,
                                   atol=1e-12)

    def test_c1_continuity(self):
        rng = np.random.default_rng(1)
        x = np.cumsum(rng.random(7) + 0.2)
        f = akima_fit(x, rng.normal(size=7))
        h = 1e-7
        for xi in x[1:-1]:
            left = (f(xi) - f(xi - h)) / h
            right = (f(xi + h) - f(xi)) / h
            assert left == pytest.approx(right, abs=1e-5)
            # analytic one-sided derivatives from the adjoining pieces
            i = np.searchsorted(x, xi)
            c = f.coeffs
            hl = x[i] - x[i - 1]
            d_left = c[i - 1, 1] + 2 * c[i - 1, 2] * hl + 3 * c[i - 1, 3] * hl ** 2
            assert d_left == pytest.approx(c[i, 1], abs=1e-9)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            akima_fit([0, 1], [0, 1])(1.5)

    def test_integral(self):
        rng = np.random.default_rng(2)
        x = np.cumsum(rng.random(6) + 0.2)
        f = akima_fit(x, rng.normal(size=6))
        a, b = x[0] + 0.1, x[-1] - 0.3
        grid = np.linspace(a, b, 200_001)
        assert f.integrate(a, b) == pytest.approx(np.trapezoid(f(grid), grid), rel=1e-8)


def curve(rates, q):
    return RDCurve.from_points(rates, q)


REF = curve([0.1, 0.25, 0.6, 1.2, 2.0], [30.0, 33.5, 36.0, 38.2, 39.5])


class TestBd:
    def test_identical(self):
        assert bd_psnr(REF, REF) == 0.0
        assert bd_br(REF, REF) == 0.0

    def test_plus_one_db(self):
        test = curve(REF.rates, REF.qualities + 1)
        assert bd_psnr(REF, test) == pytest.approx(1.0, abs=1e-6)

    def test_rate_doubling(self):
        test = curve(REF.rates * 2, REF.qualities)
        assert bd_br(REF, test) == pytest.approx(100.0, abs=0.1)

    def test_antisymmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            other = curve(REF.rates * rng.uniform(0.6, 1.4),
                          REF.qualities + rng.normal(0, 0.5, 5).cumsum() * 0.2)
            try:
                p_ab, p_ba = bd_br(REF, other), bd_br(other, REF)
            except ValueError:
                continue
            assert bd_psnr(REF, other) == pytest.approx(-bd_psnr(other, REF), abs=1e-9)
            assert (1 + p_ab / 100) * (1 + p_ba / 100) == pytest.approx(1.0, abs=1e-6)

    def test_no_overlap(self):
        far = curve(REF.rates * 1000, REF.qualities)
        with pytest.raises(OverlapError):
            bd_psnr(REF, far)

    def test_lossless_points_excluded(self):
        c = curve([0.1, 0.2, 0.4], [30.0, 35.0, math.inf])
        assert len(c.rates) == 2

    def test_too_few_points(self):
        with pytest.raises(OverlapError):
            curve([0.1, 0.2], [30.0, math.inf])
