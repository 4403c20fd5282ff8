from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcd.imagecore import (
    connected_components,
    histogram,
    mask_and,
    mean_threshold_mask,
    round_half_away,
    to_gray,
)
from oracles import flood_fill_labels


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, 2.5, -0.5, -1.5, 0.49, -0.51)] == [1, 2, 3, -1, -2, 0, -1]


class TestToGray:
    def test_equal_channels(self):
        img = np.full((2, 3, 3), 77, np.uint8)
        assert np.all(to_gray(img) == 77)

    def test_gray_passthrough(self, rng):
        g = rng.integers(0, 256, (5, 4), dtype=np.uint8)
        assert np.array_equal(to_gray(g), g)
        assert np.array_equal(to_gray(g[:, :, None]), g)

    def test_red(self):
        assert to_gray(np.array([[[255, 0, 0]]], np.uint8))[0, 0] == 76

    def test_luminance_matches_float_rounding(self, rng):
        img = rng.integers(0, 256, (20, 20, 3))
        ref = np.floor(0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2] + 0.5)
        assert np.array_equal(to_gray(img.astype(np.uint8)), ref.astype(np.uint8))

    @pytest.mark.parametrize("shape", [(2, 2, 2), (2, 2, 4), (2, 2, 2, 2)])
    def test_rejects_channels(self, shape):
        with pytest.raises(ValueError):
            to_gray(np.zeros(shape, np.uint8))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            to_gray(np.zeros((0, 3), np.uint8))


class TestMeanThreshold:
    def test_uniform(self):
        assert not mean_threshold_mask(np.full((4, 4), 100, np.uint8)).any()

    def test_two_levels(self):
        g = np.zeros((4, 4), np.uint8)
        g[:, 2:] = 200
        assert np.array_equal(mean_threshold_mask(g), g == 200)

    def test_hand(self):
        assert mean_threshold_mask(np.array([[10, 20, 90]], np.uint8)).tolist() == [[False, False, True]]

    def test_no_rounding_at_fractional_mean(self):
        # mean is 1/3; a pixel equal to 0 is below, 1 is above
        assert mean_threshold_mask(np.array([[0, 0, 1]], np.uint8)).tolist() == [[False, False, True]]

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
    def test_count_property(self, g):
        m = mean_threshold_mask(g)
        if g.min() == g.max():
            assert m.sum() == 0
        else:
            assert 0 < m.sum() < g.size
        mean = Fraction(int(g.astype(np.int64).sum()), g.size)
        assert all((Fraction(int(v)) > mean) == b for v, b in zip(g.ravel(), m.ravel()))


class TestConnectedComponents:
    def test_empty(self):
        cc = connected_components(np.zeros((3, 3), bool))
        assert cc.component_count == 0 and cc.areas.size == 0

    def test_diagonal(self):
        m = np.array([[1, 0], [0, 1]], bool)
        assert connected_components(m, 4).component_count == 2
        assert connected_components(m, 8).component_count == 1

    def test_l_shape(self):
        m = np.zeros((5, 5), bool)
        pts = [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3)]  # (x, y)
        for x, y in pts:
            m[y, x] = True
        cc = connected_components(m)
        assert cc.component_count == 1 and cc.areas[0] == 5
        assert cc.centroids[0] == pytest.approx([sum(p[0] for p in pts) / 5, sum(p[1] for p in pts) / 5])

    def test_raster_discovery_order(self):
        m = np.zeros((4, 6), bool)
        m[0, 5] = True     # first in raster order
        m[2, 0] = True
        m[3, 3] = True
        cc = connected_components(m, 4)
        assert cc.labels[0, 5] == 1 and cc.labels[2, 0] == 2 and cc.labels[3, 3] == 3

    def test_bad_connectivity(self):
        with pytest.raises(ValueError):
            connected_components(np.zeros((2, 2), bool), 6)

    @settings(max_examples=150, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 16), st.integers(1, 16))), st.sampled_from([4, 8]))
    def test_matches_flood_fill(self, m, conn):
        cc = connected_components(m, conn)
        ref, n = flood_fill_labels(m.tolist(), conn)
        assert cc.component_count == n
        assert np.array_equal(cc.labels, np.array(ref, dtype=cc.labels.dtype))
        for k in range(n):
            ys, xs = np.nonzero(np.array(ref) == k + 1)
            assert cc.areas[k] == xs.size
            assert cc.centroids[k] == pytest.approx([xs.mean(), ys.mean()])
        # centroid inside the bounding rectangle
        for (x0, y0, x1, y1), (cx, cy) in zip(cc.bounding_boxes(), cc.centroids):
            assert x0 <= cx <= x1 and y0 <= cy <= y1


class TestHistogram:
    def test_uniform(self):
        h = histogram(np.full((4, 4), 7, np.uint8))
        assert h[7] == 16 and h.sum() == 16 and h.shape == (256,)

    def test_extremes(self):
        h = histogram(np.array([[0, 255]], np.uint8))
        assert h[0] == 1 and h[255] == 1 and h.sum() == 2

    def test_random_counts(self, rng):
        g = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        h = histogram(g)
        assert h.sum() == 1024
        assert all(h[v] == int((g == v).sum()) for v in range(256))
        # exact mean round trip
        assert Fraction(int((np.arange(256) * h).sum()), int(h.sum())) == Fraction(int(g.astype(int).sum()), g.size)


class TestMaskAnd:
    def test_identity_and_annihilator(self, rng):
        a = rng.random((6, 7)) > 0.5
        assert np.array_equal(mask_and(a, np.ones_like(a)), a)
        assert not mask_and(a, np.zeros_like(a)).any()

    def test_shared_pixel(self):
        a = np.zeros((3, 3), bool)
        b = np.zeros((3, 3), bool)
        a[1, 1] = a[1, 2] = True
        b[1, 2] = b[2, 2] = True
        out = mask_and(a, b)
        assert out.sum() == 1 and out[1, 2]

    def test_mismatch(self):
        with pytest.raises(ValueError):
            mask_and(np.zeros((2, 2), bool), np.zeros((2, 3), bool))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_algebra(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (r.random((5, 5)) > 0.5 for _ in range(3))
        assert np.array_equal(mask_and(a, b), mask_and(b, a))
        assert np.array_equal(mask_and(mask_and(a, b), c), mask_and(a, mask_and(b, c)))
        assert np.array_equal(mask_and(a, a), a)
