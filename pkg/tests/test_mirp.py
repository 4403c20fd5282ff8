import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcd.imagecore import histogram
from mcd.mirp import MirpConfig, bright_mask, effective_threshold, otsu_threshold, propose, propose_with_areas
from oracles import otsu_brute


def hist(pairs):
    h = np.zeros(256, np.int64)
    for v, c in pairs:
        h[v] += c
    return h


class TestOtsu:
    def test_bimodal_first_maximizer(self):
        assert otsu_threshold(hist([(10, 50), (200, 50)])) == 10

    def test_constant(self):
        assert otsu_threshold(hist([(77, 30)])) == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            otsu_threshold(np.zeros(256))
        with pytest.raises(ValueError):
            otsu_threshold(np.ones(10))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 255), st.integers(1, 1000)), min_size=1, max_size=12))
    def test_matches_brute_force_sparse(self, pairs):
        h = hist(pairs)
        assert otsu_threshold(h) == otsu_brute(h.tolist())

    def test_matches_brute_force_dense(self, rng):
        for _ in range(20):
            h = rng.integers(0, 50, 256)
            h[rng.random(256) < 0.5] = 0
            h[0] += 1
            assert otsu_threshold(h) == otsu_brute(h.tolist())


class TestThreshold:
    def test_effective(self):
        assert effective_threshold(100, 1.0) == 100.0
        assert effective_threshold(100, 0.85) == pytest.approx(85.0)
        t = effective_threshold(128, 0.7)
        assert t == pytest.approx(89.6)
        g = np.array([[89, 90]], np.uint8)
        assert bright_mask(g, t).tolist() == [[False, True]]

    def test_strict(self):
        assert bright_mask(np.array([[100, 101]], np.uint8), 100.0).tolist() == [[False, True]]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.5, 1.5), st.floats(0.5, 1.5))
    def test_lambda_monotone(self, seed, l1, l2):
        lo, hi = min(l1, l2), max(l1, l2)
        g = np.random.default_rng(seed).integers(0, 256, (16, 16), dtype=np.uint8)
        t = otsu_threshold(histogram(g))
        a = bright_mask(g, effective_threshold(t, lo))
        b = bright_mask(g, effective_threshold(t, hi))
        assert not (b & ~a).any()


def dark_with_blob(pixels, shape=(60, 60), level=200):
    g = np.full(shape, 20, np.uint8)
    for x, y in pixels:
        g[y, x] = level
    return g


class TestPropose:
    def test_single_blob(self):
        g = dark_with_blob([(30, 30), (31, 30), (30, 31)])
        ac = np.ones_like(g, bool)
        boxes = propose(g, ac, MirpConfig())
        assert len(boxes) == 1
        b = boxes[0]
        cx, cy = (30 + 31 + 30) / 3, (30 + 30 + 31) / 3
        assert b.coords == (round(cx - 5), round(cy - 5), round(cx - 5) + 10, round(cy - 5) + 10)
        assert b.source_centroid == pytest.approx((cx, cy))

    def test_outside_ac(self):
        g = dark_with_blob([(30, 30), (31, 30), (30, 31)])
        ac = np.zeros_like(g, bool)
        ac[:20, :20] = True
        assert propose(g, ac) == []

    def test_too_large(self):
        px = [(10 + i % 6, 10 + i // 6) for i in range(30)]
        g = dark_with_blob(px)
        assert propose(g, np.ones_like(g, bool)) == []
        assert len(propose(g, np.ones_like(g, bool), MirpConfig(s_max=30))) == 1

    def test_border_clamp(self):
        g = dark_with_blob([(0, 0), (1, 0)], shape=(30, 40))
        boxes = propose(g, np.ones_like(g, bool))
        assert boxes[0].coords == (0, 0, 10, 10)
        g = dark_with_blob([(39, 29)], shape=(30, 40))
        assert propose(g, np.ones_like(g, bool))[0].coords == (30, 20, 40, 30)

    def test_centroid_rule_vs_clip(self):
        # a blob straddling the AC border: centroid outside, two pixels inside
        g = dark_with_blob([(10, 10), (11, 10), (12, 10), (13, 10)])
        ac = np.zeros_like(g, bool)
        ac[:, :13] = True  # centroid x = 11.5 rounds to pixel 12: inside
        ac2 = np.zeros_like(g, bool)
        ac2[:, :12] = True  # pixel 12 excluded: outside
        assert len(propose(g, ac)) == 1
        assert propose(g, ac2) == []
        clipped = propose(g, ac2, MirpConfig(ac_rule="clip"))
        assert len(clipped) == 1 and clipped[0].source_centroid == pytest.approx((10.5, 10))

    def test_order_and_areas(self):
        g = dark_with_blob([(40, 5), (5, 40), (6, 40)])
        boxes, areas = propose_with_areas(g, np.ones_like(g, bool))
        assert [b.source_centroid for b in boxes] == [(40.0, 5.0), (5.5, 40.0)]
        assert areas == [1, 2]

    def test_empty_ac(self, rng):
        g = rng.integers(0, 256, (30, 30), dtype=np.uint8)
        assert propose(g, np.zeros_like(g, bool)) == []

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            propose(np.zeros((5, 5), np.uint8), np.ones((5, 6), bool))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_boxes_fixed_size_inside(self, seed):
        r = np.random.default_rng(seed)
        g = (r.random((40, 50)) ** 6 * 255).astype(np.uint8)
        ac = r.random((40, 50)) > 0.3
        for b in propose(g, ac, MirpConfig(lam=0.8)):
            assert b.width == 10 and b.height == 10 and b.inside(50, 40)

    @pytest.mark.parametrize("kw", [dict(lam=0), dict(lam=1.6), dict(s_min=0), dict(s_min=5, s_max=4),
                                    dict(box_w=0), dict(ac_rule="x")])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            MirpConfig(**kw)
