import math

import numpy as np
import pytest

from mcd.boxes import CandidateBox
from mcd.errors import DataError
from mcd.mirp import MirpConfig
from mcd.san import checkpoint
from mcd.san import layers as L
from mcd.san import network as N
from mcd.san.gradcheck import check_gradients, random_case
from mcd.san.training import (
    EarlyStopping,
    PatchSet,
    TrainConfig,
    accuracy,
    build_training_set,
    classify,
    format_log,
    sample_image_patches,
    train,
)
from mcd.formats import ground_truth

ARCH = N.ArchConfig()


class TestLayers:
    def test_conv_against_loops(self, rng):
        x = rng.standard_normal((2, 3, 5, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out, _ = L.conv2d_forward(x, w, b, 1)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 4, 5, 6))
        for n in range(2):
            for o in range(4):
                for i in range(5):
                    for j in range(6):
                        ref[n, o, i, j] = (xp[n, :, i:i + 3, j:j + 3] * w[o]).sum() + b[o]
        assert np.allclose(out, ref)

    def test_maxpool_floor(self, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        out, _ = L.maxpool2_forward(x)
        assert out.shape == (1, 2, 2, 2)
        assert out[0, 1, 1, 0] == x[0, 1, 2:4, 0:2].max()

    def test_softmax_ce_grad_closed_form(self, rng):
        logits = rng.standard_normal((5, 2))
        labels = rng.integers(0, 2, 5)
        p = L.softmax(logits)
        eps = 1e-6
        num = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            d = np.zeros_like(logits)
            d[idx] = eps
            num[idx] = (L.cross_entropy(L.softmax(logits + d), labels)
                        - L.cross_entropy(L.softmax(logits - d), labels)) / (2 * eps)
        closed = L.softmax_cross_entropy_grad(p, labels)
        assert np.allclose(closed, (p - np.eye(2)[labels]) / 5)
        assert np.allclose(closed, num, atol=1e-8)

    def test_dropout_inverted(self, rng):
        x = np.ones((1000, 10))
        out, keep = L.dropout_forward(x, 0.5, rng)
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert abs(out.mean() - 1) < 0.1


class TestLoss:
    def test_values(self):
        assert N.loss(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1, 0])) == pytest.approx(0, abs=1e-12)
        assert N.loss(np.full((3, 2), 0.5), np.array([0, 1, 1])) == pytest.approx(math.log(2))
        probs = np.array([[0.1, 0.9], [0.5, 0.5]])
        assert N.loss(probs, np.array([1, 0])) == pytest.approx(-(math.log(0.9) + math.log(0.5)) / 2)
        assert N.loss(np.array([[1.0, 0.0]]), np.array([1])) == pytest.approx(-math.log(1e-12))


class TestForward:
    def test_rows_sum_to_one_and_duplicates(self, rng):
        params = N.init_params(ARCH, 3)
        x = rng.random((6, 1, 10, 10))
        x[5] = x[2]
        probs, _ = N.forward(params, x, "eval")
        assert probs.shape == (6, 2)
        assert np.allclose(probs.sum(1), 1, atol=1e-6)
        assert np.allclose(probs[5], probs[2], rtol=1e-12, atol=0)

    def test_zero_network_uniform(self, rng):
        params = {k: np.zeros_like(v) for k, v in N.init_params(ARCH).items()}
        params.update({k: np.ones_like(v) for k, v in params.items() if k.endswith("running_var")})
        probs, _ = N.forward(params, rng.random((3, 1, 10, 10)), "eval")
        assert np.allclose(probs, 0.5)

    def test_rejects(self):
        params = N.init_params(ARCH)
        with pytest.raises(ValueError):
            N.forward(params, np.full((1, 1, 10, 10), np.nan))
        with pytest.raises(ValueError):
            N.forward(params, np.zeros((1, 1, 8, 8)))
        with pytest.raises(ValueError):
            N.forward(params, np.zeros((1, 1, 10, 10)), "test")

    def test_eval_is_pure(self, rng):
        params = N.init_params(ARCH, 1)
        before = {k: v.copy() for k, v in params.items()}
        N.forward(params, rng.random((4, 1, 10, 10)), "eval")
        N.forward(params, rng.random((4, 1, 10, 10)), "train", rng=rng)
        assert all(np.array_equal(before[k], params[k]) for k in params)

    def test_train_mode_uses_batch_stats(self, rng):
        params = N.init_params(ARCH, 1)
        x = rng.random((8, 1, 10, 10))
        a, _ = N.forward(params, x, "train", dropout=0.0)
        b, _ = N.forward(params, x, "eval")
        assert not np.allclose(a, b)

    def test_running_stats_update(self, rng):
        params = N.init_params(ARCH, 1)
        x = rng.random((8, 1, 10, 10))
        _, cache = N.forward(params, x, "train", dropout=0.0)
        N.update_running_stats(params, cache, 0.1)
        z, _ = L.conv2d_forward(x, params["conv1.w"], params["conv1.b"], 1)
        mu = z.mean(axis=(0, 2, 3))
        var = z.var(axis=(0, 2, 3), ddof=1)
        assert np.allclose(params["bn1.running_mean"], 0.1 * mu)
        assert np.allclose(params["bn1.running_var"], 0.9 + 0.1 * var)


class TestSpatialAttention:
    def test_identity_and_zero(self, rng):
        f = rng.standard_normal((4, 5, 5))
        w = rng.standard_normal((1, 2, 7, 7))
        assert np.allclose(N.spatial_attention(f, w, np.array([1e3])), f)
        assert np.allclose(N.spatial_attention(f, w, np.array([-1e3])), 0)

    def test_single_channel_pooling(self, rng):
        f = rng.standard_normal((1, 6, 6))
        w = np.zeros((1, 2, 7, 7))
        w[0, 0, 3, 3] = 1.0   # avg map
        w[0, 1, 3, 3] = -1.0  # max map
        # avg == max for one channel, so the logits cancel: attention 0.5 everywhere
        assert np.allclose(N.spatial_attention(f, w, np.zeros(1)), 0.5 * f)

    def test_against_direct(self, rng):
        f = rng.standard_normal((3, 4, 4))
        w = rng.standard_normal((1, 2, 7, 7))
        b = rng.standard_normal(1)
        pooled = np.stack([f.mean(0), f.max(0)])
        padded = np.pad(pooled, ((0, 0), (3, 3), (3, 3)))
        logit = np.array([[(padded[:, i:i + 7, j:j + 7] * w[0]).sum() + b[0] for j in range(4)] for i in range(4)])
        ref = f / (1 + np.exp(-logit))
        assert np.allclose(N.spatial_attention(f, w, b), ref)

    def test_magnitude_bound(self, rng):
        f = rng.standard_normal((2, 8, 3, 3))
        out = N.spatial_attention(f, rng.standard_normal((1, 2, 7, 7)), rng.standard_normal(1))
        assert np.all(np.abs(out) <= np.abs(f) + 1e-15)


class TestBackward:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradcheck(self, seed):
        params, batch, labels = random_case(seed)
        for t in check_gradients(params, batch, labels, eps=1e-3, seed=seed):
            assert t.rel_error < 1e-4, t

    def test_gradcheck_plain_small_eps(self):
        # no routing replay: tiny steps stay on one side of every kink. The
        # conv biases feed batch norm, so their true gradient is ~0: skipped.
        params, batch, labels = random_case(7)
        for t in check_gradients(params, batch, labels, eps=1e-6, max_elements=8, freeze_routing=False):
            if not (t.name.startswith("conv") and t.name.endswith(".b")):
                assert t.rel_error < 1e-4, t

    def test_shapes_match_params(self, rng):
        params = N.init_params(ARCH, 0)
        _, cache = N.forward(params, rng.random((4, 1, 10, 10)), "train", dropout=0.0)
        grads = N.backward(cache, np.array([0, 1, 0, 1]))
        assert set(grads) == set(N.trainable(params))
        assert all(grads[k].shape == params[k].shape for k in grads)

    def test_duplicated_batch_mean_reduction(self, rng):
        params, batch, labels = random_case(5, n=3)
        _, c1 = N.forward(params, batch, "train", dropout=0.0)
        g1 = N.backward(c1, labels)
        _, c2 = N.forward(params, np.concatenate([batch, batch]), "train", dropout=0.0)
        g2 = N.backward(c2, np.concatenate([labels, labels]))
        assert all(np.allclose(g1[k], g2[k]) for k in g1)

    def test_confident_correct_gives_small_gradients(self, rng):
        params = N.init_params(ARCH, 0)
        params["fc2.b"] = np.array([-40.0, 40.0])
        _, cache = N.forward(params, rng.random((4, 1, 10, 10)), "train", dropout=0.0)
        grads = N.backward(cache, np.ones(4, int))
        assert max(np.abs(g).max() for g in grads.values()) < 1e-12


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = N.init_params(ARCH, 4)
        checkpoint.save(tmp_path / "m.mcdw", params)
        back = checkpoint.load(tmp_path / "m.mcdw")
        assert set(back) == set(params)
        for k in params:
            assert np.array_equal(back[k], params[k].astype(np.float32).astype(np.float64))
        assert checkpoint.dumps(back) == checkpoint.dumps(params)

    def test_layout(self):
        data = checkpoint.dumps({"b": np.array([1.0, 2.0]), "a": np.zeros((1, 2))})
        assert data[:4] == b"MCDW" and int.from_bytes(data[4:8], "little") == 1
        assert int.from_bytes(data[8:12], "little") == 1 and data[12:13] == b"a"  # sorted by name

    @pytest.mark.parametrize("mutate", [lambda d: b"XXXX" + d[4:], lambda d: d[:4] + b"\x02\0\0\0" + d[8:],
                                        lambda d: d[:-3], lambda d: d[:10]])
    def test_corrupt(self, mutate):
        data = checkpoint.dumps(N.init_params(ARCH, 0))
        with pytest.raises(DataError):
            checkpoint.loads(mutate(data))

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            checkpoint.load(tmp_path / "none.mcdw")


def toy_patches(n, rng):
    """Bright centred Gaussian blobs (cells) vs flat noise."""
    yy, xx = np.mgrid[0:10, 0:10]
    blob = np.exp(-((xx - 4.5) ** 2 + (yy - 4.5) ** 2) / 3.0)
    x = rng.random((n, 10, 10)) * 0.2
    y = (np.arange(n) % 2).astype(np.int64)
    x[y == 1] += 0.7 * blob
    return PatchSet(x, y)


class TestTraining:
    def test_early_stopping_counts(self):
        es = EarlyStopping(30)
        stops = [es.step(e, 1.0) for e in range(1, 40)]
        assert stops.index(True) == 30  # epoch 31: 30 stagnant epochs after the first
        es = EarlyStopping(3, 1e-6)
        assert not es.step(1, 1.0) and not es.step(2, 1.0 - 5e-7) and not es.step(3, 0.5)
        assert es.best == 0.5

    def test_separable_toy(self, rng):
        cfg = TrainConfig(max_epochs=50, patience=10, batch_size=32, seed=0)
        params, hist = train(toy_patches(200, rng), toy_patches(60, rng), cfg)
        assert accuracy(params, toy_patches(100, rng)) >= 0.95
        vals = [h[2] for h in hist]
        best_epoch = int(np.argmin(vals))
        assert N.loss(N.predict_proba(params, toy_patches(10, np.random.default_rng(0)).x)[:, None].repeat(2, 1),
                      np.zeros(10, int)) >= 0 and best_epoch < len(hist)

    def test_stops_on_flat_validation(self, rng, monkeypatch):
        import mcd.san.training as T
        monkeypatch.setattr(T, "evaluate_loss", lambda *a, **k: 0.5)
        _, hist = train(toy_patches(16, rng), toy_patches(8, rng), TrainConfig(max_epochs=100, patience=30))
        assert len(hist) == 31

    def test_best_params_returned(self, rng):
        cfg = TrainConfig(max_epochs=15, patience=3, batch_size=16, seed=2)
        tr, va = toy_patches(64, rng), toy_patches(32, rng)
        params, hist = train(tr, va, cfg)
        from mcd.san.training import evaluate_loss
        assert evaluate_loss(params, va, ARCH) == pytest.approx(min(h[2] for h in hist))

    def test_deterministic_log(self, rng):
        tr, va = toy_patches(48, rng), toy_patches(16, rng)
        cfg = TrainConfig(max_epochs=4, batch_size=16, seed=9)
        p1, h1 = train(tr, va, cfg)
        p2, h2 = train(tr, va, cfg)
        assert format_log(h1) == format_log(h2)
        assert checkpoint.dumps(p1) == checkpoint.dumps(p2)

    def test_divergence(self, rng, monkeypatch):
        from mcd.errors import TrainingDiverged
        import mcd.san.training as T
        monkeypatch.setattr(T, "evaluate_loss", lambda *a, **k: float("nan"))
        with pytest.raises(TrainingDiverged):
            train(toy_patches(32, rng), toy_patches(8, rng), TrainConfig(max_epochs=5))

    def test_empty_sets(self, rng):
        with pytest.raises(ValueError):
            train(PatchSet.concat([]), toy_patches(4, rng))

    def test_config(self):
        with pytest.raises(ValueError):
            TrainConfig(n_pos=5, n_neg=5)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


def cell_image():
    g = np.full((80, 80), 20, np.uint8)
    for x, y in ((20, 20), (50, 40)):
        g[y - 1:y + 2, x - 1:x + 2] = 200
    g[60, 60] = 220  # unannotated speck: a hard negative
    return g, np.ones((80, 80), bool), ground_truth("t", [(20, 20), (50, 40)], 80, 80)


class TestSampling:
    def test_ratio_and_hard_negatives(self, rng):
        g, ac, gt = cell_image()
        ps = sample_image_patches(g, ac, gt.boxes, MirpConfig(), TrainConfig(), rng)
        assert int(ps.y.sum()) == 2 and len(ps) == 12
        assert ps.x.shape == (12, 10, 10) and ps.x.max() <= 1.0
        # the speck at (60, 60) is among the negatives
        assert any(np.isclose(p.max(), 220 / 255) for p in ps.x[ps.y == 0])

    def test_no_cells(self, rng):
        g, ac, _ = cell_image()
        ps = sample_image_patches(g, ac, [], MirpConfig(), TrainConfig(), rng)
        assert len(ps) == 0

    def test_empty_ac(self, rng, caplog):
        g, _, gt = cell_image()
        ps = sample_image_patches(g, np.zeros((80, 80), bool), gt.boxes, MirpConfig(), TrainConfig(), rng)
        assert int(ps.y.sum()) == 2 and len(ps) == 2
        assert "empty AC" in caplog.text

    def test_seeded(self):
        g, ac, gt = cell_image()
        a = build_training_set([g], [ac], [gt], rng=np.random.default_rng(3))
        b = build_training_set([g], [ac], [gt], rng=np.random.default_rng(3))
        assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()


class TestClassify:
    def test_empty_and_duplicates(self, rng):
        params = N.init_params(ARCH, 0)
        g = rng.integers(0, 256, (30, 30), dtype=np.uint8)
        assert classify(params, g, []) == []
        b = CandidateBox(3, 4, 13, 14)
        (b1, p1), (b2, p2) = classify(params, g, [b, b])
        assert p1 == p2 and b1 is b

    def test_toy_model_on_planted_blob(self, rng):
        params, _ = train(toy_patches(200, rng), toy_patches(60, rng),
                          TrainConfig(max_epochs=40, patience=10, batch_size=32))
        g = (rng.random((40, 40)) * 0.2 * 255).astype(np.uint8)
        yy, xx = np.mgrid[0:10, 0:10]
        g[10:20, 10:20] = np.clip(g[10:20, 10:20] + 0.7 * 255 * np.exp(-((xx - 4.5) ** 2 + (yy - 4.5) ** 2) / 3.0),
                                  0, 255).astype(np.uint8)
        (_, p_cell), (_, p_bg) = classify(params, g, [CandidateBox(10, 10, 20, 20), CandidateBox(25, 25, 35, 35)])
        assert p_cell > 0.5 > p_bg
