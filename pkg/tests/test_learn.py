"""From-scratch networks, training loops, one-class threshold, metrics and checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfmask.bench.cli import run_gradchecks
from rfmask.imaging import frame_to_images
from rfmask.learn import (ClassifierConfig, ConvStage, DivergenceError, ImageClassifier, LinearModel, RawIQConfig,
                          SparseAutoencoder, ThresholdModel, TrainedModel, confusion_matrix, evaluate,
                          evaluate_predictions, gradient_check, load_model, one_class_decide, pca_project, predict,
                          rates, reconstruction_mse, roc_curve, save_model, split_indices, train_autoencoder,
                          train_classifier, train_rawiq_classifier)
from rfmask.rfchain import apply_fingerprint, make_fingerprint, modulate

SIDE = 16
SMALL = ClassifierConfig(input_side=SIDE, num_classes=2, hidden_widths=(16,), conv_stage=ConvStage(4, 3, 2),
                         max_epochs=30, learning_rate=0.05)
GRAD_TOL = 1e-4
TAU_K = 3.5
CAL_SEED = 42


def _blobs(n_per_class, centres, rng, side=SIDE):
    """Images with a bright Gaussian bump at a class-specific location plus pixel noise."""
    yy, xx = np.mgrid[:side, :side]
    imgs, labels = [], []
    for c, (cy, cx) in enumerate(centres):
        bump = 200 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 4.0)
        for _ in range(n_per_class):
            imgs.append(np.clip(bump + rng.uniform(0, 30, (side, side)), 0, 255))
            labels.append(c)
    return np.array(imgs), np.array(labels)


def _device_images(device, strength, n_images, seed, chunk=100_000):
    """Fingerprinted symbols plus light receiver noise, imaged in the standard way."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, n_images * chunk)
    s = apply_fingerprint(modulate(bits), make_fingerprint(device, CAL_SEED, strength), rng).symbols
    s = s + 0.01 * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
    return np.stack([im.pixels for im in frame_to_images(s)]).astype(np.float64)


class TestClassifier:
    def test_separable_blobs_reach_full_accuracy(self):
        rng = np.random.default_rng(0)
        x, y = _blobs(30, [(4, 4), (11, 11)], rng)
        xt, yt = _blobs(20, [(4, 4), (11, 11)], rng)
        m = train_classifier(x, y, SMALL, np.random.default_rng(1))
        assert evaluate(m, xt, yt).accuracy == 1.0

    def test_untrained_ten_class_near_chance(self):
        rng = np.random.default_rng(2)
        centres = [(2 + k, 13 - k) for k in range(10)]
        x, y = _blobs(50, centres, rng)
        model = ImageClassifier(SIDE, 10, filters=4, kernel=3, hidden_widths=(16,), rng=np.random.default_rng(3))
        acc = evaluate(TrainedModel(model, {}, input_scale=255.0), x, y).accuracy
        # 500 samples: one binomial SE is about 0.013; an untrained net collapses onto a few classes
        assert acc <= 0.2

    def test_uniform_init_gives_near_uniform_output(self):
        model = ImageClassifier(SIDE, 10, filters=4, kernel=3, hidden_widths=(16,), rng=np.random.default_rng(4))
        p = predict(TrainedModel(model, {}, input_scale=255.0), np.full((SIDE, SIDE), 100.0))
        np.testing.assert_allclose(p, 0.1, atol=0.01)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_probability_simplex(self, seed):
        rng = np.random.default_rng(seed)
        model = ImageClassifier(SIDE, 10, filters=4, kernel=3, hidden_widths=(16,), rng=rng)
        for k, v in model.params.items():
            v *= rng.uniform(0.1, 50)
        p = predict(TrainedModel(model, {}, input_scale=255.0), rng.uniform(0, 255, (5, SIDE, SIDE)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_overfit_one_batch(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 255, (8, SIDE, SIDE))
        y = np.arange(8) % 4
        cfg = ClassifierConfig(input_side=SIDE, num_classes=4, hidden_widths=(64,), conv_stage=None,
                               max_epochs=200, min_epochs=200, batch_size=8, learning_rate=0.05, weight_decay=0.0)
        m = train_classifier(x, y, cfg, np.random.default_rng(6), val_images=x, val_labels=y)
        np.testing.assert_array_equal(predict(m, x).argmax(axis=1), y)

    def test_label_shuffled_training_near_chance(self):
        rng = np.random.default_rng(7)
        centres = [(2 + k, 13 - k) for k in range(10)]
        x, y = _blobs(24, centres, rng)
        xt, yt = _blobs(20, centres, rng)
        cfg = ClassifierConfig(input_side=SIDE, hidden_widths=(16,), conv_stage=ConvStage(4, 3, 2), max_epochs=15)
        m = train_classifier(x, rng.permutation(y), cfg, np.random.default_rng(8))
        # 200 test samples: chance 0.1 with SE ~0.02
        assert evaluate(m, xt, yt).accuracy < 0.25

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(9)
        x, y = _blobs(10, [(4, 4), (11, 11)], rng)
        cfg = ClassifierConfig(**{**SMALL.as_dict(), "max_epochs": 3, "min_epochs": 3})
        a = train_classifier(x, y, cfg, np.random.default_rng(10))
        b = train_classifier(x, y, cfg, np.random.default_rng(10))
        for k in a.model.params:
            np.testing.assert_array_equal(a.model.params[k], b.model.params[k])

    def test_early_stop_before_max_epochs(self):
        rng = np.random.default_rng(11)
        x, y = _blobs(20, [(4, 4), (11, 11)], rng)
        m = train_classifier(x, y, ClassifierConfig(**{**SMALL.as_dict(), "max_epochs": 60}), rng)
        # validation accuracy saturates at 1.0 so its variance drops to zero
        assert len(m.history) < 60

    def test_degenerate_labels(self):
        with pytest.raises(ValueError, match="degenerate"):
            train_classifier(np.zeros((6, SIDE, SIDE)), np.zeros(6, int), SMALL)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_config(self):
        rng = np.random.default_rng(12)
        x, y = _blobs(10, [(4, 4), (11, 11)], rng)
        x[0, 0, 0] = np.inf
        with pytest.raises(DivergenceError, match="learning_rate"):
            train_classifier(x, y, SMALL, rng)

    def test_shape_mismatch(self):
        model = ImageClassifier(SIDE, 2, filters=4, kernel=3, hidden_widths=(8,))
        with pytest.raises(ValueError):
            predict(TrainedModel(model, {}), np.zeros((5, 8, 8)))

    def test_split_is_disjoint_and_stratified(self):
        y = np.repeat(np.arange(10), 20)
        tr, va, te = split_indices(y, np.random.default_rng(0))
        assert len(set(tr) | set(va) | set(te)) == 200
        assert len(tr) == 120 and len(va) == 40 and len(te) == 40
        assert np.all(np.bincount(y[te]) == 4)


class TestRawIQ:
    LENGTH = 256

    def _chunks(self, n_per, rng, shift=0.5):
        # class 1 carries a DC offset on I; class 0 does not
        x = (rng.standard_normal((2 * n_per, self.LENGTH)) + 1j * rng.standard_normal((2 * n_per, self.LENGTH)))
        y = np.repeat([0, 1], n_per)
        x[y == 1] += shift
        return x, y

    def test_learns_separable_signal(self):
        rng = np.random.default_rng(0)
        x, y = self._chunks(40, rng)
        xt, yt = self._chunks(20, rng)
        cfg = RawIQConfig(length=self.LENGTH, num_classes=2, filters=4, hidden=8, max_epochs=20)
        m = train_rawiq_classifier(x, y, cfg, np.random.default_rng(1))
        assert evaluate(m, xt, yt).accuracy >= 0.95

    def test_label_shuffled_near_chance(self):
        rng = np.random.default_rng(2)
        x, y = self._chunks(40, rng)
        xt, yt = self._chunks(50, rng)
        cfg = RawIQConfig(length=self.LENGTH, num_classes=2, filters=4, hidden=8, max_epochs=10)
        m = train_rawiq_classifier(x, rng.permutation(y), cfg, np.random.default_rng(3))
        # two classes: chance 0.5, 100 test chunks, SE 0.05
        assert evaluate(m, xt, yt).accuracy < 0.7

    def test_wrong_length_rejected(self):
        cfg = RawIQConfig(length=self.LENGTH, num_classes=2)
        with pytest.raises(ValueError):
            train_rawiq_classifier(np.zeros((4, 100), complex), [0, 1, 0, 1], cfg)


class TestThreshold:
    def test_equal_mses(self):
        th = ThresholdModel.from_mse([0.25] * 7)
        assert th.tau == 0.25 and th.train_mse_std == 0.0

    def test_one_two_three(self):
        th = ThresholdModel.from_mse([1.0, 2.0, 3.0])
        assert (th.train_mse_mean, th.train_mse_std, th.tau) == (2.0, 1.0, 5.5)

    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=50))
    def test_coefficient(self, mses):
        th = ThresholdModel.from_mse(mses)
        assert th.tau - th.train_mse_mean == pytest.approx(TAU_K * th.train_mse_std, abs=1e-12)
        assert th.train_mse_std == pytest.approx(np.std(mses, ddof=1), abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            ThresholdModel.from_mse([1.0])


@pytest.fixture(scope="module")
def trained():
    """Autoencoder fitted to 12 of 16 images from one device at the calibrated strength."""
    imgs = _device_images(0, 0.005, 16, seed=0)
    ae, th = train_autoencoder(imgs[:12], rng=np.random.default_rng(0))
    return ae, th, imgs


class TestOneClass:
    def test_threshold_from_validation(self, trained):
        ae, th, _ = trained
        val = ae.history[0]["val_mse"]
        assert th.tau == pytest.approx(np.mean(val) + TAU_K * np.std(val, ddof=1))

    def test_training_images_accepted(self, trained):
        ae, th, imgs = trained
        assert all(one_class_decide(ae, th, im)[0] for im in imgs[:12])

    def test_held_out_same_device_accepted(self, trained):
        ae, th, imgs = trained
        assert sum(one_class_decide(ae, th, im)[0] for im in imgs[12:]) >= 3

    def test_exaggerated_fingerprint_rejected(self, trained):
        ae, th, _ = trained
        other = _device_images(1, 0.05, 4, seed=1)
        assert not any(one_class_decide(ae, th, im)[0] for im in other)

    def test_boundary_is_anomaly(self, trained):
        ae, _, imgs = trained
        mse = float(reconstruction_mse(ae, imgs[0])[0])
        assert one_class_decide(ae, mse, imgs[0]) == (False, mse)
        assert one_class_decide(ae, np.nextafter(mse, np.inf), imgs[0])[0]


class TestGradients:
    def test_linear_exact(self):
        rng = np.random.default_rng(0)
        err = gradient_check(LinearModel(5, 3, rng), rng.standard_normal((7, 5)), rng.standard_normal((7, 3)))
        assert err < 1e-8

    @pytest.mark.parametrize("name", ["image_classifier", "rawiq_classifier", "sparse_autoencoder"])
    def test_architectures(self, name):
        assert run_gradchecks(0)[name] < GRAD_TOL

    def test_dense_only_classifier(self):
        rng = np.random.default_rng(1)
        model = ImageClassifier(8, 3, filters=0, hidden_widths=(12, 6), weight_decay=1e-3, rng=rng)
        for k, v in model.params.items():
            if k.endswith("_b"):
                v += rng.normal(0, 0.1, v.shape)
        model.params["out_w"] *= 300
        assert gradient_check(model, rng.uniform(0, 1, (4, 8, 8)), np.array([0, 1, 2, 0])) < GRAD_TOL

    def test_autoencoder_with_strong_regularisers(self):
        rng = np.random.default_rng(2)
        ae = SparseAutoencoder(20, 6, sparsity=2.0, l2=0.5, rng=rng)
        assert gradient_check(ae, rng.uniform(0, 1, (5, 20))) < GRAD_TOL


class TestMetrics:
    def test_perfect_predictions(self):
        y = np.repeat(np.arange(4), 5)
        rep = evaluate_predictions(y, y, 4)
        np.testing.assert_array_equal(rep.confusion, 5 * np.eye(4))
        assert rep.accuracy == 1.0 and not rep.fpr.any() and not rep.fnr.any()

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=200))
    def test_confusion_conserves_counts(self, pairs):
        t, p = np.array(pairs).T
        c = confusion_matrix(t, p, 5)
        np.testing.assert_array_equal(c.sum(axis=1), np.bincount(t, minlength=5))
        assert c.sum() == len(pairs)

    def test_rates_two_class(self):
        c = np.array([[8, 2], [1, 9]])
        fpr, fnr = rates(c)
        assert fnr[0] == pytest.approx(0.2) and fpr[0] == pytest.approx(0.1)

    def test_auc_near_one(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, 500)
        roc = roc_curve(labels + 1e-3 * rng.standard_normal(500), labels)
        assert roc.auc == pytest.approx(1.0, abs=1e-9)
        assert np.all(np.diff(roc.fpr) >= 0)

    def test_auc_random(self):
        rng = np.random.default_rng(1)
        n = 4000
        labels = rng.integers(0, 2, n)
        # Mann-Whitney: SE of AUC under the null is sqrt((n1 + n0 + 1) / (12 n1 n0))
        n1 = labels.sum()
        se = np.sqrt((n + 1) / (12 * n1 * (n - n1)))
        assert abs(roc_curve(rng.random(n), labels).auc - 0.5) < 4 * se

    def test_empty_test_set(self):
        with pytest.raises(ValueError):
            evaluate_predictions([], [], 3)


class TestPca:
    def test_planar_points_reconstructed(self):
        rng = np.random.default_rng(0)
        basis = np.linalg.qr(rng.standard_normal((10, 2)))[0]
        coef = rng.standard_normal((50, 2)) * [3.0, 1.0]
        x = coef @ basis.T + 5.0
        coords, ratio = pca_project(x)
        assert ratio.sum() == pytest.approx(1.0)
        # coordinates are an isometry of the centred plane
        d0 = np.linalg.norm(coef[:, None] - coef[None], axis=-1)
        d1 = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
        np.testing.assert_allclose(d1, d0, atol=1e-9)

    def test_isotropic_variance_ratio(self):
        d = 20
        x = np.random.default_rng(1).standard_normal((20_000, d))
        _, ratio = pca_project(x)
        np.testing.assert_allclose(ratio, 1.0 / d, rtol=0.1)

    def test_rank_one_zero_second_component(self):
        x = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
        coords, ratio = pca_project(x)
        assert not coords[:, 1].any() and ratio[1] == 0.0

    def test_sign_convention_deterministic(self):
        x = np.random.default_rng(2).standard_normal((30, 4))
        np.testing.assert_array_equal(pca_project(x)[0], pca_project(x)[0])

    def test_two_devices_separate(self):
        # at a strength well above the calibrated default, raw pixel features already cluster by device
        feats = np.concatenate([_device_images(d, 0.05, 6, seed=10 + d).reshape(6, -1) for d in (0, 1)])
        labels = np.repeat([0, 1], 6)
        coords, _ = pca_project(feats)
        dist = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
        sil = []
        for i in range(12):
            same = labels == labels[i]
            a = dist[i, same].sum() / (same.sum() - 1)
            b = dist[i, ~same].mean()
            sil.append((b - a) / max(a, b))
        assert np.mean(sil) > 0.5

    def test_too_few(self):
        with pytest.raises(ValueError):
            pca_project(np.zeros((2, 3)))


class TestCheckpoint:
    def test_classifier_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        x, y = _blobs(6, [(4, 4), (11, 11)], rng)
        m = train_classifier(x, y, ClassifierConfig(**{**SMALL.as_dict(), "max_epochs": 2, "min_epochs": 2}), rng)
        back, th = load_model(save_model(m, tmp_path / "m.zip"))
        assert th is None and back.seed == m.seed and back.config == m.config
        np.testing.assert_array_equal(predict(back, x), predict(m, x))

    def test_autoencoder_roundtrip_with_threshold(self, tmp_path):
        rng = np.random.default_rng(1)
        imgs = rng.uniform(0, 255, (8, 8, 8))
        ae, th = train_autoencoder(imgs, rng=rng)
        back, th2 = load_model(save_model(ae, tmp_path / "a.zip", th))
        assert th2 == th
        np.testing.assert_array_equal(reconstruction_mse(back, imgs), reconstruction_mse(ae, imgs))

    def test_not_a_checkpoint(self, tmp_path):
        import zipfile
        p = tmp_path / "x.zip"
        with zipfile.ZipFile(p, "w") as z:
            z.writestr("header.json", '{"format": "other"}')
        with pytest.raises(ValueError):
            load_model(p)
