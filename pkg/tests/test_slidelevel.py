import numpy as np
import pytest

from wsiuq.errors import ConfigError, DataError, DomainError, ShapeError
from wsiuq.metrics import accuracy_reject_curve
from wsiuq.predictions import PredictionSet
from wsiuq.slidelevel import (
    SENTINEL,
    AttentionMILHead,
    MILConfig,
    aggregate_top_q,
    bag_accuracy,
    mil_gradient_check,
    slide_methods,
    slide_predictions_to_set,
    stitch_confidence_map,
    train_mil,
)


def one_draw(probs, **kw):
    probs = np.asarray(probs, dtype=float)
    return PredictionSet(np.arange(len(probs)), probs[:, None, :], "t", **kw)


def separable_bags(rng, n, n_features=4, size=12):
    """Label-1 bags hide one instance shifted by +8 on feature 0."""
    bags, labels = [], []
    for i in range(n):
        bag = rng.standard_normal((size, n_features))
        y = i % 2
        if y:
            bag[rng.integers(size), 0] += 8.0
        bags.append(bag)
        labels.append(y)
    return bags, np.array(labels)


class TestConfidenceMap:
    def test_all_ones(self):
        xs, ys = np.meshgrid(np.arange(3), np.arange(2))
        m = stitch_confidence_map(xs.ravel(), ys.ravel(), np.ones(6), 3, 2)
        np.testing.assert_array_equal(m.values, np.ones((2, 3)))
        assert m.mask.all()

    def test_missing_tile_gets_sentinel(self):
        m = stitch_confidence_map([0, 1], [0, 0], [0.2, 0.7], 2, 2, "s")
        np.testing.assert_array_equal(m.values, [[0.2, 0.7], [SENTINEL, SENTINEL]])
        np.testing.assert_array_equal(m.mask, [[True, True], [False, False]])

    def test_duplicate_coordinates(self):
        with pytest.raises(DataError):
            stitch_confidence_map([0, 0], [1, 1], [0.1, 0.2], 2, 2)

    def test_out_of_grid(self):
        with pytest.raises(DomainError):
            stitch_confidence_map([2], [0], [0.1], 2, 2)

    def test_misaligned(self):
        with pytest.raises(ShapeError):
            stitch_confidence_map([0, 1], [0], [0.1], 2, 2)

    def test_pgm_and_csv(self, tmp_path):
        m = stitch_confidence_map([0, 1], [0, 0], [1.0, 0.5], 2, 2, "s")
        grey, mask = m.to_pgm()
        assert grey == "P2\n2 2\n255\n255 128\n0 0\n"
        assert mask == "P2\n2 2\n255\n255 255\n0 0\n"
        paths = m.write(tmp_path)
        assert [p.name for p in paths] == ["s.pgm", "s.mask.pgm", "s.csv"]
        back = np.loadtxt(tmp_path / "s.csv", delimiter=",")
        np.testing.assert_array_equal(back, m.values)


class TestTopQ:
    def test_identical_tiles(self):
        pset = one_draw(np.tile([0.3, 0.7], (50, 1)))
        for q in (0.01, 0.3, 1.0):
            np.testing.assert_allclose(aggregate_top_q(pset, q).probs, [0.3, 0.7])

    def test_two_hundred_tiles_take_two(self):
        rng = np.random.default_rng(0)
        p1 = rng.uniform(0.5, 0.9, 200)
        p1[[17, 123]] = [0.99, 0.98]
        pset = one_draw(np.column_stack([1 - p1, p1]))
        np.testing.assert_allclose(aggregate_top_q(pset, 0.01).probs[1], 0.985)

    def test_hand_example(self):
        pset = one_draw([[0.9, 0.1], [0.8, 0.2], [0.5, 0.5], [0.6, 0.4]])
        out = aggregate_top_q(pset, 0.5, "s")
        np.testing.assert_allclose(out.probs, [0.85, 0.15])
        assert out.uncertainty == pytest.approx(0.15)
        assert out.slide_id == "s"

    def test_q_one_is_plain_mean(self):
        rng = np.random.default_rng(1)
        p = rng.dirichlet([1, 1], 37)
        np.testing.assert_allclose(aggregate_top_q(one_draw(p), 1.0).probs, p.mean(axis=0))

    def test_tiny_q_takes_one(self):
        pset = one_draw([[0.9, 0.1], [0.2, 0.8]])
        np.testing.assert_allclose(aggregate_top_q(pset, 1e-6).probs, [0.9, 0.1])

    @pytest.mark.parametrize("q", [0.0, -0.1, 1.5])
    def test_bad_q(self, q):
        with pytest.raises(DomainError):
            aggregate_top_q(one_draw([[0.5, 0.5]]), q)

    def test_to_set(self):
        preds = [aggregate_top_q(one_draw([[0.9, 0.1]]), 1.0, "a"),
                 aggregate_top_q(one_draw([[0.3, 0.7]]), 1.0, "b")]
        pset = slide_predictions_to_set(preds, [0, 1])
        assert pset.probs.shape == (2, 1, 2)
        np.testing.assert_array_equal(pset.slide_ids, ["a", "b"])


class TestAttentionHead:
    def head(self, dropout=0.25, seed=0):
        return AttentionMILHead(4, dropout=dropout, rng=np.random.default_rng(seed))

    def test_single_tile_weight_one(self):
        _, a = self.head().forward(np.ones((1, 4)))
        assert a[0] == 1.0

    def test_identical_tiles_equal_weights(self):
        _, a = self.head().forward(np.tile([0.5, -1.0, 2.0, 0.1], (2, 1)))
        np.testing.assert_allclose(a, [0.5, 0.5], rtol=0, atol=1e-15)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        head = self.head()
        bag = rng.standard_normal((9, 4))
        perm = rng.permutation(9)
        p, a = head.forward(bag)
        pp, ap = head.forward(bag[perm])
        np.testing.assert_allclose(pp, p, rtol=0, atol=1e-14)
        np.testing.assert_allclose(ap, a[perm], rtol=0, atol=1e-14)
        assert abs(a.sum() - 1) <= 1e-9

    def test_gradients(self):
        rng = np.random.default_rng(4)
        head = self.head()
        bag = rng.standard_normal((5, 4))
        assert mil_gradient_check(head, bag, 1) < 1e-4
        mask = head.sample_mask(5, rng)
        assert mil_gradient_check(head, bag, 0, mask=mask) < 1e-4

    def test_train_mode_needs_rng(self):
        with pytest.raises(ConfigError):
            self.head().forward(np.ones((2, 4)), "train")

    def test_bad_bag(self):
        with pytest.raises(ShapeError):
            self.head().forward(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            self.head().forward(np.ones((0, 4)))


class TestTraining:
    def test_defaults(self):
        cfg = MILConfig()
        assert (cfg.min_epochs, cfg.max_epochs, cfg.dropout) == (50, 200, 0.25)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            MILConfig(min_epochs=10, max_epochs=5)

    def test_separable_bags(self):
        rng = np.random.default_rng(5)
        tb, ty = separable_bags(rng, 40)
        vb, vy = separable_bags(rng, 20)
        head = AttentionMILHead(4, rng=np.random.default_rng(6))
        res = train_mil(head, tb, ty, vb, vy,
                        MILConfig(learning_rate=2e-3, min_epochs=5, max_epochs=60, patience=10))
        assert bag_accuracy(res.head, vb, vy) == 1.0
        assert res.val_losses[res.best_epoch - 1] == min(res.val_losses)

    def test_no_early_stop_with_large_patience(self):
        rng = np.random.default_rng(7)
        tb, ty = separable_bags(rng, 6)
        vb, vy = separable_bags(rng, 4)
        res = train_mil(AttentionMILHead(4, rng=rng), tb, ty, vb, vy,
                        MILConfig(min_epochs=1, max_epochs=4, patience=10))
        assert res.stopped_epoch == 4
        assert len(res.val_losses) == 4

    def test_single_class_rejected(self):
        rng = np.random.default_rng(8)
        tb, _ = separable_bags(rng, 4)
        with pytest.raises(DomainError):
            train_mil(AttentionMILHead(4), tb, np.zeros(4), tb, np.array([0, 1, 0, 1]))


class TestSlideMethods:
    def test_ensemble_draws(self):
        rng = np.random.default_rng(9)
        heads = [AttentionMILHead(4, rng=np.random.default_rng(s)) for s in range(5)]
        bags, y = separable_bags(rng, 6)
        pset = slide_methods(heads, bags, "ensemble", labels=y)
        assert pset.probs.shape == (6, 5, 2)

    def test_mcdo_without_dropout_is_constant(self):
        rng = np.random.default_rng(10)
        head = AttentionMILHead(4, dropout=0.0, rng=rng)
        bags, _ = separable_bags(rng, 3)
        pset = slide_methods([head], bags, "mcdo", 10, np.random.default_rng(0))
        for s in range(3):
            np.testing.assert_array_equal(pset.probs[s], np.tile(pset.probs[s, 0], (10, 1)))

    def test_mcdo_with_dropout_varies(self):
        rng = np.random.default_rng(11)
        head = AttentionMILHead(4, dropout=0.25, rng=rng)
        bags, _ = separable_bags(rng, 2)
        pset = slide_methods([head], bags, "mcdo", 10, np.random.default_rng(0))
        assert pset.probs[0].std(axis=0).max() > 0

    def test_oracle_slide_curve_monotone(self):
        rng = np.random.default_rng(12)
        heads = [AttentionMILHead(4, rng=np.random.default_rng(s)) for s in range(3)]
        bags, y = separable_bags(rng, 40)
        pset = slide_methods(heads, bags, "ensemble", labels=y)
        pred = pset.predicted_labels()
        u = (pred != y).astype(float)
        curve = accuracy_reject_curve(u, pred, y)
        assert np.all(np.diff(curve.values) >= -1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            slide_methods([AttentionMILHead(4)], [np.ones((2, 4))], "tta")
