"""fit/predict facade: parameter protocol, workflow, input checking."""

import numpy as np
import pytest

from graftstereo.bench import SyntheticSpec, gen_pair
from graftstereo.errors import ConfigError, EmptyDataset, ShapeMismatch
from graftstereo.estimator import GraftStereoMatcher


@pytest.fixture(scope="module")
def pairs():
    fields = [("constant", 0), ("constant", 4), ("two_plane", 0, 4, 16),
              ("constant", 4)]
    return [gen_pair(SyntheticSpec(16, 32, field=f, seed=30 + i),
                     sample_id=f"e{i}") for i, f in enumerate(fields)]


@pytest.fixture(scope="module")
def fitted(pairs):
    est = GraftStereoMatcher(d_max=8, feature_width=4, feature_channels=4,
                             aggregator_width=4, epochs=2, b=0.5, seed=3)
    return est.fit(pairs)


class TestParamProtocol:
    def test_get_params_mirrors_constructor(self):
        est = GraftStereoMatcher(method="l2", d_max=16, lr=0.01)
        p = est.get_params()
        assert p["method"] == "l2"
        assert p["d_max"] == 16
        assert p["lr"] == 0.01
        assert set(p) == set(GraftStereoMatcher._param_names)

    def test_set_params_round_trip(self):
        est = GraftStereoMatcher()
        out = est.set_params(method="concat", seed=9)
        assert out is est
        assert est.get_params()["method"] == "concat"
        assert est.get_params()["seed"] == 9

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ConfigError, match="invalid parameter"):
            GraftStereoMatcher().set_params(window=5)

    def test_reconstructable_from_params(self):
        est = GraftStereoMatcher(method="l2", d_max=16, mu=0.2, seed=4)
        twin = GraftStereoMatcher(**est.get_params())
        assert twin.get_params() == est.get_params()

    def test_sklearn_clone_if_available(self):
        sklearn = pytest.importorskip("sklearn")
        est = GraftStereoMatcher(method="l2", seed=4)
        twin = sklearn.base.clone(est)
        assert twin.get_params() == est.get_params()


class TestWorkflow:
    def test_fit_returns_self_and_records_state(self, pairs):
        est = GraftStereoMatcher(d_max=8, feature_width=4,
                                 feature_channels=4, aggregator_width=4,
                                 epochs=1, seed=0)
        out = est.fit(pairs)
        assert out is est
        assert set(est.nets_) == {"feature", "aggregator"}
        assert len(est.loss_trace_) == len(pairs)

    def test_predict_shapes(self, fitted, pairs):
        preds = fitted.predict(pairs[:2])
        assert len(preds) == 2
        for p in preds:
            assert p.shape == (16, 32)
            assert p.dtype == np.float32
            assert np.isfinite(p).all()

    def test_predict_accepts_tuples(self, fitted, pairs):
        s = pairs[0]
        from_tuple = fitted.predict([(s.left.array[0], s.right.array[0])])
        from_sample = fitted.predict([s])
        np.testing.assert_array_equal(from_tuple[0], from_sample[0])

    def test_transform_gives_quarter_features(self, fitted, pairs):
        out = fitted.transform(pairs[:1])
        lf, rf = out[0]
        assert lf.shape == (4, 4, 8)
        assert rf.shape == (4, 4, 8)

    def test_fit_transform_matches_fit_then_transform(self, pairs):
        kw = dict(d_max=8, feature_width=4, feature_channels=4,
                  aggregator_width=4, epochs=1, seed=5)
        a = GraftStereoMatcher(**kw).fit_transform(pairs)
        b = GraftStereoMatcher(**kw).fit(pairs).transform(pairs)
        for (la, ra), (lb, rb) in zip(a, b):
            np.testing.assert_array_equal(la, lb)
            np.testing.assert_array_equal(ra, rb)

    def test_score_is_negative_mean_epe(self, fitted, pairs):
        from graftstereo.bench import epe
        from graftstereo.heads import DisparityMap
        from graftstereo.tensor import Tensor
        score = fitted.score(pairs)
        assert score <= 0
        manual = np.mean([
            epe(DisparityMap(Tensor(pred)), s.gt)
            for pred, s in zip(fitted.predict(pairs), pairs)])
        assert score == pytest.approx(-manual, rel=1e-6)

    def test_fit_is_seeded(self, pairs):
        kw = dict(d_max=8, feature_width=4, feature_channels=4,
                  aggregator_width=4, epochs=1, seed=6)
        a = GraftStereoMatcher(**kw).fit(pairs)
        b = GraftStereoMatcher(**kw).fit(pairs)
        np.testing.assert_array_equal(a.nets_["feature"].flat,
                                      b.nets_["feature"].flat)
        assert a.loss_trace_ == b.loss_trace_


class TestInputChecking:
    def test_unfitted_rejected(self, pairs):
        est = GraftStereoMatcher()
        for call in (est.predict, est.transform, est.score):
            with pytest.raises(ConfigError, match="not fitted"):
                call(pairs)

    def test_empty_input(self, fitted):
        with pytest.raises(EmptyDataset):
            fitted.predict([])

    def test_fit_requires_ground_truth(self, pairs):
        est = GraftStereoMatcher(d_max=8, epochs=1)
        bare = [(s.left.array[0], s.right.array[0]) for s in pairs]
        with pytest.raises(ConfigError, match="ground-truth"):
            est.fit(bare)

    def test_mismatched_pair_shapes(self, fitted):
        left = np.zeros((16, 32), dtype=np.float32)
        right = np.zeros((16, 36), dtype=np.float32)
        with pytest.raises(ShapeMismatch):
            fitted.predict([(left, right)])

    def test_mixed_sample_shapes(self, fitted):
        a = np.zeros((16, 32), dtype=np.float32)
        b = np.zeros((8, 16), dtype=np.float32)
        with pytest.raises(ShapeMismatch, match="mixed"):
            fitted.predict([(a, a), (b, b)])

    def test_malformed_item(self, fitted):
        with pytest.raises(ShapeMismatch, match="expected"):
            fitted.predict(["not a pair"])

    def test_d_max_divisibility_enforced(self, pairs):
        est = GraftStereoMatcher(d_max=6, epochs=1)
        with pytest.raises(ConfigError, match="divisible by 4"):
            est.fit(pairs)
