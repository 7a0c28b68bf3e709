import numpy as np
import pytest
from sklearn.base import clone

from hintnet.estimator import HintedAttentionClassifier
from hintnet.synthdata import GenConfig, generate_split


@pytest.fixture(scope="module")
def tiny_data():
    cfg = GenConfig(K=3, C=3, A=3, noise_dims=0, grid=8, min_side=2, max_side=5)
    return generate_split(cfg, bias=0.6, n=40, seed=21)


def make_clf(**kw):
    defaults = dict(
        mode="base", epochs=3, batch_size=8, lr=5e-3,
        embed_dim=5, hidden_dim=6, random_state=0,
    )
    defaults.update(kw)
    return HintedAttentionClassifier(**defaults)


def test_get_set_params_roundtrip():
    clf = make_clf()
    params = clf.get_params()
    assert params["mode"] == "base"
    assert params["supervised_fraction"] == 0.06
    clf2 = clone(clf).set_params(mode="hint", epochs=1)
    assert clf2.get_params()["mode"] == "hint"
    assert clf.get_params()["mode"] == "base"


def test_fit_predict_score(tiny_data):
    clf = make_clf().fit(tiny_data)
    assert clf.hyper_.K == 3 and clf.hyper_.D == 6
    assert clf.hyper_.A == 3 and clf.hyper_.V == 4
    preds = clf.predict(tiny_data)
    assert preds.shape == (40,)
    assert set(preds) <= {0, 1, 2}
    proba = clf.predict_proba(tiny_data[:5])
    assert proba.shape == (5, 3)
    np.testing.assert_allclose(proba.sum(axis=1), np.ones(5), atol=1e-12)
    assert 0.0 <= clf.score(tiny_data) <= 1.0
    assert len(clf.history_) == 3
    np.testing.assert_array_equal(clf.classes_, [0, 1, 2])


def test_warm_start_via_init(tiny_data):
    base = make_clf(epochs=4).fit(tiny_data)
    tuned = make_clf(mode="hint", epochs=1, supervised_fraction=0.5)
    tuned.fit(tiny_data, init=base.params_)
    assert tuned.history_[0]["supervised_count"] == 20
    # fresh weights differ from warm-started ones
    cold = make_clf(mode="hint", epochs=1, supervised_fraction=0.5).fit(tiny_data)
    assert any(
        not np.array_equal(cold.params_[n], tuned.params_[n]) for n in cold.params_
    )


def test_fit_deterministic(tiny_data):
    a = make_clf().fit(tiny_data)
    b = make_clf().fit(tiny_data)
    for name in a.params_:
        np.testing.assert_array_equal(a.params_[name], b.params_[name])
    assert a.history_ == b.history_


def test_y_override(tiny_data):
    y = np.zeros(len(tiny_data), dtype=int)
    clf = make_clf(epochs=8, lr=1e-2).fit(tiny_data, y=y)
    assert clf.score(tiny_data, y=y) >= 0.9
    with pytest.raises(ValueError):
        make_clf().fit(tiny_data, y=y[:3])


def test_unfitted_predict_raises(tiny_data):
    with pytest.raises(RuntimeError):
        make_clf().predict(tiny_data)


def test_evaluate_report(tiny_data):
    clf = make_clf().fit(tiny_data)
    report = clf.evaluate(tiny_data[:10], occlusion_examples=0)
    assert report.n_examples == 10
    assert 0.0 <= report.accuracy <= 1.0
