import numpy as np
import numpy.testing as npt
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mrdl.estimator import DictionaryTextureClassifier
from mrdl.texdata import ClassSpec, SyntheticSpec, generate


@pytest.fixture(scope="module")
def toy():
    spec = SyntheticSpec(
        classes=(ClassSpec("fine", 5.0, 0.0), ClassSpec("coarse", 2.0, 90.0)),
        image_size=16,
        patches_per_group=2,
        seed=21,
    )
    data = generate(spec, 20)
    return data.images, data.labels


def small_clf(**kw):
    defaults = dict(
        levels=(1, 2), widths=(4, 8), dict_size=2, shared_dim=8,
        lr=0.03, batch_size=10, epochs=6, seed=0,
    )
    defaults.update(kw)
    return DictionaryTextureClassifier(**defaults)


def test_fit_predict_roundtrip(toy):
    X, y = toy
    clf = small_clf().fit(X, y)
    preds = clf.predict(X)
    assert preds.shape == y.shape
    assert set(np.unique(preds)) <= {0, 1}
    assert clf.score(X, y) > 0.5


def test_noncontiguous_labels_are_mapped(toy):
    X, y = toy
    fancy = np.where(y == 0, 5, 9)
    clf = small_clf().fit(X, fancy)
    npt.assert_array_equal(clf.classes_, [5, 9])
    assert set(np.unique(clf.predict(X))) <= {5, 9}


def test_channel_axis_added_for_3d_input(toy):
    X, y = toy
    clf = small_clf(epochs=1).fit(X[:, 0], y)
    assert clf.config_.in_channels == 1
    assert clf.predict(X[:, 0]).shape == y.shape


def test_predict_proba_rows_sum_to_one(toy):
    X, y = toy
    clf = small_clf(epochs=2).fit(X, y)
    proba = clf.predict_proba(X[:5])
    assert proba.shape == (5, 2)
    npt.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)


def test_transform_returns_shared_dim_embeddings(toy):
    X, y = toy
    clf = small_clf(epochs=1).fit(X, y)
    emb = clf.transform(X[:7])
    assert emb.shape == (7, 8)
    assert np.all(np.isfinite(emb))


def test_get_set_params_and_clone():
    clf = small_clf(dict_size=4)
    params = clf.get_params()
    assert params["dict_size"] == 4
    other = clone(clf)
    assert other.get_params() == params
    other.set_params(epochs=3)
    assert other.epochs == 3


def test_unfitted_raises(toy):
    X, _ = toy
    with pytest.raises(NotFittedError):
        small_clf().predict(X)


def test_fit_is_deterministic(toy):
    X, y = toy
    a = small_clf(epochs=2).fit(X, y)
    b = small_clf(epochs=2).fit(X, y)
    npt.assert_array_equal(a.decision_function(X[:4]), b.decision_function(X[:4]))


def test_label_count_mismatch_rejected(toy):
    X, y = toy
    with pytest.raises(ValueError, match="samples"):
        small_clf().fit(X, y[:-1])
