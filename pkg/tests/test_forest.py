import numpy as np
import pytest

from fcpnfv.errors import DegenerateLabels, ShapeError
from fcpnfv.shallow import RfHyper, predict_rf, train_rf
from fcpnfv.shallow.forest import RfModel, Tree

from conftest import blobs
from oracles import exhaustive_gini_split


def test_constant_labels_give_leaves_and_zero_oob(rng):
    X = rng.normal(size=(20, 3))
    with pytest.raises(DegenerateLabels):
        train_rf(X, np.ones(20))
    m = train_rf(X, np.ones(20), RfHyper(n_trees=10), allow_single_class=True)
    assert all(t.n_nodes == 1 for t in m.trees)
    assert m.oob_error == 0.0


def test_root_split_matches_exhaustive_gini():
    x = [0.3, 1.7, 2.2, 0.9, 3.5, 2.8, 1.1, 4.0]
    y = [0, 1, 1, 0, 1, 0, 0, 1]
    X = np.array(x)[:, None]
    m = train_rf(X, y, RfHyper(n_trees=1, bootstrap=False, mtry=1))
    tree = m.trees[0]
    thr, _ = exhaustive_gini_split(x, y)
    assert tree.threshold[0] == pytest.approx(thr)
    # every internal node also agrees with the oracle on its own subset
    for node in range(tree.n_nodes):
        if tree.feature[node] < 0:
            continue
        inside = [i for i in range(8) if _reaches(tree, X[i], node)]
        sub_thr, _ = exhaustive_gini_split([x[i] for i in inside], [y[i] for i in inside])
        assert tree.threshold[node] == pytest.approx(sub_thr)
    assert np.array_equal(m.predict(X), y)


def _reaches(tree, x, target):
    node = 0
    while True:
        if node == target:
            return True
        if tree.feature[node] < 0:
            return False
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]


def _stump(label_index, K=2):
    counts = np.zeros((1, K))
    counts[0, label_index] = 1
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), counts)


def test_three_tree_vote():
    m = RfModel([_stump(0), _stump(0), _stump(1)], [], 0.0, np.zeros(1), ("A", "B"), 1)
    label, p = predict_rf(m, [0.0])
    assert label == "A"
    np.testing.assert_allclose(p, [2 / 3, 1 / 3])
    tie = RfModel([_stump(1), _stump(0)], [], 0.0, np.zeros(1), ("A", "B"), 1)
    assert predict_rf(tie, [0.0])[0] == "A"


def test_single_tree_is_hard(rng):
    X, y = blobs(30, [[0, 0], [3, 3]], 1.0, seed=2)
    m = train_rf(X, y, RfHyper(n_trees=1, seed=4))
    P = m.predict_proba(X)
    assert set(P.ravel().tolist()) <= {0.0, 1.0}
    leaf = m.trees[0].predict_index(X)
    assert np.array_equal(m.predict(X), np.asarray(m.classes)[leaf])


def test_vote_fractions_match_tally():
    X, y = blobs(40, [[0, 0], [2, 0], [0, 2]], 1.0, seed=6)
    m = train_rf(X, y, RfHyper(n_trees=15, seed=1))
    P = m.predict_proba(X)
    per_tree = [t.predict_index(X) for t in m.trees]
    for i in range(len(X)):
        counts = [0, 0, 0]
        for v in per_tree:
            counts[v[i]] += 1
        assert [c / 15 for c in counts] == pytest.approx(P[i].tolist(), abs=1e-15)


def test_thread_count_does_not_change_forest():
    X, y = blobs(60, [[0, 0, 0], [1.5, 1.5, 0]], 1.0, seed=8)
    a = train_rf(X, y, RfHyper(n_trees=12, seed=9, n_jobs=1))
    b = train_rf(X, y, RfHyper(n_trees=12, seed=9, n_jobs=4))
    assert a.oob_error == b.oob_error
    assert a.per_tree_seed == b.per_tree_seed
    for s, t in zip(a.trees, b.trees):
        assert np.array_equal(s.threshold, t.threshold) and np.array_equal(s.feature, t.feature)


def test_oob_tracks_held_out_error():
    X, y = blobs(1000, [[0, 0], [1.5, 0.5]], 1.0, seed=21)
    r = np.random.default_rng(0)
    order = r.permutation(len(y))
    X, y = X[order], y[order]
    m = train_rf(X[:1000], y[:1000], RfHyper(n_trees=60, seed=3, min_leaf=5))
    held = float(np.mean(m.predict(X[1000:]) != y[1000:]))
    assert abs(m.oob_error - held) < 0.05


def test_importances_and_shape_error():
    r = np.random.default_rng(1)
    X = r.normal(size=(200, 3))
    y = (X[:, 1] > 0).astype(int)
    m = train_rf(X, y, RfHyper(n_trees=20, seed=2))
    assert m.feature_importances.sum() == pytest.approx(1.0)
    assert int(np.argmax(m.feature_importances)) == 1
    with pytest.raises(ShapeError):
        m.predict(np.zeros((1, 2)))
