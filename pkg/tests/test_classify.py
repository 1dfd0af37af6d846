"""Classifier correctness against brute-force and convex-solver oracles."""

import numpy as np
import pytest
import scipy.optimize

from rydtomo.classify import (
    ClassificationReport,
    NearestNeighborClassifier,
    RandomForest,
    Standardizer,
    SupportVectorClassifier,
    evaluate_classifier,
    load_model,
    make_classifier,
    median_pairwise_sq_distance,
    rbf_kernel,
    save_model,
)


def blobs(seed, n_per_class=40, n_classes=3, spread=0.6):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-4, 4, size=(n_classes, 4))
    x = np.concatenate([centers[k] + spread * rng.normal(size=(n_per_class, 4))
                        for k in range(n_classes)])
    y = np.repeat(np.arange(1, n_classes + 1), n_per_class)
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def test_standardizer_centers_and_scales():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, size=(50, 4))
    x[:, 2] = 7.0  # constant column must not divide by zero
    z = Standardizer.fit(x)
    out = z.apply(x)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0)[[0, 1, 3]], 1.0, rtol=1e-12)
    np.testing.assert_allclose(out[:, 2], 0.0, atol=1e-12)
    again = Standardizer.from_dict(z.to_dict())
    np.testing.assert_array_equal(again.apply(x), out)


def knn_reference(x_train, y_train, x_query, k):
    """Brute-force vote with the tie conventions spelled out."""
    mu, sd = x_train.mean(axis=0), x_train.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    a, b = (x_train - mu) / sd, (x_query - mu) / sd
    out = []
    for q in b:
        d2 = ((a - q) ** 2).sum(axis=1)
        order = np.argsort(d2, kind="stable")[:k]
        labels = y_train[order]
        counts = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        top = max(counts.values())
        tied = sorted(lab for lab, c in counts.items() if c == top)
        if len(tied) == 1:
            out.append(tied[0])
            continue
        means = {lab: d2[order][labels == lab].mean() for lab in tied}
        best = min(means.values())
        out.append(min(lab for lab in tied if means[lab] <= best + 1e-12))
    return np.array(out)


def test_knn_matches_brute_force():
    x, y = blobs(3, n_per_class=30, spread=2.5)  # heavy overlap forces ties
    xq = blobs(4, n_per_class=15, spread=2.5)[0]
    model = NearestNeighborClassifier(k=5).fit(x, y)
    np.testing.assert_array_equal(model.predict(xq), knn_reference(x, y, xq, 5))


def test_knn_single_neighbor_recalls_training_points():
    x, y = blobs(5)
    model = NearestNeighborClassifier(k=1).fit(x, y)
    np.testing.assert_array_equal(model.predict(x), y)


def test_knn_chunked_prediction_is_seamless():
    x, y = blobs(6, n_per_class=50)
    xq = blobs(7)[0]
    model = NearestNeighborClassifier(k=5).fit(x, y)
    np.testing.assert_array_equal(model.predict(xq, chunk=7), model.predict(xq))


def test_knn_rejects_too_few_points():
    x, y = blobs(8, n_per_class=1, n_classes=2)
    with pytest.raises(ValueError):
        NearestNeighborClassifier(k=5).fit(x, y)


def test_knn_roundtrip(tmp_path):
    x, y = blobs(9)
    model = NearestNeighborClassifier(k=3).fit(x, y)
    save_model(model, tmp_path / "knn.json")
    again = load_model(tmp_path / "knn.json")
    np.testing.assert_array_equal(again.predict(x), model.predict(x))


def test_rbf_kernel_values():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    k = rbf_kernel(a, a, sigma2=2.0)
    np.testing.assert_allclose(k, [[1.0, np.exp(-0.25)], [np.exp(-0.25), 1.0]],
                               rtol=1e-12)
    assert median_pairwise_sq_distance(a) == pytest.approx(1.0)


def svm_dual_reference(kernel, y, c):
    """Solve the dual problem with a generic constrained optimizer."""
    n = len(y)
    q = kernel * np.outer(y, y)

    def objective(alpha):
        return 0.5 * alpha @ q @ alpha - alpha.sum()

    def gradient(alpha):
        return q @ alpha - 1.0

    res = scipy.optimize.minimize(
        objective, np.zeros(n), jac=gradient, method="SLSQP",
        bounds=[(0.0, c)] * n,
        constraints=[{"type": "eq", "fun": lambda a: a @ y,
                      "jac": lambda a: y.astype(float)}],
        options={"maxiter": 500, "ftol": 1e-12})
    assert res.success
    return -objective(res.x)


def xor_problem(seed, n=60):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    y = np.where(x[:, 0] * x[:, 1] > 0, 1, -1)
    return x, y


def test_smo_reaches_the_dual_optimum():
    from rydtomo.classify import _smo_binary
    for seed in (0, 1):
        x, y = xor_problem(seed, n=50)
        kernel = rbf_kernel(x, x, sigma2=0.5)
        alpha, b = _smo_binary(kernel, y.astype(float), c=10.0, tol=1e-3,
                               max_passes=3, max_sweeps=2000)
        q = kernel * np.outer(y, y)
        achieved = alpha.sum() - 0.5 * alpha @ q @ alpha
        target = svm_dual_reference(kernel, y.astype(float), 10.0)
        assert achieved == pytest.approx(target, rel=2e-2)
        assert np.all(alpha >= -1e-12) and np.all(alpha <= 10.0 + 1e-12)
        assert abs(alpha @ y) < 1e-9


def test_svm_learns_xor():
    x, y = xor_problem(2, n=120)
    labels = np.where(y > 0, 2, 1)
    model = SupportVectorClassifier().fit(x, labels)
    assert (model.predict(x) == labels).mean() >= 0.95
    assert model.n_support.sum() > 0


def test_svm_separates_blobs():
    x, y = blobs(11, n_per_class=40, n_classes=4)
    model = SupportVectorClassifier().fit(x, y)
    assert (model.predict(x) == y).mean() >= 0.99


def test_svm_is_deterministic():
    x, y = blobs(13)
    a = SupportVectorClassifier().fit(x, y)
    b = SupportVectorClassifier().fit(x, y)
    np.testing.assert_array_equal(a.dual_coef, b.dual_coef)
    np.testing.assert_array_equal(a.bias, b.bias)


def test_svm_roundtrip(tmp_path):
    x, y = blobs(14)
    model = SupportVectorClassifier().fit(x, y)
    save_model(model, tmp_path / "svm.json")
    again = load_model(tmp_path / "svm.json")
    np.testing.assert_allclose(again.decision_values(x), model.decision_values(x),
                               rtol=1e-12)
    np.testing.assert_array_equal(again.predict(x), model.predict(x))


def test_gini_split_oracle():
    """Exhaustively check the chosen split on a crafted one-feature set."""
    from rydtomo.classify import _gini_best_split
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    onehot = np.eye(2)[y]
    impurity, feature, threshold = _gini_best_split(x, onehot, np.array([0]))
    assert impurity == pytest.approx(0.0)  # both children pure
    assert feature == 0
    assert threshold == pytest.approx(2.5)
    # a constant feature offers no boundary at all
    assert _gini_best_split(np.ones((4, 1)), onehot, np.array([0])) is None
    # interleaved labels: the best cut isolates one end
    x2 = np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]])
    y2 = np.array([0, 1, 0, 1, 1, 1])
    impurity2 = _gini_best_split(x2, np.eye(2)[y2], np.array([0]))[0]
    # brute force over the five midpoints
    best = min(
        (nl * (1 - (np.mean(y2[:nl] == 0) ** 2 + np.mean(y2[:nl] == 1) ** 2))
         + (6 - nl) * (1 - (np.mean(y2[nl:] == 0) ** 2 + np.mean(y2[nl:] == 1) ** 2)))
        / 6.0
        for nl in range(1, 6))
    assert impurity2 == pytest.approx(best)


def test_single_tree_memorizes_clean_data():
    x, y = blobs(15, n_per_class=25)
    tree = RandomForest(n_trees=1, seed=3)
    tree.fit(x, y)
    assert (tree.predict(x) == y).mean() == 1.0


def test_forest_generalizes_and_is_deterministic():
    x, y = blobs(16, n_per_class=60)
    xt, yt = x[-30:], y[-30:]
    model = RandomForest(n_trees=25, seed=0).fit(x[:-30], y[:-30])
    assert (model.predict(xt) == yt).mean() >= 0.9
    again = RandomForest(n_trees=25, seed=0).fit(x[:-30], y[:-30])
    np.testing.assert_array_equal(model.predict(xt), again.predict(xt))
    shuffled = RandomForest(n_trees=25, seed=1).fit(x[:-30], y[:-30])
    assert shuffled.to_dict() != model.to_dict()


def test_stumps_are_depth_limited():
    x, y = blobs(17, n_per_class=40)
    model = RandomForest(n_trees=5, max_depth=1, seed=0).fit(x, y)
    for tree in model.trees:
        def depth(node):
            if "label" in node:
                return 0
            return 1 + max(depth(node["l"]), depth(node["r"]))
        assert depth(tree.to_dict()) <= 1


def test_forest_roundtrip(tmp_path):
    x, y = blobs(18)
    model = RandomForest(n_trees=10, seed=2).fit(x, y)
    save_model(model, tmp_path / "rf.json")
    again = load_model(tmp_path / "rf.json")
    np.testing.assert_array_equal(again.predict(x), model.predict(x))


def test_factory_and_unknown_kind(tmp_path):
    assert isinstance(make_classifier("knn", k=3), NearestNeighborClassifier)
    assert isinstance(make_classifier("svm"), SupportVectorClassifier)
    assert isinstance(make_classifier("rf", seed=1), RandomForest)
    with pytest.raises(ValueError):
        make_classifier("boost")
    (tmp_path / "junk.json").write_text('{"kind": "boost"}')
    with pytest.raises(ValueError):
        load_model(tmp_path / "junk.json")


class _Fixed:
    def __init__(self, out):
        self.out = np.asarray(out)

    def predict(self, x):
        return self.out


def test_report_counts_and_format():
    y = np.array([1, 1, 2, 2, 3])
    pred = np.array([1, 2, 2, 2, 1])
    report = evaluate_classifier(_Fixed(pred), np.zeros((5, 2)), y)
    assert report.accuracy == pytest.approx(3 / 5)
    assert report.n_samples == 5
    assert report.labels == [1, 2, 3]
    grid = np.array(report.confusion)
    assert grid[0, 0] == 1 and grid[0, 1] == 1 and grid[1, 1] == 2 and grid[2, 0] == 1
    text = report.format()
    assert "accuracy" in text and "3/5" not in text
    doc = report.to_dict()
    again = ClassificationReport(**doc)
    assert again.accuracy == report.accuracy
