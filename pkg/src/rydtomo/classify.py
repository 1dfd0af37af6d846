"""Classifiers that read the network size off the probe signals.

Three standard families, implemented here directly on numpy so every
modelling choice is explicit and seedable: k-nearest neighbours, a soft
margin support vector machine trained by sequential minimal optimisation,
and a random forest grown on Gini impurity.  Distance-based models consume
standardized features; the forest consumes the raw probabilities.

All models serialize to self-describing JSON documents and predict through a
common ``predict(X)`` interface, so the evaluation and command-line layers
treat them interchangeably.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datagen import canonical_json

MODEL_SCHEMA = 1


@dataclass(frozen=True)
class Standardizer:
    """Per-feature shift and scale fitted on the training matrix."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant features pass through
        return cls(mean=mean, std=std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(mean=np.array(doc["mean"]), std=np.array(doc["std"]))


def _check_training_inputs(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad training shapes {x.shape} / {y.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(x)):
        raise ValueError("training features contain non-finite values")


class NearestNeighborClassifier:
    """Plain k-nearest neighbours with majority vote on standardized features.

    Vote ties go to the class with the smaller mean distance to the query,
    remaining ties to the smaller label.
    """

    def __init__(self, k: int = 5):
        self.k = k
        self.scaler: Optional[Standardizer] = None
        self.x: Optional[np.ndarray] = None
        self.y: Optional[np.ndarray] = None
        self.classes: Optional[np.ndarray] = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "NearestNeighborClassifier":
        _check_training_inputs(x, y)
        if self.k > x.shape[0]:
            raise ValueError(f"k={self.k} exceeds the {x.shape[0]} training points")
        self.scaler = Standardizer.fit(x)
        self.x = self.scaler.apply(x)
        self.y = y.astype(int).copy()
        self.classes = np.unique(self.y)
        return self

    def predict(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        if self.x is None:
            raise RuntimeError("classifier is not fitted")
        xq = self.scaler.apply(np.atleast_2d(x))
        sq_train = (self.x ** 2).sum(axis=1)
        out = np.empty(xq.shape[0], dtype=int)
        for start in range(0, xq.shape[0], chunk):
            block = xq[start:start + chunk]
            d2 = ((block ** 2).sum(axis=1)[:, None] + sq_train[None, :]
                  - 2.0 * block @ self.x.T)
            near = np.argpartition(d2, self.k - 1, axis=1)[:, :self.k]
            for r in range(block.shape[0]):
                idx = near[r]
                out[start + r] = self._vote(self.y[idx], d2[r, idx])
        return out

    def _vote(self, labels: np.ndarray, dist2: np.ndarray) -> int:
        counts = {c: 0 for c in labels}
        for c in labels:
            counts[c] += 1
        top = max(counts.values())
        tied = sorted(c for c, n in counts.items() if n == top)
        if len(tied) == 1:
            return int(tied[0])
        means = [(float(dist2[labels == c].mean()), int(c)) for c in tied]
        return min(means)[1]

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "kind": "knn", "k": self.k,
                "scaler": self.scaler.to_dict(),
                "x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NearestNeighborClassifier":
        model = cls(k=int(doc["k"]))
        model.scaler = Standardizer.from_dict(doc["scaler"])
        model.x = np.array(doc["x"], dtype=float)
        model.y = np.array(doc["y"], dtype=int)
        model.classes = np.unique(model.y)
        return model


def rbf_kernel(a: np.ndarray, b: np.ndarray, sigma2: float) -> np.ndarray:
    d2 = ((a ** 2).sum(axis=1)[:, None] + (b ** 2).sum(axis=1)[None, :]
          - 2.0 * a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * sigma2))


def median_pairwise_sq_distance(x: np.ndarray) -> float:
    """Median squared distance over distinct sample pairs (the kernel width heuristic)."""
    g = x @ x.T
    sq = np.diag(g).copy()
    g *= -2.0
    g += sq[:, None]
    g += sq[None, :]
    iu = np.triu_indices(x.shape[0], k=1)
    return float(np.median(g[iu]))


_SMO_MAX_PARTNERS = 256


def _smo_binary(kernel: np.ndarray, y: np.ndarray, c: float, tol: float,
                max_passes: int, max_sweeps: int) -> tuple[np.ndarray, float]:
    """Sequential minimal optimisation of the dual soft-margin problem.

    ``y`` holds +-1 labels.  Scans all points; each KKT violator is paired
    with the partner of largest error gap, falling back through further
    partners in descending gap order when the two-variable subproblem is
    degenerate, and the subproblem is solved in closed form.  Stops after
    ``max_passes`` consecutive sweeps without an update.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    b = 0.0
    f = np.zeros(n)  # current decision values, maintained incrementally

    def step(i: int, j: int, e_i: float, e_j: float) -> bool:
        nonlocal b, f
        if i == j:
            return False
        if y[i] != y[j]:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(c, c + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - c)
            hi = min(c, alpha[i] + alpha[j])
        if lo >= hi:
            return False
        eta = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        if eta <= 0.0:
            return False
        a_j = float(np.clip(alpha[j] + y[j] * (e_i - e_j) / eta, lo, hi))
        d_j = a_j - alpha[j]
        if abs(d_j) < 1e-7:
            return False
        d_i = -y[i] * y[j] * d_j
        a_i = alpha[i] + d_i
        b1 = b - e_i - y[i] * d_i * kernel[i, i] - y[j] * d_j * kernel[i, j]
        b2 = b - e_j - y[i] * d_i * kernel[i, j] - y[j] * d_j * kernel[j, j]
        if 0.0 < a_i < c:
            b_new = b1
        elif 0.0 < a_j < c:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        f += y[i] * d_i * kernel[:, i] + y[j] * d_j * kernel[:, j] + (b_new - b)
        alpha[i] = a_i
        alpha[j] = a_j
        b = b_new
        return True

    passes = 0
    sweeps = 0
    while passes < max_passes:
        sweeps += 1
        if sweeps > max_sweeps:
            raise RuntimeError(
                f"SMO failed to satisfy the KKT conditions within {max_sweeps} sweeps")
        changed = 0
        for i in range(n):
            e_i = f[i] - y[i]
            r = e_i * y[i]
            if not ((r < -tol and alpha[i] < c) or (r > tol and alpha[i] > 0)):
                continue
            errors = f - y
            gap = np.abs(e_i - errors)
            gap[i] = -1.0
            if step(i, int(np.argmax(gap)), e_i, errors[int(np.argmax(gap))]):
                changed += 1
                continue
            order = np.argsort(-gap, kind="stable")
            for j in order[1:_SMO_MAX_PARTNERS]:
                if step(i, int(j), e_i, errors[int(j)]):
                    changed += 1
                    break
        passes = passes + 1 if changed == 0 else 0
    return alpha, b


class SupportVectorClassifier:
    """One-vs-rest RBF support vector machine trained by SMO.

    The kernel width follows the median heuristic on the standardized
    training set; one binary machine per class shares the same Gram matrix.
    """

    def __init__(self, c: float = 10.0, tol: float = 1e-3,
                 max_passes: int = 3, max_sweeps: int = 2000):
        self.c = c
        self.tol = tol
        self.max_passes = max_passes
        self.max_sweeps = max_sweeps
        self.scaler: Optional[Standardizer] = None
        self.x: Optional[np.ndarray] = None
        self.classes: Optional[np.ndarray] = None
        self.sigma2: float = 1.0
        self.dual_coef: Optional[np.ndarray] = None   # (n_classes, n) alpha * y
        self.bias: Optional[np.ndarray] = None        # (n_classes,)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "SupportVectorClassifier":
        _check_training_inputs(x, y)
        self.scaler = Standardizer.fit(x)
        xs = self.scaler.apply(x)
        self.classes = np.unique(y.astype(int))
        if self.classes.size < 2:
            raise ValueError("need at least two classes")
        self.sigma2 = median_pairwise_sq_distance(xs)
        if self.sigma2 <= 0.0:
            raise ValueError("degenerate training set: zero median pairwise distance")
        kernel = rbf_kernel(xs, xs, self.sigma2)
        coefs = np.zeros((self.classes.size, xs.shape[0]))
        bias = np.zeros(self.classes.size)
        for idx, label in enumerate(self.classes):
            target = np.where(y == label, 1.0, -1.0)
            alpha, b = _smo_binary(kernel, target, self.c, self.tol,
                                   self.max_passes, self.max_sweeps)
            coefs[idx] = alpha * target
            bias[idx] = b
        self.x = xs
        self.dual_coef = coefs
        self.bias = bias
        return self

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        if self.x is None:
            raise RuntimeError("classifier is not fitted")
        xq = self.scaler.apply(np.atleast_2d(x))
        kernel = rbf_kernel(xq, self.x, self.sigma2)
        return kernel @ self.dual_coef.T + self.bias[None, :]

    def predict(self, x: np.ndarray) -> np.ndarray:
        scores = self.decision_values(x)
        return self.classes[np.argmax(scores, axis=1)]

    @property
    def n_support(self) -> np.ndarray:
        return (np.abs(self.dual_coef) > 1e-12).sum(axis=1)

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "kind": "svm", "c": self.c,
                "tol": self.tol, "sigma2": self.sigma2,
                "scaler": self.scaler.to_dict(),
                "classes": self.classes.tolist(),
                "x": self.x.tolist(),
                "dual_coef": self.dual_coef.tolist(),
                "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SupportVectorClassifier":
        model = cls(c=float(doc["c"]), tol=float(doc["tol"]))
        model.scaler = Standardizer.from_dict(doc["scaler"])
        model.sigma2 = float(doc["sigma2"])
        model.classes = np.array(doc["classes"], dtype=int)
        model.x = np.array(doc["x"], dtype=float)
        model.dual_coef = np.array(doc["dual_coef"], dtype=float)
        model.bias = np.array(doc["bias"], dtype=float)
        return model


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None
    label: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _gini_best_split(x: np.ndarray, y_onehot: np.ndarray, features: np.ndarray):
    """Best (impurity, feature, threshold) over candidate midpoint thresholds."""
    n = x.shape[0]
    best = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        boundaries = np.nonzero(xs[:-1] < xs[1:])[0]
        if boundaries.size == 0:
            continue
        left = np.cumsum(y_onehot[order], axis=0)[boundaries]
        total = y_onehot.sum(axis=0)
        nl = boundaries + 1.0
        nr = n - nl
        gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - (((total[None, :] - left) / nr[:, None]) ** 2).sum(axis=1)
        weighted = (nl * gini_l + nr * gini_r) / n
        k = int(np.argmin(weighted))
        cand = (float(weighted[k]), int(f),
                float(0.5 * (xs[boundaries[k]] + xs[boundaries[k] + 1])))
        if best is None or cand[0] < best[0]:
            best = cand
    return best


class _DecisionTree:
    def __init__(self, m_try: int, max_depth: Optional[int], rng: np.random.Generator):
        self.m_try = m_try
        self.max_depth = max_depth
        self.rng = rng
        self.root: Optional[_TreeNode] = None

    def fit(self, x: np.ndarray, y_idx: np.ndarray, n_classes: int) -> None:
        self._n_classes = n_classes
        self.root = self._grow(x, y_idx, depth=0)

    def _grow(self, x: np.ndarray, y_idx: np.ndarray, depth: int) -> _TreeNode:
        counts = np.bincount(y_idx, minlength=self._n_classes)
        majority = int(np.argmax(counts))
        pure = counts.max() == y_idx.size
        if pure or y_idx.size < 2 or (self.max_depth is not None and depth >= self.max_depth):
            return _TreeNode(label=majority)
        features = self.rng.choice(x.shape[1], size=self.m_try, replace=False)
        onehot = np.zeros((y_idx.size, self._n_classes))
        onehot[np.arange(y_idx.size), y_idx] = 1.0
        parent_gini = 1.0 - ((counts / y_idx.size) ** 2).sum()
        best = _gini_best_split(x, onehot, features)
        if best is None or best[0] >= parent_gini - 1e-12:
            return _TreeNode(label=majority)
        _, feature, threshold = best
        mask = x[:, feature] <= threshold
        node = _TreeNode(feature=feature, threshold=threshold, label=majority)
        node.left = self._grow(x[mask], y_idx[mask], depth + 1)
        node.right = self._grow(x[~mask], y_idx[~mask], depth + 1)
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0], dtype=int)
        self._route(self.root, x, np.arange(x.shape[0]), out)
        return out

    def _route(self, node: _TreeNode, x: np.ndarray, idx: np.ndarray,
               out: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = node.label
            return
        mask = x[idx, node.feature] <= node.threshold
        self._route(node.left, x, idx[mask], out)
        self._route(node.right, x, idx[~mask], out)

    def to_dict(self) -> dict:
        def pack(node: _TreeNode) -> dict:
            if node.is_leaf:
                return {"label": node.label}
            return {"f": node.feature, "t": node.threshold,
                    "l": pack(node.left), "r": pack(node.right)}
        return pack(self.root)

    @classmethod
    def from_dict(cls, doc: dict) -> "_DecisionTree":
        def unpack(d: dict) -> _TreeNode:
            if "label" in d:
                return _TreeNode(label=int(d["label"]))
            return _TreeNode(feature=int(d["f"]), threshold=float(d["t"]),
                             left=unpack(d["l"]), right=unpack(d["r"]))
        tree = cls(m_try=0, max_depth=None, rng=np.random.default_rng(0))
        tree.root = unpack(doc)
        return tree


class RandomForest:
    """Bagged Gini trees on the raw probability features.

    Each tree sees a bootstrap resample and draws a fresh feature subset of
    size ``m_try`` (default: ceil(sqrt(n_features))) at every split.  The
    forest predicts by majority vote, ties to the smallest label.
    """

    def __init__(self, n_trees: int = 100, max_depth: Optional[int] = None,
                 m_try: Optional[int] = None, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.m_try = m_try
        self.seed = seed
        self.trees: list[_DecisionTree] = []
        self.classes: Optional[np.ndarray] = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RandomForest":
        _check_training_inputs(x, y)
        self.classes = np.unique(y.astype(int))
        lookup = {c: i for i, c in enumerate(self.classes)}
        y_idx = np.array([lookup[v] for v in y.astype(int)])
        m_try = self.m_try or int(np.ceil(np.sqrt(x.shape[1])))
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        for t in range(self.n_trees):
            rng = np.random.default_rng(seeds[t])
            sample = rng.integers(0, x.shape[0], size=x.shape[0])
            tree = _DecisionTree(m_try=m_try, max_depth=self.max_depth, rng=rng)
            tree.fit(x[sample], y_idx[sample], self.classes.size)
            self.trees.append(tree)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise RuntimeError("classifier is not fitted")
        x = np.atleast_2d(x)
        votes = np.zeros((x.shape[0], self.classes.size), dtype=int)
        for tree in self.trees:
            pred = tree.predict(x)
            votes[np.arange(x.shape[0]), pred] += 1
        return self.classes[np.argmax(votes, axis=1)]

    def to_dict(self) -> dict:
        return {"schema": MODEL_SCHEMA, "kind": "rf", "n_trees": self.n_trees,
                "max_depth": self.max_depth, "m_try": self.m_try,
                "seed": self.seed, "classes": self.classes.tolist(),
                "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, doc: dict) -> "RandomForest":
        model = cls(n_trees=int(doc["n_trees"]),
                    max_depth=doc["max_depth"],
                    m_try=doc["m_try"], seed=int(doc["seed"]))
        model.classes = np.array(doc["classes"], dtype=int)
        model.trees = [_DecisionTree.from_dict(d) for d in doc["trees"]]
        return model


CLASSIFIER_KINDS = {
    "knn": NearestNeighborClassifier,
    "svm": SupportVectorClassifier,
    "rf": RandomForest,
}


def make_classifier(kind: str, **kwargs):
    if kind not in CLASSIFIER_KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}; "
                         f"expected one of {sorted(CLASSIFIER_KINDS)}")
    return CLASSIFIER_KINDS[kind](**kwargs)


def save_model(model, path) -> None:
    Path(path).write_text(canonical_json(model.to_dict()) + "\n")


def load_model(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    kind = doc.get("kind")
    if kind in CLASSIFIER_KINDS:
        return CLASSIFIER_KINDS[kind].from_dict(doc)
    if kind == "mlp":
        from .neuralnet import RegressionModel
        return RegressionModel.from_dict(doc)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class ClassificationReport:
    """Accuracy and the full confusion table of one evaluation run."""

    labels: list
    confusion: np.ndarray    # confusion[i, j]: true labels[i] predicted as labels[j]
    accuracy: float
    n_samples: int

    def to_dict(self) -> dict:
        return {"labels": [int(v) for v in self.labels],
                "confusion": self.confusion.tolist(),
                "accuracy": self.accuracy,
                "n_samples": self.n_samples}

    def format(self) -> str:
        head = "true\\pred " + " ".join(f"{c:>6d}" for c in self.labels)
        rows = [head]
        for i, c in enumerate(self.labels):
            rows.append(f"{c:>9d} " + " ".join(f"{v:>6d}" for v in self.confusion[i]))
        rows.append(f"accuracy {self.accuracy:.4f} on {self.n_samples} samples")
        return "\n".join(rows)


def evaluate_classifier(model, x: np.ndarray, y: np.ndarray) -> ClassificationReport:
    pred = model.predict(x)
    labels = sorted(set(int(v) for v in y) | set(int(v) for v in pred))
    pos = {c: i for i, c in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(y, pred):
        confusion[pos[int(t)], pos[int(p)]] += 1
    accuracy = float((pred == y).mean())
    return ClassificationReport(labels=labels, confusion=confusion,
                                accuracy=accuracy, n_samples=int(y.shape[0]))
