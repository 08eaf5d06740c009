"""Built-in regression families.

Four families cover the mean-regression roles (constant, ridge-stabilized
linear least squares, k-nearest-neighbors, gradient-boosted trees) and
three of them double as quantile regressors.  Everything here is pure
numpy, deterministic given its inputs, and cheap enough to retrain
thousands of times per attribution run.

Empirical quantiles use the lower convention throughout: the ``k``-th
smallest value with ``k = ceil(n * tau)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import DimensionError, EmptyDataError, ParameterError
from .validation import check_matrix, check_same_rows, check_vector

__all__ = [
    "RegressorSpec",
    "FittedModel",
    "train",
    "predict",
    "train_dispersion",
    "train_quantile",
    "empirical_quantile",
    "pinball_loss",
    "MEAN_FAMILIES",
    "QUANTILE_FAMILIES",
]

MEAN_FAMILIES = ("constant", "linear_least_squares", "knn", "tree_ensemble")
QUANTILE_FAMILIES = ("constant", "linear_least_squares", "knn")

_HYPER_DEFAULTS: dict[str, dict] = {
    "constant": {},
    "linear_least_squares": {"ridge": 1e-8},
    "knn": {"k": 5},
    "tree_ensemble": {
        "trees": 30,
        "max_leaves": 10,
        "learning_rate": 0.1,
        "min_node_fraction": 0.01,
    },
}

_DISPERSION_TRANSFORMS = ("absolute", "squared")

# Relative floor applied to dispersion predictions: 1e-8 times the spread
# of the original training target keeps locally-scaled scores finite.
DISPERSION_FLOOR_SCALE = 1e-8


def _validate_hyperparameters(family: str, hp: Mapping) -> dict:
    allowed = _HYPER_DEFAULTS[family]
    merged = dict(allowed)
    for key, value in dict(hp).items():
        if key not in allowed:
            raise ParameterError(f"family {family!r} does not accept hyperparameter {key!r}")
        merged[key] = value
    if family == "linear_least_squares":
        ridge = float(merged["ridge"])
        if not ridge > 0.0 or not np.isfinite(ridge):
            raise ParameterError(f"ridge must be positive, got {merged['ridge']!r}")
        merged["ridge"] = ridge
    elif family == "knn":
        k = merged["k"]
        if int(k) != k or int(k) < 1:
            raise ParameterError(f"k must be a positive integer, got {k!r}")
        merged["k"] = int(k)
    elif family == "tree_ensemble":
        for key in ("trees", "max_leaves"):
            v = merged[key]
            if int(v) != v or int(v) < (2 if key == "max_leaves" else 1):
                raise ParameterError(f"{key} must be an integer >= {2 if key == 'max_leaves' else 1}")
            merged[key] = int(v)
        lr = float(merged["learning_rate"])
        if not 0.0 < lr or not np.isfinite(lr):
            raise ParameterError(f"learning_rate must be positive, got {merged['learning_rate']!r}")
        merged["learning_rate"] = lr
        frac = float(merged["min_node_fraction"])
        if not 0.0 <= frac < 1.0:
            raise ParameterError(f"min_node_fraction must lie in [0, 1), got {frac!r}")
        merged["min_node_fraction"] = frac
    return merged


@dataclass(frozen=True)
class RegressorSpec:
    """A regression family plus validated hyperparameters."""

    family: str
    hyperparameters: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in MEAN_FAMILIES:
            raise ParameterError(
                f"unknown family {self.family!r}; choose one of {MEAN_FAMILIES}"
            )
        object.__setattr__(
            self, "hyperparameters", _validate_hyperparameters(self.family, self.hyperparameters)
        )

    def key(self) -> str:
        items = ",".join(f"{k}={self.hyperparameters[k]!r}" for k in sorted(self.hyperparameters))
        return f"{self.family}({items})"

    @classmethod
    def constant(cls) -> "RegressorSpec":
        return cls("constant")

    @classmethod
    def linear(cls, ridge: float = 1e-8) -> "RegressorSpec":
        return cls("linear_least_squares", {"ridge": ridge})

    @classmethod
    def knn(cls, k: int = 5) -> "RegressorSpec":
        return cls("knn", {"k": k})

    @classmethod
    def tree(cls, trees: int = 30, max_leaves: int = 10, learning_rate: float = 0.1,
             min_node_fraction: float = 0.01) -> "RegressorSpec":
        return cls(
            "tree_ensemble",
            {
                "trees": trees,
                "max_leaves": max_leaves,
                "learning_rate": learning_rate,
                "min_node_fraction": min_node_fraction,
            },
        )


def empirical_quantile(values: np.ndarray, tau: float) -> float:
    """Lower empirical quantile: the ``ceil(n * tau)``-th smallest value."""
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"quantile level must lie in (0, 1), got {tau!r}")
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.shape[0]
    if n < 1:
        raise EmptyDataError("cannot take a quantile of zero values")
    k = max(1, math.ceil(n * tau - 1e-9))
    return float(v[min(k, n) - 1])


def pinball_loss(residuals: np.ndarray, tau: float) -> float:
    r = np.asarray(residuals, dtype=np.float64)
    return float(np.mean(np.where(r >= 0.0, tau * r, (tau - 1.0) * r)))


# ---------------------------------------------------------------------------
# Mean regressors


class ConstantRegressor:
    """Predicts the training-target mean everywhere."""

    def fit(self, X, y):
        self.value_ = float(np.mean(y))
        return self

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value_, dtype=np.float64)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _ridge_solve(Xa: np.ndarray, b: np.ndarray, weights: np.ndarray | None, ridge: float) -> np.ndarray:
    if weights is None:
        A = Xa.T @ Xa
        rhs = Xa.T @ b
    else:
        A = Xa.T @ (weights[:, None] * Xa)
        rhs = Xa.T @ (weights * b)
    p = A.shape[0]
    scale = max(float(np.trace(A)) / p, 1.0)
    A = A + ridge * scale * np.eye(p)
    try:
        return np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, rhs, rcond=None)[0]


class RidgeLinear:
    """Least squares with an intercept and a tiny relative ridge.

    The ridge term keeps exactly-collinear designs solvable; with the
    default epsilon the fit agrees with the minimum-norm least-squares
    solution to well below 1e-6.
    """

    def __init__(self, ridge: float = 1e-8):
        self.ridge = float(ridge)

    def fit(self, X, y):
        Xa = _augment(X)
        self.coef_ = _ridge_solve(Xa, y, None, self.ridge)
        return self

    def predict(self, X):
        return _augment(X) @ self.coef_


class KNNRegressor:
    """Mean of the k nearest training targets (Euclidean distance).

    Predictions reduce over the neighbor set, so only membership matters;
    selection is deterministic (exact distance ties at the k-th slot
    resolve by the partition algorithm, identically on every run).
    """

    def __init__(self, k: int = 5):
        self.k = int(k)

    def fit(self, X, y):
        self.X_ = np.array(X, dtype=np.float64)
        self.y_ = np.array(y, dtype=np.float64)
        return self

    def _neighbor_targets(self, X) -> np.ndarray:
        Q = np.asarray(X, dtype=np.float64)
        if Q.shape[0] == 0:
            return np.empty((0, 0))
        d2 = (
            np.sum(Q * Q, axis=1)[:, None]
            - 2.0 * (Q @ self.X_.T)
            + np.sum(self.X_ * self.X_, axis=1)[None, :]
        )
        kk = min(self.k, self.X_.shape[0])
        if kk < self.X_.shape[0]:
            picked = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
        else:
            picked = np.broadcast_to(np.arange(kk), d2.shape)
        return self.y_[picked]

    def predict(self, X):
        neigh = self._neighbor_targets(X)
        return neigh.mean(axis=1)


# ---------------------------------------------------------------------------
# Gradient-boosted trees (histogram splits, best-first leaf growth)

_MAX_BINS = 64


@dataclass
class _Tree:
    feature: np.ndarray  # -1 marks a leaf
    cut: np.ndarray      # go left when bin <= cut
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    def predict_binned(self, B: np.ndarray) -> np.ndarray:
        node = np.zeros(B.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not np.any(active):
                break
            idx = np.nonzero(active)[0]
            sub = node[idx]
            go_left = B[idx, feat[idx]] <= self.cut[sub]
            node[idx] = np.where(go_left, self.left[sub], self.right[sub])
        return self.value[node]

    def leaf_counts(self) -> np.ndarray:
        return self.count[self.feature < 0]


class GradientBoostedTrees:
    """Boosted regression trees on quantile-binned features.

    Trees grow best-first up to ``max_leaves`` leaves; a split is legal
    only when both children keep at least ``ceil(min_node_fraction * n)``
    training rows, and that bound is a structural property of the fitted
    trees.  Growth is fully deterministic: gain ties resolve toward the
    lowest feature index, then the lowest threshold.
    """

    def __init__(self, trees: int = 30, max_leaves: int = 10, learning_rate: float = 0.1,
                 min_node_fraction: float = 0.01):
        self.trees = int(trees)
        self.max_leaves = int(max_leaves)
        self.learning_rate = float(learning_rate)
        self.min_node_fraction = float(min_node_fraction)

    # -- binning ------------------------------------------------------------
    def _fit_bins(self, X: np.ndarray) -> None:
        self.edges_ = []
        grid = np.linspace(0.0, 1.0, _MAX_BINS + 1)[1:-1]
        for j in range(X.shape[1]):
            self.edges_.append(np.unique(np.quantile(X[:, j], grid)))

    def _bin(self, X: np.ndarray) -> np.ndarray:
        n, d = X.shape
        B = np.empty((n, d), dtype=np.int16)
        for j in range(d):
            B[:, j] = np.searchsorted(self.edges_[j], X[:, j], side="right")
        return B

    # -- growth -------------------------------------------------------------
    def _histogram(self, B: np.ndarray, rows: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = B.shape[1]
        flat = (B[rows] + self._offsets).ravel()
        sums = np.bincount(flat, weights=np.repeat(g[rows], d), minlength=d * _MAX_BINS)
        counts = np.bincount(flat, minlength=d * _MAX_BINS)
        return sums.reshape(d, _MAX_BINS), counts.reshape(d, _MAX_BINS)

    @staticmethod
    def _best_split(sums: np.ndarray, counts: np.ndarray, min_count: int):
        csum = np.cumsum(sums, axis=1)
        ccnt = np.cumsum(counts, axis=1)
        total_sum = csum[:, -1:]
        total_cnt = ccnt[:, -1:]
        rsum = total_sum - csum
        rcnt = total_cnt - ccnt
        gain = csum * csum / np.maximum(ccnt, 1) + rsum * rsum / np.maximum(rcnt, 1)
        gain[(ccnt < min_count) | (rcnt < min_count)] = -np.inf
        flat = int(np.argmax(gain))
        f, c = flat // _MAX_BINS, flat % _MAX_BINS
        best = gain[f, c] - total_sum[f, 0] * total_sum[f, 0] / max(total_cnt[f, 0], 1)
        if not np.isfinite(best) or best <= 1e-12:
            return None
        return best, f, c

    def _grow(self, B: np.ndarray, g: np.ndarray, min_count: int) -> tuple[_Tree, np.ndarray]:
        n = B.shape[0]
        feature, cut, left, right, value, count = [], [], [], [], [], []

        def new_node(rows: np.ndarray) -> int:
            feature.append(-1)
            cut.append(-1)
            left.append(-1)
            right.append(-1)
            value.append(float(g[rows].mean()) if rows.size else 0.0)
            count.append(int(rows.size))
            return len(feature) - 1

        root_rows = np.arange(n)
        root = new_node(root_rows)
        hists = {root: self._histogram(B, root_rows, g)}
        rows_of = {root: root_rows}
        candidates: dict[int, tuple] = {}
        split = self._best_split(*hists[root], min_count)
        if split is not None:
            candidates[root] = split
        n_leaves = 1
        while candidates and n_leaves < self.max_leaves:
            node = min(candidates, key=lambda nid: (-candidates[nid][0], nid))
            gain, f, c = candidates.pop(node)
            rows = rows_of.pop(node)
            sums, counts = hists.pop(node)
            mask = B[rows, f] <= c
            rows_l, rows_r = rows[mask], rows[~mask]
            nid_l, nid_r = new_node(rows_l), new_node(rows_r)
            feature[node], cut[node] = f, c
            left[node], right[node] = nid_l, nid_r
            rows_of[nid_l], rows_of[nid_r] = rows_l, rows_r
            n_leaves += 1
            if n_leaves >= self.max_leaves:
                break
            # Histogram of the smaller child directly; sibling by subtraction.
            if rows_l.size <= rows_r.size:
                hist_l = self._histogram(B, rows_l, g)
                hist_r = (sums - hist_l[0], counts - hist_l[1])
            else:
                hist_r = self._histogram(B, rows_r, g)
                hist_l = (sums - hist_r[0], counts - hist_r[1])
            for nid, rws, hist in ((nid_l, rows_l, hist_l), (nid_r, rows_r, hist_r)):
                hists[nid] = hist
                if rws.size >= 2 * min_count:
                    sp = self._best_split(*hist, min_count)
                    if sp is not None:
                        candidates[nid] = sp
        update = np.empty(n, dtype=np.float64)
        for nid, rws in rows_of.items():
            update[rws] = value[nid]
        tree = _Tree(
            feature=np.asarray(feature, dtype=np.int32),
            cut=np.asarray(cut, dtype=np.int32),
            left=np.asarray(left, dtype=np.int32),
            right=np.asarray(right, dtype=np.int32),
            value=np.asarray(value, dtype=np.float64),
            count=np.asarray(count, dtype=np.int64),
        )
        return tree, update

    # -- boosting -----------------------------------------------------------
    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = X.shape
        self._offsets = np.arange(d, dtype=np.int64) * _MAX_BINS
        self._fit_bins(X)
        B = self._bin(X)
        self.base_ = float(y.mean())
        self.min_count_ = max(1, math.ceil(self.min_node_fraction * n))
        pred = np.full(n, self.base_)
        self.trees_ = []
        for _ in range(self.trees):
            tree, update = self._grow(B, y - pred, self.min_count_)
            self.trees_.append(tree)
            pred += self.learning_rate * update
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        B = self._bin(X)
        out = np.full(X.shape[0], self.base_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict_binned(B)
        return out

    def leaf_counts(self) -> list[np.ndarray]:
        return [tree.leaf_counts() for tree in self.trees_]


# ---------------------------------------------------------------------------
# Quantile regressors


class ConstantQuantile:
    def __init__(self, level: float):
        self.level = float(level)

    def fit(self, X, y):
        self.value_ = empirical_quantile(y, self.level)
        return self

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value_, dtype=np.float64)


class LinearQuantile:
    """Linear quantile regression via iteratively reweighted least squares.

    Minimizes the pinball loss with a smoothed absolute-residual weight;
    iteration starts from the constant empirical quantile and keeps the
    best iterate, so the training loss never exceeds the constant
    baseline's.
    """

    max_iter = 200
    tol = 1e-8

    def __init__(self, level: float, ridge: float = 1e-8):
        self.level = float(level)
        self.ridge = float(ridge)

    def fit(self, X, y):
        tau = self.level
        Xa = _augment(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        beta = np.zeros(Xa.shape[1])
        beta[-1] = empirical_quantile(y, tau)
        smooth = 1e-6 * max(float(np.std(y)), 1e-12)
        best_loss = pinball_loss(y - Xa @ beta, tau)
        best_beta = beta.copy()
        for _ in range(self.max_iter):
            r = y - Xa @ beta
            w = np.where(r >= 0.0, tau, 1.0 - tau) / np.maximum(np.abs(r), smooth)
            new_beta = _ridge_solve(Xa, y, w, self.ridge)
            loss = pinball_loss(y - Xa @ new_beta, tau)
            if loss < best_loss:
                best_loss = loss
                best_beta = new_beta.copy()
            if np.max(np.abs(new_beta - beta)) <= self.tol * (1.0 + np.max(np.abs(beta))):
                beta = new_beta
                break
            beta = new_beta
        self.coef_ = best_beta
        return self

    def predict(self, X):
        return _augment(np.asarray(X, dtype=np.float64)) @ self.coef_


class KNNQuantile(KNNRegressor):
    def __init__(self, k: int, level: float):
        super().__init__(k=k)
        self.level = float(level)

    def predict(self, X):
        neigh = self._neighbor_targets(X)
        kk = neigh.shape[1]
        rank = min(max(1, math.ceil(kk * self.level - 1e-9)), kk)
        return np.partition(neigh, rank - 1, axis=1)[:, rank - 1]


class _FlooredModel:
    """Clamp another model's predictions from below (dispersion floor)."""

    def __init__(self, inner, floor: float):
        self.inner = inner
        self.floor = float(floor)

    def predict(self, X):
        return np.maximum(self.inner.predict(X), self.floor)


# ---------------------------------------------------------------------------
# Training entry points


@dataclass(frozen=True)
class FittedModel:
    """A fitted regressor plus enough metadata to identify the training run."""

    spec: RegressorSpec
    n_features: int
    model: object
    train_fingerprint: str
    coalition: int | None = None
    role: str = "mean"

    def predict_batch(self, X) -> np.ndarray:
        arr = check_matrix(X, "X", min_rows=0)
        if arr.shape[1] != self.n_features:
            raise DimensionError(
                f"model was trained on {self.n_features} feature(s), got {arr.shape[1]}"
            )
        return np.asarray(self.model.predict(arr), dtype=np.float64)


def _fingerprint(parts: list) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part).tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return h.hexdigest()[:16]


def _data_digest(X: np.ndarray, y: np.ndarray) -> str:
    return _fingerprint([X.shape, X, y])


def _build_mean(spec: RegressorSpec, n_features: int):
    hp = spec.hyperparameters
    if n_features == 0 or spec.family == "constant":
        return ConstantRegressor()
    if spec.family == "linear_least_squares":
        return RidgeLinear(ridge=hp["ridge"])
    if spec.family == "knn":
        return KNNRegressor(k=hp["k"])
    return GradientBoostedTrees(
        trees=hp["trees"],
        max_leaves=hp["max_leaves"],
        learning_rate=hp["learning_rate"],
        min_node_fraction=hp["min_node_fraction"],
    )


def train(
    spec: RegressorSpec,
    features,
    target,
    seed: int = 0,
    coalition: int | None = None,
    data_digest: str | None = None,
    role: str = "mean",
) -> FittedModel:
    """Fit one regressor on a (possibly zero-width) feature matrix.

    A zero-width matrix — the empty coalition — always yields a constant
    model regardless of family.  All current families are deterministic;
    the seed participates only in the training fingerprint.
    """
    X = check_matrix(features, "features", min_rows=0)
    y = check_vector(target, "target", min_len=0)
    check_same_rows(X, y, "features", "target")
    if X.shape[0] < 1:
        raise EmptyDataError("training needs at least one row")
    model = _build_mean(spec, X.shape[1]).fit(X, y)
    digest = data_digest if data_digest is not None else _data_digest(X, y)
    fp = _fingerprint([digest, coalition, spec.key(), int(seed), role, X.shape[1]])
    return FittedModel(
        spec=spec, n_features=X.shape[1], model=model,
        train_fingerprint=fp, coalition=coalition, role=role,
    )


def predict(model: FittedModel, x) -> float:
    """Point prediction for one feature vector."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.shape[0] != model.n_features:
        raise DimensionError(
            f"model was trained on {model.n_features} feature(s), got {arr.shape[0]}"
        )
    return float(model.predict_batch(arr.reshape(1, -1))[0])


def dispersion_floor(target) -> float:
    """Positive floor for dispersion predictions: 1e-8 x target spread."""
    std = float(np.std(np.asarray(target, dtype=np.float64)))
    return DISPERSION_FLOOR_SCALE * std if std > 0.0 else DISPERSION_FLOOR_SCALE


def train_dispersion(
    mean_model: FittedModel,
    features,
    target,
    spec: RegressorSpec,
    seed: int = 0,
    transform: str = "absolute",
    coalition: int | None = None,
    data_digest: str | None = None,
) -> FittedModel:
    """Fit a strictly positive model of residual spread around a mean model.

    ``transform`` selects the regression target: absolute residuals or
    squared residuals.  Predictions are clamped from below at 1e-8 times
    the standard deviation of the original target.
    """
    if transform not in _DISPERSION_TRANSFORMS:
        raise ParameterError(
            f"dispersion transform must be one of {_DISPERSION_TRANSFORMS}, got {transform!r}"
        )
    X = check_matrix(features, "features", min_rows=1)
    y = check_vector(target, "target")
    check_same_rows(X, y, "features", "target")
    resid = y - mean_model.predict_batch(X)
    resp = np.abs(resid) if transform == "absolute" else resid * resid
    fitted = train(
        spec, X, resp, seed=seed, coalition=coalition,
        data_digest=data_digest, role=f"dispersion:{transform}",
    )
    floored = _FlooredModel(fitted.model, dispersion_floor(y))
    return FittedModel(
        spec=spec, n_features=X.shape[1], model=floored,
        train_fingerprint=fitted.train_fingerprint, coalition=coalition,
        role=f"dispersion:{transform}",
    )


def train_quantile(
    spec: RegressorSpec,
    features,
    target,
    level: float,
    seed: int = 0,
    coalition: int | None = None,
    data_digest: str | None = None,
) -> FittedModel:
    """Fit a conditional-quantile regressor at the given level.

    Only the constant, linear, and knn families support quantile targets;
    the linear family minimizes the pinball loss by smoothed IRLS, and its
    training loss never exceeds the constant empirical-quantile baseline.
    """
    if not 0.0 < float(level) < 1.0:
        raise ParameterError(f"quantile level must lie in (0, 1), got {level!r}")
    if spec.family not in QUANTILE_FAMILIES:
        raise ParameterError(
            f"family {spec.family!r} has no quantile form; choose one of {QUANTILE_FAMILIES}"
        )
    X = check_matrix(features, "features", min_rows=0)
    y = check_vector(target, "target", min_len=0)
    check_same_rows(X, y, "features", "target")
    if X.shape[0] < 1:
        raise EmptyDataError("training needs at least one row")
    level = float(level)
    if X.shape[1] == 0 or spec.family == "constant":
        model = ConstantQuantile(level).fit(X, y)
    elif spec.family == "linear_least_squares":
        model = LinearQuantile(level, ridge=spec.hyperparameters["ridge"]).fit(X, y)
    else:
        model = KNNQuantile(k=spec.hyperparameters["k"], level=level).fit(X, y)
    digest = data_digest if data_digest is not None else _data_digest(X, y)
    role = f"quantile:{level}"
    fp = _fingerprint([digest, coalition, spec.key(), int(seed), role, X.shape[1]])
    return FittedModel(
        spec=spec, n_features=X.shape[1], model=model,
        train_fingerprint=fp, coalition=coalition, role=role,
    )
