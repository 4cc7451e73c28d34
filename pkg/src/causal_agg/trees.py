"""Least-squares regression trees (CART-style greedy splitting)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import TooFewSamples, ValidationError

__all__ = ["RegressionTree", "TreeFitter", "fit_tree"]

GAIN_TOL = 1e-12


@dataclass(frozen=True)
class RegressionTree:
    """Flat binary tree.  Node ``i`` is a leaf when ``left[i] < 0``.

    ``feature[i]`` indexes ``features``, the global covariate indices the tree
    reads; rows go left when ``x[feature] <= threshold``.
    """

    features: tuple[int, ...]
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int
    min_leaf: int

    @property
    def n_nodes(self) -> int:
        return self.value.shape[0]

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict_local(self, F: np.ndarray) -> np.ndarray:
        """Predict from a matrix whose columns are ``features`` in order."""
        F = np.asarray(F, dtype=float)
        node = np.zeros(F.shape[0], dtype=np.int64)
        for _ in range(self.max_depth + 1):
            inner = self.left[node] >= 0
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            nd = node[idx]
            go_left = F[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predict from a full covariate matrix (only ``features`` are read)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.predict_local(X[:, list(self.features)])

    def to_dict(self) -> dict:
        def node(i):
            if self.left[i] < 0:
                return {"value": float(self.value[i])}
            return {
                "feature": int(self.features[self.feature[i]]),
                "threshold": float(self.threshold[i]),
                "left": node(int(self.left[i])),
                "right": node(int(self.right[i])),
            }

        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf, "features": list(self.features), "root": node(0)}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        features = tuple(int(f) for f in d["features"])
        pos = {f: i for i, f in enumerate(features)}
        feat, thr, left, right, val = [], [], [], [], []

        def add(nd) -> int:
            i = len(val)
            feat.append(0)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            val.append(float(nd.get("value", 0.0)))
            if "feature" in nd:
                feat[i] = pos[int(nd["feature"])]
                thr[i] = float(nd["threshold"])
                left[i] = add(nd["left"])
                right[i] = add(nd["right"])
            return i

        add(d["root"])
        return cls(
            features,
            np.array(feat, dtype=np.int64),
            np.array(thr),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(val),
            int(d["max_depth"]),
            int(d["min_leaf"]),
        )


class TreeFitter:
    """Fits trees on a fixed feature matrix; column sort orders are computed once."""

    def __init__(self, F: np.ndarray, features: Sequence[int] | None = None):
        F = np.asarray(F, dtype=float)
        if F.ndim != 2:
            raise ValidationError("feature matrix must be 2-D")
        self.F = F
        self.features = tuple(features) if features is not None else tuple(range(F.shape[1]))
        if len(self.features) != F.shape[1]:
            raise ValidationError("one global index per feature column is required")
        self.order = [np.argsort(F[:, k], kind="stable") for k in range(F.shape[1])]

    def _best_split(self, mask: np.ndarray, y: np.ndarray, min_leaf: int):
        best = None
        for k, order in enumerate(self.order):
            rows = order[mask[order]]
            m = rows.size
            xs = self.F[rows, k]
            ys = y[rows]
            csum = np.cumsum(ys)
            total = csum[-1]
            # split after position i (left = rows[:i+1])
            i = np.arange(min_leaf - 1, m - min_leaf)
            if i.size == 0:
                continue
            valid = xs[i] < xs[i + 1]
            if not valid.any():
                continue
            i = i[valid]
            nl = i + 1.0
            sl = csum[i]
            score = sl * sl / nl + (total - sl) ** 2 / (m - nl)
            j = int(np.argmax(score))
            gain = score[j] - total * total / m
            if gain > GAIN_TOL * max(1.0, float(ys @ ys)) and (best is None or gain > best[0] + 1e-12 * abs(best[0])):
                pos = i[j]
                best = (gain, k, 0.5 * (xs[pos] + xs[pos + 1]))
        return best

    def fit(self, y: np.ndarray, max_depth: int = 3, min_leaf: int = 10) -> RegressionTree:
        y = np.asarray(y, dtype=float)
        n = self.F.shape[0]
        if y.shape != (n,):
            raise ValidationError("targets must have one entry per row")
        if max_depth < 0 or min_leaf < 1:
            raise ValidationError("max_depth must be >= 0 and min_leaf >= 1")
        if n < 2 * min_leaf:
            raise TooFewSamples(f"need at least {2 * min_leaf} rows, got {n}")
        feat, thr, left, right, val = [], [], [], [], []
        stack = [(np.ones(n, dtype=bool), 0, None, False)]
        while stack:
            mask, depth, parent, is_right = stack.pop()
            i = len(val)
            ys = y[mask]
            feat.append(0)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            val.append(float(ys.mean()))
            if parent is not None:
                (right if is_right else left)[parent] = i
            if depth >= max_depth or ys.size < 2 * min_leaf or np.ptp(ys) == 0.0:
                continue
            split = self._best_split(mask, y, min_leaf)
            if split is None:
                continue
            _, k, t = split
            feat[i], thr[i] = k, t
            go_left = self.F[:, k] <= t
            stack.append((mask & ~go_left, depth + 1, i, True))
            stack.append((mask & go_left, depth + 1, i, False))
        return RegressionTree(
            self.features,
            np.array(feat, dtype=np.int64),
            np.array(thr),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(val),
            max_depth,
            min_leaf,
        )


def fit_tree(features, targets, max_depth: int = 3, min_leaf: int = 10, feature_ids: Sequence[int] | None = None) -> RegressionTree:
    """Greedy least-squares tree on ``features`` (rows x columns of the environment's randomized set)."""
    return TreeFitter(features, feature_ids).fit(targets, max_depth, min_leaf)
