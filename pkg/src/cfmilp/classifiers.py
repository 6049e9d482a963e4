"""Self-contained trainers for the three classifier families.

All three predict +1 exactly when their decision value is >= 0.  Logistic
regression operates on the raw encoded features; the linear SVM is trained
and evaluated on standardized features and therefore carries its scaler; the
forest aggregates per-tree leaf probabilities by plain averaging against a
0.5 threshold.  Trainers are deterministic given their seed, so saving the
same retrained model twice yields identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import StandardScaler, apply_scaler


@dataclass
class LinearModel:
    kind: str                      # "logistic" | "svm"
    weights: np.ndarray
    intercept: float
    scaler: StandardScaler | None = None
    converged: bool = True


@dataclass
class Tree:
    """Flat array representation; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray               # fraction of positive labels at the node

    def leaf_of(self, x: np.ndarray) -> int:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return int(i)


@dataclass
class Forest:
    kind: str
    trees: list[Tree]
    n_features: int


def _logistic_objective(w, b, xs, y, c, inv_s2):
    z = y * (xs @ w + b)
    # log(1 + exp(-z)) computed stably
    loss = np.logaddexp(0.0, -z).sum()
    return 0.5 * float(w * inv_s2 @ w) + c * float(loss)


def train_logistic(x: np.ndarray, y: np.ndarray, c: float = 1.0,
                   max_iter: int = 5000, tol: float = 1e-7) -> LinearModel:
    """L2-regularized logistic regression by full-batch gradient descent.

    Internally the columns are standardized so the descent is well
    conditioned; the returned weights are mapped back to the raw feature
    space, and only those raw-space weights are penalized.  Deterministic:
    zero start, backtracking line search, no randomness anywhere.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std
    inv_s2 = 1.0 / std ** 2      # raw-space ridge expressed in standardized coords

    w = np.zeros(d)
    b = 0.0
    lr = 1.0 / max(1.0, c * n)
    f = _logistic_objective(w, b, xs, y, c, inv_s2)
    converged = False
    for _ in range(max_iter):
        z = y * (xs @ w + b)
        sig = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))   # sigma(-z)
        gw = w * inv_s2 - c * (xs.T @ (y * sig))
        gb = -c * float(y @ sig)
        gnorm = max(np.abs(gw).max(), abs(gb))
        if gnorm <= tol * max(1.0, c * n):
            converged = True
            break
        g2 = float(gw @ gw) + gb * gb
        while True:
            w2 = w - lr * gw
            b2 = b - lr * gb
            f2 = _logistic_objective(w2, b2, xs, y, c, inv_s2)
            if f2 <= f - 1e-4 * lr * g2 or lr < 1e-16:
                break
            lr *= 0.5
        w, b, f = w2, b2, f2
        lr *= 1.25
    w_raw = w / std
    b_raw = float(b - w_raw @ mean)
    return LinearModel(kind="logistic", weights=w_raw, intercept=b_raw, converged=converged)


def train_linear_svm(x: np.ndarray, y: np.ndarray, scaler: StandardScaler,
                     c: float = 1.0, max_iter: int = 3000, seed: int = 0) -> LinearModel:
    """Linear SVM by deterministic full-batch subgradient descent.

    Minimizes 0.5*||w||^2 + c * sum(hinge) on the scaled features using the
    schedule step_t = 1 / (lam * (t+1)) with lam = 1 / (c*n), averaging the
    second half of the iterates.  The scaler is stored on the model and is
    applied inside predict, so callers always pass raw encoded instances.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xs = apply_scaler(scaler, x)
    n, d = xs.shape
    lam = 1.0 / (c * n)
    rng = np.random.default_rng(seed)   # fixed-schedule method; seed kept for API stability
    del rng
    w = np.zeros(d)
    b = 0.0
    w_avg = np.zeros(d)
    b_avg = 0.0
    n_avg = 0
    for t in range(max_iter):
        margin = y * (xs @ w + b)
        active = margin < 1.0
        gw = lam * w - (y[active] @ xs[active]) / n
        gb = -float(y[active].sum()) / n
        step = 1.0 / (lam * (t + 1))
        w = w - step * gw
        b = b - step * gb
        if t >= max_iter // 2:
            w_avg += w
            b_avg += b
            n_avg += 1
    w = w_avg / n_avg
    b = b_avg / n_avg
    return LinearModel(kind="svm", weights=w, intercept=float(b), scaler=scaler)


def _gini_split(values: np.ndarray, y01: np.ndarray):
    """Best threshold for one feature: (weighted_gini, threshold) or None."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    t = y01[order]
    n = v.size
    pos = np.cumsum(t)
    total_pos = pos[-1]
    # split after position i (1..n-1), only between distinct values
    cut = np.nonzero(v[1:] > v[:-1])[0]
    if cut.size == 0:
        return None
    nl = cut + 1.0
    nr = n - nl
    pl = pos[cut] / nl
    pr = (total_pos - pos[cut]) / nr
    gini = nl * (2 * pl * (1 - pl)) + nr * (2 * pr * (1 - pr))
    j = int(np.argmin(gini))
    thr = 0.5 * (v[cut[j]] + v[cut[j] + 1])
    return float(gini[j] / n), float(thr)


def _grow_tree(x, y01, idx, depth, max_depth, n_sub, rng, nodes):
    node = len(nodes["feature"])
    for key in nodes:
        nodes[key].append(0)
    p = float(y01[idx].mean())
    nodes["prob"][node] = p
    pure = p == 0.0 or p == 1.0
    if depth >= max_depth or pure or idx.size < 2:
        nodes["feature"][node] = -1
        nodes["threshold"][node] = 0.0
        nodes["left"][node] = nodes["right"][node] = -1
        return node
    d = x.shape[1]
    feats = np.sort(rng.choice(d, size=n_sub, replace=False))
    best = None
    for f in feats:
        res = _gini_split(x[idx, f], y01[idx])
        if res is None:
            continue
        g, thr = res
        if best is None or g < best[0] - 1e-12:
            best = (g, int(f), thr)
    if best is None:
        nodes["feature"][node] = -1
        nodes["threshold"][node] = 0.0
        nodes["left"][node] = nodes["right"][node] = -1
        return node
    _, f, thr = best
    mask = x[idx, f] <= thr
    nodes["feature"][node] = f
    nodes["threshold"][node] = thr
    nodes["left"][node] = _grow_tree(x, y01, idx[mask], depth + 1, max_depth, n_sub, rng, nodes)
    nodes["right"][node] = _grow_tree(x, y01, idx[~mask], depth + 1, max_depth, n_sub, rng, nodes)
    return node


def train_forest(x: np.ndarray, y: np.ndarray, n_trees: int = 100,
                 max_depth: int = 6, seed: int = 0) -> Forest:
    """Bootstrap forest of Gini CART trees with sqrt-width feature subsampling."""
    x = np.asarray(x, dtype=float)
    y01 = (np.asarray(y) == 1).astype(float)
    n, d = x.shape
    n_sub = int(np.ceil(np.sqrt(d)))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        nodes = {"feature": [], "threshold": [], "left": [], "right": [], "prob": []}
        _grow_tree(x[boot], y01[boot], np.arange(n), 0, max_depth, n_sub, rng, nodes)
        trees.append(Tree(
            feature=np.array(nodes["feature"], dtype=int),
            threshold=np.array(nodes["threshold"], dtype=float),
            left=np.array(nodes["left"], dtype=int),
            right=np.array(nodes["right"], dtype=int),
            prob=np.array(nodes["prob"], dtype=float),
        ))
    return Forest(kind="forest", trees=trees, n_features=d)


def decision_value(model, x: np.ndarray) -> float:
    """Signed score; predict() is its sign with >= 0 mapping to +1."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, Forest):
        probs = [t.prob[t.leaf_of(x)] for t in model.trees]
        return float(np.mean(probs) - 0.5)
    if model.kind == "svm":
        x = apply_scaler(model.scaler, x)
    return float(model.weights @ x + model.intercept)


def predict(model, x: np.ndarray) -> int:
    return 1 if decision_value(model, x) >= 0.0 else -1


def predict_many(model, x: np.ndarray) -> np.ndarray:
    return np.array([predict(model, row) for row in np.asarray(x, dtype=float)], dtype=int)


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    """Accuracy / precision / recall / F1 for the +1 class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == -1) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == -1)))
    acc = float(np.mean(y_true == y_pred))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"accuracy": acc, "precision": prec, "recall": rec, "f1": f1}


def save_model(model, path: str | Path) -> None:
    if isinstance(model, Forest):
        doc = {
            "kind": "forest",
            "n_features": model.n_features,
            "trees": [
                {
                    "feature": [int(v) for v in t.feature],
                    "threshold": [float(v) for v in t.threshold],
                    "left": [int(v) for v in t.left],
                    "right": [int(v) for v in t.right],
                    "prob": [float(v) for v in t.prob],
                }
                for t in model.trees
            ],
        }
    else:
        doc = {
            "kind": model.kind,
            "weights": [float(v) for v in model.weights],
            "intercept": float(model.intercept),
            "scaler": model.scaler.to_dict() if model.scaler is not None else None,
            "converged": bool(model.converged),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_model(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc["kind"] == "forest":
        return Forest(
            kind="forest",
            n_features=int(doc["n_features"]),
            trees=[
                Tree(
                    feature=np.array(t["feature"], dtype=int),
                    threshold=np.array(t["threshold"], dtype=float),
                    left=np.array(t["left"], dtype=int),
                    right=np.array(t["right"], dtype=int),
                    prob=np.array(t["prob"], dtype=float),
                )
                for t in doc["trees"]
            ],
        )
    return LinearModel(
        kind=doc["kind"],
        weights=np.array(doc["weights"], dtype=float),
        intercept=float(doc["intercept"]),
        scaler=StandardScaler.from_dict(doc["scaler"]) if doc.get("scaler") else None,
        converged=bool(doc.get("converged", True)),
    )
