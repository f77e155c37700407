"""Base learners built on numpy: SMOTE rebalancing, softmax regression,
CART classification trees, and a small feed-forward network."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class LearnerError(ValueError):
    pass


# -- SMOTE -----------------------------------------------------------------------


def smote(minority: np.ndarray, k: int = 5, amount: float = 2.0, seed: int = 0) -> np.ndarray:
    """Synthetic minority samples x + u (x_nn - x), u ~ U(0,1), nn among the k
    nearest minority neighbors (Euclidean).

    `amount` is the target size factor: amount=2 doubles the class, returning
    (amount - 1) * len(minority) synthetic rows. With fewer than k+1 points,
    k shrinks with a warning.
    """
    X = np.atleast_2d(np.asarray(minority, dtype=np.float64))
    n = len(X)
    if n < 2:
        raise LearnerError("SMOTE needs at least 2 minority samples")
    if amount <= 1.0:
        return np.empty((0, X.shape[1]))
    if n <= k:
        warnings.warn(f"minority size {n} <= k={k}; using k={n - 1}", stacklevel=2)
        k = n - 1
    rng = np.random.default_rng(seed)
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    n_new = int(round((amount - 1.0) * n))
    base = rng.integers(0, n, size=n_new)
    pick = nn[base, rng.integers(0, k, size=n_new)]
    u = rng.uniform(0.0, 1.0, size=(n_new, 1))
    return X[base] + u * (X[pick] - X[base])


# -- softmax regression -------------------------------------------------------------


@dataclass
class SoftmaxModel:
    W: np.ndarray  # (p+1, C), bias row first
    classes: tuple
    converged: bool = True
    n_iter: int = 0

    def to_dict(self) -> dict:
        return {"kind": "softmax", "W": self.W.tolist(), "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d: dict) -> "SoftmaxModel":
        return cls(np.asarray(d["W"]), tuple(d["classes"]))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_grad(W: np.ndarray, Xb: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with L2 on non-bias weights, and its gradient."""
    P = _softmax(Xb @ W)
    n = len(Xb)
    loss = float(-np.log(np.clip(P[Y.astype(bool)], 1e-300, None)).sum() / n)
    reg = W.copy()
    reg[0] = 0.0
    loss += l2 * float((reg ** 2).sum())
    grad = Xb.T @ (P - Y) / n + 2.0 * l2 * reg
    return loss, grad


def train_softmax(X: np.ndarray, y: Sequence, l2: float = 1e-4, max_iter: int = 500,
                  tol: float = 1e-6, seed: int = 0) -> SoftmaxModel:
    """Multinomial logistic regression by gradient descent with backtracking
    line search; converges when the gradient norm drops below `tol`."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise LearnerError("non-finite features")
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    if len(classes) < 2:
        raise LearnerError("need at least 2 classes")
    Xb = np.column_stack([np.ones(len(X)), X])
    Y = np.zeros((len(X), len(classes)))
    Y[np.arange(len(X)), codes] = 1.0
    W = np.zeros((Xb.shape[1], len(classes)))
    loss, grad = softmax_loss_grad(W, Xb, Y, l2)
    lr = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            converged = True
            break
        step = lr
        for _ in range(40):
            W_new = W - step * grad
            loss_new, grad_new = softmax_loss_grad(W_new, Xb, Y, l2)
            if loss_new <= loss - 0.5 * step * gnorm ** 2 * 1e-4:
                break
            step *= 0.5
        W, loss, grad = W_new, loss_new, grad_new
        lr = min(step * 2.0, 64.0)
    return SoftmaxModel(W, tuple(classes.tolist()), converged, it)


def predict_softmax(model: SoftmaxModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = _softmax(np.column_stack([np.ones(len(X)), X]) @ model.W)
    labels = np.asarray(model.classes)[P.argmax(axis=1)]
    return labels, P


# -- CART classification tree ----------------------------------------------------------


@dataclass
class TreeModel:
    root: dict
    classes: tuple
    max_depth: int

    def to_dict(self) -> dict:
        return {"kind": "tree", "root": self.root, "classes": list(self.classes),
                "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(d["root"], tuple(d["classes"]), d["max_depth"])


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p ** 2).sum())


def _best_split(X: np.ndarray, codes: np.ndarray, n_classes: int, min_leaf: int):
    """Best (feature, threshold) by Gini decrease; zero-gain splits allowed on
    impure nodes so depth-limited trees can carve XOR-like structure."""
    n = len(codes)
    parent_counts = np.bincount(codes, minlength=n_classes)
    parent_gini = _gini(parent_counts)
    if parent_gini == 0.0 or n < 2 * min_leaf:
        return None
    best = None  # (neg_decrease, feature, threshold)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="mergesort")
        xs = X[order, j]
        cs = codes[order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), cs] = 1.0
        left_counts = np.cumsum(onehot, axis=0)
        nl = np.arange(1, n + 1)
        valid = (xs[:-1] < xs[1:]) & (nl[:-1] >= min_leaf) & ((n - nl[:-1]) >= min_leaf)
        if not valid.any():
            continue
        idx = np.flatnonzero(valid)
        lc = left_counts[idx]
        rc = parent_counts[None, :] - lc
        nl_v = nl[idx].astype(np.float64)
        nr_v = n - nl_v
        gini_l = 1.0 - ((lc / nl_v[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((rc / nr_v[:, None]) ** 2).sum(axis=1)
        decrease = parent_gini - (nl_v * gini_l + nr_v * gini_r) / n
        bi = int(np.argmax(decrease))
        if decrease[bi] < -1e-12:
            continue
        thr = 0.5 * (xs[idx[bi]] + xs[idx[bi] + 1])
        cand = (-decrease[bi], j, float(thr))
        if best is None or cand[0] < best[0] - 1e-15:
            best = cand
    return None if best is None else (best[1], best[2])


def _grow(X: np.ndarray, codes: np.ndarray, n_classes: int, depth: int,
          max_depth: int, min_leaf: int) -> dict:
    counts = np.bincount(codes, minlength=n_classes)
    node = {"n": int(len(codes)), "counts": counts.tolist(), "class": int(np.argmax(counts))}
    if depth >= max_depth:
        return node
    split = _best_split(X, codes, n_classes, min_leaf)
    if split is None:
        return node
    j, thr = split
    mask = X[:, j] <= thr
    node["feature"] = int(j)
    node["threshold"] = thr
    node["left"] = _grow(X[mask], codes[mask], n_classes, depth + 1, max_depth, min_leaf)
    node["right"] = _grow(X[~mask], codes[~mask], n_classes, depth + 1, max_depth, min_leaf)
    return node


def train_tree(X: np.ndarray, y: Sequence, max_depth: int, min_leaf: int = 5) -> TreeModel:
    """CART: greedy binary splits by Gini decrease, majority-class leaves."""
    if not (1 <= max_depth <= 30):
        raise LearnerError("max_depth must be in [1, 30]")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    root = _grow(X, codes, len(classes), 0, max_depth, min_leaf)
    return TreeModel(root, tuple(classes.tolist()), max_depth)


def predict_tree(model: TreeModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros(len(X), dtype=np.int64)

    def walk(node: dict, idx: np.ndarray) -> None:
        if "feature" not in node:
            out[idx] = node["class"]
            return
        mask = X[idx, node["feature"]] <= node["threshold"]
        walk(node["left"], idx[mask])
        walk(node["right"], idx[~mask])

    walk(model.root, np.arange(len(X)))
    return np.asarray(model.classes)[out]


# -- feed-forward network ---------------------------------------------------------------


@dataclass
class MLPModel:
    weights: list[np.ndarray]  # per layer, shape (fan_in + 1, fan_out); bias row first
    classes: tuple
    layers: tuple = ()
    final_loss: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {"kind": "mlp", "weights": [w.tolist() for w in self.weights],
                "classes": list(self.classes), "layers": list(self.layers)}

    @classmethod
    def from_dict(cls, d: dict) -> "MLPModel":
        return cls([np.asarray(w) for w in d["weights"]], tuple(d["classes"]),
                   tuple(d.get("layers", ())))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _mlp_forward(weights: list[np.ndarray], X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    for i, W in enumerate(weights):
        z = np.column_stack([np.ones(len(h)), h]) @ W
        h = _softmax(z) if i == len(weights) - 1 else _sigmoid(z)
        acts.append(h)
    return acts


def mlp_loss_grad(weights: list[np.ndarray], X: np.ndarray, Y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and backprop gradients (logistic hiddens, softmax out)."""
    acts = _mlp_forward(weights, X)
    P = acts[-1]
    n = len(X)
    loss = float(-np.log(np.clip(P[Y.astype(bool)], 1e-300, None)).sum() / n)
    grads: list[np.ndarray] = [np.empty(0)] * len(weights)
    delta = (P - Y) / n
    for i in range(len(weights) - 1, -1, -1):
        a_prev = np.column_stack([np.ones(len(acts[i])), acts[i]])
        grads[i] = a_prev.T @ delta
        if i > 0:
            back = delta @ weights[i][1:].T
            delta = back * acts[i] * (1.0 - acts[i])
    return loss, grads


def train_mlp(X: np.ndarray, y: Sequence, layers: Sequence[int] = (50,), epochs: int = 50,
              learning_rate: float = 0.5, batch_size: int = 128, seed: int = 0) -> MLPModel:
    """Mini-batch gradient descent on cross-entropy; deterministic given seed."""
    if any(int(s) < 1 for s in layers):
        raise LearnerError("layer sizes must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    if len(classes) < 2:
        raise LearnerError("need at least 2 classes")
    Y = np.zeros((len(X), len(classes)))
    Y[np.arange(len(X)), codes] = 1.0
    rng = np.random.default_rng(seed)
    dims = [X.shape[1], *[int(s) for s in layers], len(classes)]
    weights = [rng.normal(0.0, 1.0 / np.sqrt(dims[i] + 1), size=(dims[i] + 1, dims[i + 1]))
               for i in range(len(dims) - 1)]
    loss = float("nan")
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for lo in range(0, len(X), batch_size):
            sel = order[lo:lo + batch_size]
            loss, grads = mlp_loss_grad(weights, X[sel], Y[sel])
            if not np.isfinite(loss):
                raise LearnerError(f"training diverged (loss={loss})")
            for W, g in zip(weights, grads):
                W -= learning_rate * g
    return MLPModel(weights, tuple(classes.tolist()), tuple(int(s) for s in layers), loss)


def predict_mlp(model: MLPModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = _mlp_forward(model.weights, X)[-1]
    return np.asarray(model.classes)[P.argmax(axis=1)], P
