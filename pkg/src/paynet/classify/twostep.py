"""2-step classification strategy, penalty-weighted scoring, random baselines,
and grid search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .learners import (
    LearnerError,
    MLPModel,
    SoftmaxModel,
    TreeModel,
    predict_mlp,
    predict_softmax,
    predict_tree,
    smote,
    train_mlp,
    train_softmax,
    train_tree,
)

ORDER = ("L", "M", "H")
MERGED = "X"

# penalty matrices (rows = true class, columns = predicted, order L, M, H);
# risk-understating mistakes cost the most
P_ACC = np.array([
    [1.0, -0.25, -0.5],
    [-0.75, 1.0, -0.25],
    [-1.0, -0.75, 1.0],
])
P_REC = np.array([
    [1.0, -0.25, -0.75],
    [-0.75, 1.0, -0.25],
    [-1.0, -0.75, 1.75],
])
P_PR = np.array([
    [1.0, -0.25, -0.75],
    [-0.75, 1.0, -0.25],
    [-1.0, -0.75, 1.75],
])

_DEFAULT_HYPER = {
    "softmax": {"l2": 1e-4, "max_iter": 300},
    "tree": {"max_depth": 6},
    "mlp": {"layers": (50,), "epochs": 30, "learning_rate": 0.5},
}


def _train_base(base: str, X: np.ndarray, y: np.ndarray, hyper: dict, seed: int):
    h = {**_DEFAULT_HYPER[base], **(hyper or {})}
    if base == "softmax":
        return train_softmax(X, y, l2=h["l2"], max_iter=h["max_iter"], seed=seed)
    if base == "tree":
        return train_tree(X, y, max_depth=h["max_depth"], min_leaf=h.get("min_leaf", 5))
    if base == "mlp":
        return train_mlp(X, y, layers=h["layers"], epochs=h["epochs"],
                         learning_rate=h["learning_rate"],
                         batch_size=h.get("batch_size", 128), seed=seed)
    raise LearnerError(f"unknown base learner {base!r}")


def _predict_base(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, SoftmaxModel):
        return predict_softmax(model, X)[0]
    if isinstance(model, TreeModel):
        return predict_tree(model, X)
    if isinstance(model, MLPModel):
        return predict_mlp(model, X)[0]
    raise LearnerError(f"unknown model type {type(model)!r}")


# -- two-step model ------------------------------------------------------------------


@dataclass
class TwoStepModel:
    """One specialized pipeline per class: step 1 separates the class from the
    merged rest (X); step 2 separates the merged pair. The H pipeline trains
    step 1 on SMOTE-rebalanced data."""

    pipelines: dict  # class -> (step1 model, step2 model)
    base: str
    smote_k: int = 5

    def to_dict(self) -> dict:
        return {
            "kind": "two_step",
            "base": self.base,
            "smote_k": self.smote_k,
            "pipelines": {c: [m1.to_dict(), m2.to_dict()] for c, (m1, m2) in self.pipelines.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwoStepModel":
        kinds = {"softmax": SoftmaxModel, "tree": TreeModel, "mlp": MLPModel}
        pipes = {
            c: tuple(kinds[m["kind"]].from_dict(m) for m in pair)
            for c, pair in d["pipelines"].items()
        }
        return cls(pipes, d["base"], d.get("smote_k", 5))


def train_two_step(X: np.ndarray, y: Sequence[str], base: str = "tree",
                   hyper: dict | None = None, seed: int = 0, smote_k: int = 5) -> TwoStepModel:
    """Train the three class-specialized pipelines.

    For class c: step 1 on {c, X=merged others} (H pipeline: SMOTE brings H to
    parity with X first); step 2 on the two merged classes only.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    present = set(np.unique(y).tolist())
    if set(ORDER) - present:
        raise LearnerError(f"all classes required, missing {sorted(set(ORDER) - present)}")
    hyper = hyper or {}
    pipelines = {}
    for ci, c in enumerate(ORDER):
        is_c = y == c
        X1, y1 = X, np.where(is_c, c, MERGED)
        if c == "H":
            n_h, n_x = int(is_c.sum()), int((~is_c).sum())
            if n_x > n_h:
                synth = smote(X[is_c], k=smote_k, amount=n_x / n_h, seed=seed + 101 * ci)
                X1 = np.vstack([X, synth])
                y1 = np.concatenate([y1, np.full(len(synth), c)])
        step1 = _train_base(base, X1, y1, hyper.get("step1", hyper), seed + 2 * ci)
        rest = ~is_c
        step2 = _train_base(base, X[rest], y[rest], hyper.get("step2", hyper), seed + 2 * ci + 1)
        pipelines[c] = (step1, step2)
    return TwoStepModel(pipelines, base, smote_k)


def median_vote(labels: Sequence[str], step1_flags: Sequence[bool]) -> str:
    """Median of three ordered labels; when all three differ, a unique step-1
    label wins, otherwise the exact median M."""
    order = {c: i for i, c in enumerate(ORDER)}
    lab = list(labels)
    if len(set(lab)) == 3:
        firsts = [l for l, f in zip(lab, step1_flags) if f]
        if len(firsts) == 1:
            return firsts[0]
        return "M"
    return sorted(lab, key=order.__getitem__)[1]


def predict_two_step(model: TwoStepModel, X: np.ndarray) -> np.ndarray:
    """Per-pipeline label (step-1 label if not X, else step-2 label), combined
    by the median vote. Output is always one of L, M, H."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    outs = []
    flags = []
    for c in ORDER:
        step1, step2 = model.pipelines[c]
        p1 = _predict_base(step1, X)
        merged = p1 == MERGED
        lab = p1.copy().astype("U2")
        if merged.any():
            lab[merged] = _predict_base(step2, X[merged])
        outs.append(lab)
        flags.append(~merged)
    outs = np.stack(outs, axis=1)
    flags = np.stack(flags, axis=1)
    return np.array([median_vote(outs[i], flags[i]) for i in range(len(X))], dtype="U2")


def train_one_step(X: np.ndarray, y: Sequence[str], base: str = "tree",
                   hyper: dict | None = None, seed: int = 0):
    return _train_base(base, np.atleast_2d(np.asarray(X, dtype=np.float64)),
                       np.asarray(y), hyper or {}, seed)


def predict_one_step(model, X: np.ndarray) -> np.ndarray:
    return _predict_base(model, np.atleast_2d(np.asarray(X, dtype=np.float64)))


# -- evaluation ------------------------------------------------------------------------


def confusion_matrix(y_true: Sequence[str], y_pred: Sequence[str]) -> np.ndarray:
    """3x3 counts, rows = true class, columns = predicted (order L, M, H)."""
    idx = {c: i for i, c in enumerate(ORDER)}
    C = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        C[idx[t], idx[p]] += 1
    return C


def evaluate(C: np.ndarray, penalties: tuple[np.ndarray, np.ndarray, np.ndarray] = (P_ACC, P_REC, P_PR)) -> dict:
    """Accuracy, per-class recall, and the three penalty-weighted scores.

    ws_acc averages penalties over all samples; ws_rec row-normalizes;
    ws_pr column-normalizes with zero columns contributing 0.
    """
    C = np.asarray(C, dtype=np.float64)
    row = C.sum(axis=1)
    col = C.sum(axis=0)
    total = C.sum()
    if np.any(row <= 0):
        raise LearnerError("confusion matrix has an empty true-class row")
    p_acc, p_rec, p_pr = penalties
    rec = C.diagonal() / row
    ws_pr_terms = np.divide(C, col[None, :], out=np.zeros_like(C), where=col[None, :] > 0)
    return {
        "accuracy": float(C.trace() / total),
        "recall_L": float(rec[0]),
        "recall_M": float(rec[1]),
        "recall_H": float(rec[2]),
        "ws_acc": float((C * p_acc).sum() / total),
        "ws_rec": float(((C / row[:, None]) * p_rec).sum()),
        "ws_pr": float((ws_pr_terms * p_pr).sum()),
    }


# -- random baselines ---------------------------------------------------------------------


def random_baseline(class_distribution: Sequence[float], scheme: str = "one_step") -> dict:
    """Expected metrics of prevalence-proportional random prediction.

    one_step draws the label from the class prior. two_step pushes the same
    draw through the three pipelines (step-1 binary prior, then the prior of
    the two merged classes) and the median vote.
    """
    q = np.asarray(class_distribution, dtype=np.float64)
    if q.shape != (3,) or abs(q.sum() - 1.0) > 1e-9:
        raise LearnerError("class distribution must be 3 probabilities summing to 1")
    if scheme == "one_step":
        pred = q
    elif scheme == "two_step":
        pred = _two_step_label_distribution(q)
    else:
        raise LearnerError(f"unknown scheme {scheme!r}")
    return {
        "scheme": scheme,
        "accuracy": float(q @ pred),
        "recall_L": float(pred[0]),
        "recall_M": float(pred[1]),
        "recall_H": float(pred[2]),
        "label_distribution": pred.tolist(),
    }


def _two_step_label_distribution(q: np.ndarray) -> np.ndarray:
    """Distribution of the median-vote label over the three independent
    pipeline draws, each prevalence-proportional at both steps."""
    per_pipe: list[dict[str, float]] = []
    for ci, c in enumerate(ORDER):
        others = [i for i in range(3) if i != ci]
        rest = q[others].sum()
        probs = {c: q[ci]}
        for oi in others:
            probs[ORDER[oi]] = (1.0 - q[ci]) * (q[oi] / rest if rest > 0 else 0.5)
        per_pipe.append(probs)
    dist = np.zeros(3)
    for combo in itertools.product(ORDER, repeat=3):
        p = 1.0
        for pipe_i, lab in enumerate(combo):
            p *= per_pipe[pipe_i][lab]
        if p == 0.0:
            continue
        flags = [lab == ORDER[i] for i, lab in enumerate(combo)]
        final = median_vote(list(combo), flags)
        dist[ORDER.index(final)] += p
    return dist


# -- splits and grid search ---------------------------------------------------------------


def stratified_split(y: Sequence[str], test_frac: float = 0.25, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified train/test index split."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        cut = int(round(len(idx) * test_frac))
        test_idx.append(idx[:cut])
        train_idx.append(idx[cut:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def grid_search(X: np.ndarray, y: Sequence[str], base: str, grid: Sequence[dict],
                objective: str = "accuracy", seed: int = 0,
                strategy: str = "two_step") -> tuple[dict, list[dict]]:
    """Train every grid point on a seeded 75/25 split and rank by `objective`.

    Returns (best hyper-parameters, full score table); ties keep the earliest
    grid point.
    """
    if not grid:
        raise LearnerError("empty grid")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    tr, va = stratified_split(y, test_frac=0.25, seed=seed)
    table = []
    best = None
    for gi, hyper in enumerate(grid):
        if strategy == "two_step":
            model = train_two_step(X[tr], y[tr], base=base, hyper=hyper, seed=seed)
            pred = predict_two_step(model, X[va])
        else:
            model = train_one_step(X[tr], y[tr], base=base, hyper=hyper, seed=seed)
            pred = predict_one_step(model, X[va])
        scores = evaluate(confusion_matrix(y[va], pred))
        if objective not in scores:
            raise LearnerError(f"unknown objective {objective!r}")
        row = {"hyper": dict(hyper), **scores}
        table.append(row)
        if best is None or row[objective] > best[1] + 1e-12:
            best = (gi, row[objective])
    return dict(grid[best[0]]), table
