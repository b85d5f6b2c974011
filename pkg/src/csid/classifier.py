"""Multinomial logistic regression and the cross-validated evaluation pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.model_selection import StratifiedGroupKFold, StratifiedKFold

from .colorspace import SPACES
from .errors import DegenerateClassError, MetricError, StratificationError
from .features import GdaModel, Standardizer, fit_gda, project_gda

log = logging.getLogger(__name__)

MLR_VERSION = 1


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(W, b, X, Y, l2):
    """Mean cross-entropy + (l2/2)||W||^2 and its gradient; Y is one-hot (n, C)."""
    n = X.shape[0]
    scores = X @ W.T + b
    z = scores - scores.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -np.sum(Y * log_p) / n + 0.5 * l2 * np.sum(W * W)
    diff = (np.exp(log_p) - Y) / n
    return loss, diff.T @ X + l2 * W, diff.sum(axis=0)


@dataclass
class MlrModel:
    classes: list
    weights: np.ndarray  # (C, d)
    biases: np.ndarray  # (C,)
    l2: float
    iterations: int = 0
    loss_trace: list = field(default_factory=list, repr=False)

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[1]:
            raise ValueError(f"feature length {X.shape[1]} does not match model {self.weights.shape[1]}")
        return X @ self.weights.T + self.biases

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.scores(X))

    def to_dict(self):
        return {"version": MLR_VERSION, "classes": list(self.classes),
                "weights": self.weights.tolist(), "biases": self.biases.tolist(), "l2": self.l2,
                "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MLR_VERSION:
            raise ValueError(f"unsupported MLR model version {d.get('version')!r}")
        return cls(list(d["classes"]), np.array(d["weights"]), np.array(d["biases"]), d["l2"],
                   d.get("iterations", 0))


def _class_order(labels) -> list:
    present = set(labels)
    ordered = [c for c in SPACES if c in present]
    return ordered + sorted(present - set(ordered))


def train_mlr(X, labels, l2: float = 1e-3, classes: Optional[Sequence] = None,
              tol: float = 1e-6, max_iter: int = 5000) -> MlrModel:
    """Full-batch gradient descent with Armijo backtracking."""
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("input error: non-finite feature values")
    classes = list(classes) if classes is not None else _class_order(labels)
    if len(set(labels)) < 2:
        raise DegenerateClassError("degenerate-class: MLR needs at least two classes")
    index = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((X.shape[0], len(classes)))
    Y[np.arange(X.shape[0]), [index[c] for c in labels]] = 1.0

    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    loss, gW, gb = loss_and_grad(W, b, X, Y, l2)
    trace = [loss]
    step = 1.0
    it = 0
    while it < max_iter:
        gnorm2 = np.sum(gW * gW) + np.sum(gb * gb)
        if np.sqrt(gnorm2) < tol:
            break
        step *= 2.0
        while True:
            W_new, b_new = W - step * gW, b - step * gb
            new_loss, gW_new, gb_new = loss_and_grad(W_new, b_new, X, Y, l2)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        W, b, loss, gW, gb = W_new, b_new, new_loss, gW_new, gb_new
        trace.append(loss)
        it += 1
    return MlrModel(classes, W, b, l2, it, trace)


def predict(model: MlrModel, v):
    """Top class (first in class order on ties) and the probability vector."""
    p = model.predict_proba(v)[0]
    return model.classes[int(np.argmax(p))], p


def accuracy(confusion) -> float:
    C = np.asarray(confusion, dtype=np.float64)
    total = C.sum()
    if C.size == 0 or total <= 0:
        raise MetricError("metric error: empty confusion matrix")
    return 100.0 * np.trace(C) / total


@dataclass
class EvalReport:
    classes: list
    confusion: np.ndarray  # rows: truth, columns: prediction
    fold_accuracies: list
    title: str = ""

    @property
    def folds(self) -> int:
        return len(self.fold_accuracies)

    @property
    def overall_accuracy(self) -> float:
        return accuracy(self.confusion)

    @property
    def fold_std(self) -> float:
        return float(np.std(self.fold_accuracies)) if self.fold_accuracies else 0.0

    @property
    def per_class_accuracy(self) -> dict:
        rows = self.confusion.sum(axis=1)
        return {c: (100.0 * self.confusion[i, i] / rows[i] if rows[i] else 0.0)
                for i, c in enumerate(self.classes)}

    def to_dict(self):
        return {"title": self.title, "classes": list(self.classes),
                "per_class_accuracy": self.per_class_accuracy,
                "overall_accuracy": self.overall_accuracy, "fold_std": self.fold_std,
                "fold_accuracies": list(self.fold_accuracies), "folds": self.folds,
                "confusion": self.confusion.astype(int).tolist()}

    def format_table(self) -> str:
        width = max(len(c) for c in self.classes)
        lines = [self.title or "Accuracy", f"{'Color space':<{max(width, 11)}}  Accuracy by space (%)"]
        for c, acc in self.per_class_accuracy.items():
            lines.append(f"{c:<{max(width, 11)}}  {acc:6.2f}")
        lines.append(f"{'Overall':<{max(width, 11)}}  {self.overall_accuracy:6.2f} +/- {self.fold_std:.2f}"
                     f"  ({self.folds}-fold)")
        return "\n".join(lines)


def confusion_matrix(truth, pred, classes) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    C = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, pred):
        C[index[t], index[p]] += 1
    return C


@dataclass
class ClassifierConfig:
    out_dim: Optional[int] = None  # defaults to classes - 1
    kernel: str = "rbf"
    bandwidth: Optional[float] = None  # None: median pairwise distance
    gda_reg: float = 1e-8
    l2_grid: tuple = (1e-4, 1e-3, 1e-2)
    l2: float = 1e-3
    inner_folds: int = 3
    use_gda: bool = True

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "l2_grid" in d:
            d["l2_grid"] = tuple(d["l2_grid"])
        return cls(**d)

    def to_dict(self):
        return {"out_dim": self.out_dim, "kernel": self.kernel, "bandwidth": self.bandwidth,
                "gda_reg": self.gda_reg, "l2_grid": list(self.l2_grid), "l2": self.l2,
                "inner_folds": self.inner_folds, "use_gda": self.use_gda}


@dataclass
class FittedPipeline:
    standardizer: Standardizer
    gda: Optional[GdaModel]
    mlr: MlrModel

    def transform(self, X) -> np.ndarray:
        Z = self.standardizer.transform(np.atleast_2d(X))
        return project_gda(self.gda, Z) if self.gda is not None else Z

    def predict_proba(self, X) -> np.ndarray:
        return self.mlr.predict_proba(self.transform(X))

    def predict(self, X) -> list:
        return [self.mlr.classes[i] for i in np.argmax(self.predict_proba(X), axis=1)]

    def to_dict(self):
        return {"standardizer": self.standardizer.to_dict(),
                "gda": self.gda.to_dict() if self.gda is not None else None,
                "mlr": self.mlr.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Standardizer.from_dict(d["standardizer"]),
                   GdaModel.from_dict(d["gda"]) if d.get("gda") else None,
                   MlrModel.from_dict(d["mlr"]))


def _fit_transform(X, labels, cfg: ClassifierConfig):
    std = Standardizer.fit(X)
    Z = std.transform(X)
    gda = None
    if cfg.use_gda:
        gda = fit_gda(Z, labels, cfg.out_dim, cfg.kernel, cfg.bandwidth, cfg.gda_reg)
        Z = gda.train_projection
    return std, gda, Z


def fit_pipeline(X, labels, cfg: Optional[ClassifierConfig] = None, l2: Optional[float] = None,
                 seed: int = 0) -> FittedPipeline:
    """Standardize -> GDA -> MLR; l2 picked by an inner stratified split unless given."""
    cfg = cfg or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if l2 is None:
        l2 = select_l2(X, labels, cfg, seed)
    std, gda, Z = _fit_transform(X, labels, cfg)
    return FittedPipeline(std, gda, train_mlr(Z, list(labels), l2))


def select_l2(X, labels, cfg: ClassifierConfig, seed: int = 0) -> float:
    if len(cfg.l2_grid) <= 1:
        return cfg.l2_grid[0] if cfg.l2_grid else cfg.l2
    _, counts = np.unique(labels, return_counts=True)
    k = min(cfg.inner_folds, int(counts.min()))
    # every inner training split must keep two samples per class for GDA
    if k < 2 or counts.min() - -(-counts.min() // k) < 2:
        log.info("too few samples for inner l2 selection; using l2=%g", cfg.l2)
        return cfg.l2
    correct = np.zeros(len(cfg.l2_grid))
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    for tr, te in skf.split(X, labels):
        std, gda, Z = _fit_transform(X[tr], labels[tr], cfg)
        Zte = std.transform(X[te])
        if gda is not None:
            Zte = project_gda(gda, Zte)
        for i, l2 in enumerate(cfg.l2_grid):
            mlr = train_mlr(Z, list(labels[tr]), l2, classes=_class_order(labels))
            pred = np.asarray(mlr.classes)[np.argmax(mlr.scores(Zte), axis=1)]
            correct[i] += np.sum(pred == labels[te])
    return float(cfg.l2_grid[int(np.argmax(correct))])


def stratified_folds(labels, k: int, seed: int, groups=None):
    """Class-proportional folds; with ``groups``, every group stays inside one fold."""
    labels = np.asarray(labels)
    if k < 2:
        raise StratificationError("stratification error: need at least 2 folds")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < k:
        raise StratificationError(f"stratification error: class {str(classes[counts.argmin()])!r} has "
                                  f"{counts.min()} samples, fewer than {k} folds")
    if groups is None:
        skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        return list(skf.split(np.zeros(len(labels)), labels))
    groups = np.asarray(groups)
    if np.unique(groups).size < k:
        raise StratificationError(f"stratification error: {np.unique(groups).size} groups for {k} folds")
    sgkf = StratifiedGroupKFold(n_splits=k, shuffle=True, random_state=seed)
    return list(sgkf.split(np.zeros(len(labels)), labels, groups))


def stratified_cv(X, labels, k: int = 5, cfg: Optional[ClassifierConfig] = None, seed: int = 0,
                  title: str = "", groups=None) -> EvalReport:
    """Stratified k-fold evaluation; every fitted stage sees the training split only.

    ``groups`` (e.g. the source photo of each rendering) keeps related images
    out of each other's folds.
    """
    cfg = cfg or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    classes = _class_order(labels)
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    fold_acc = []
    for fold, (tr, te) in enumerate(stratified_folds(labels, k, seed, groups)):
        pipe = fit_pipeline(X[tr], labels[tr], cfg, seed=seed + fold)
        C = confusion_matrix(labels[te], pipe.predict(X[te]), classes)
        fold_acc.append(accuracy(C))
        confusion += C
        log.info("fold %d: %.2f%%", fold, fold_acc[-1])
    return EvalReport(classes, confusion, fold_acc, title)
