"""Evaluation metrics, ROC analysis, PCA projection and finite-difference gradient checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def auc(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr)) if hasattr(np, "trapezoid") else float(np.trapz(self.tpr, self.fpr))

    def operating_point(self) -> tuple[float, float, float]:
        """(fpr, tpr, threshold) maximising TPR - FPR (equal error costs)."""
        k = int(np.argmax(self.tpr - self.fpr))
        return float(self.fpr[k]), float(self.tpr[k]), float(self.thresholds[k])


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    fpr: np.ndarray  # per class, one-vs-rest
    fnr: np.ndarray
    roc: RocCurve | None = None
    projection_2d: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "fpr": self.fpr.tolist(),
            "fnr": self.fnr.tolist(),
        }
        if self.roc is not None:
            f, t, th = self.roc.operating_point()
            d["auc"] = self.roc.auc
            d["operating_point"] = {"fpr": f, "tpr": t, "threshold": th}
        d.update(self.extra)
        return d

    def to_csv(self, path) -> Path:
        """Per-class rows: class, support, correct, fpr, fnr, then the confusion row."""
        path = Path(path)
        c = self.confusion
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "support", "correct", "fpr", "fnr"] + [f"pred_{j}" for j in range(c.shape[1])])
            for i in range(c.shape[0]):
                w.writerow([i, int(c[i].sum()), int(c[i, i]), f"{self.fpr[i]:.6g}", f"{self.fnr[i]:.6g}"]
                           + [int(v) for v in c[i]])
        return path

    def roc_to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in zip(self.roc.fpr, self.roc.tpr, self.roc.thresholds):
                w.writerow([f"{f:.6g}", f"{t:.6g}", f"{th:.6g}"])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    c = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(c, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return c


def rates(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class one-vs-rest (FPR, FNR); 0 where the denominator is empty."""
    c = confusion.astype(np.float64)
    tp = np.diag(c)
    fn = c.sum(axis=1) - tp
    fp = c.sum(axis=0) - tp
    tn = c.sum() - tp - fn - fp
    with np.errstate(invalid="ignore", divide="ignore"):
        fpr = np.where(fp + tn > 0, fp / (fp + tn), 0.0)
        fnr = np.where(tp + fn > 0, fn / (tp + fn), 0.0)
    return fpr, fnr


def roc_curve(scores, labels) -> RocCurve:
    """ROC of binary ``labels`` (1 = positive) ranked by ``scores`` (higher = more positive).

    Thresholds run from +inf down through every distinct score; a sample is positive when
    its score is >= threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.size == 0 or s.size != y.size:
        raise ValueError("scores and labels must be non-empty and of equal length")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[distinct]
    fp = np.cumsum(~y)[distinct]
    pos, neg = max(int(y.sum()), 1), max(int((~y).sum()), 1)
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    return RocCurve(fpr, tpr, np.r_[np.inf, s[distinct]])


def evaluate_predictions(y_true, y_pred, num_classes: int, scores=None, positive=None) -> EvalReport:
    """Metrics from hard predictions; ``scores`` (n, C) add a one-vs-rest ROC.

    With ``positive`` set, the ROC is for that class alone; otherwise it pools all
    one-vs-rest decisions (micro average).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("empty test set")
    conf = confusion_matrix(y_true, y_pred, num_classes)
    fpr, fnr = rates(conf)
    roc = None
    if scores is not None:
        sc = np.asarray(scores, dtype=np.float64)
        onehot = np.eye(num_classes, dtype=bool)[y_true]
        if positive is None:
            roc = roc_curve(sc.ravel(), onehot.ravel())
        else:
            roc = roc_curve(sc[:, positive], onehot[:, positive])
    return EvalReport(float(np.mean(y_true == y_pred)), conf, fpr, fnr, roc)


def evaluate(trained, x, y, project: bool = False, positive=None) -> EvalReport:
    """Evaluate a trained classifier on a labelled test set."""
    from .training import predict

    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty test set")
    n_classes = trained.model.num_classes
    probs = np.concatenate([np.atleast_2d(predict(trained, x[i:i + 64])) for i in range(0, len(y), 64)])
    rep = evaluate_predictions(y, probs.argmax(axis=1), n_classes, probs, positive)
    if project and len(y) >= 3:
        xs = np.asarray(x, dtype=np.float64)
        feats = trained.model.features(xs / trained.input_scale if xs.ndim == 3 else xs)
        rep.projection_2d = pca_project(feats)[0]
    return rep


def one_class_report(mse_genuine, mse_other, tau: float) -> EvalReport:
    """Binary report for a one-class detector; class 1 = legitimate (mse < tau)."""
    g = np.asarray(mse_genuine, dtype=np.float64)
    o = np.asarray(mse_other, dtype=np.float64)
    y_true = np.r_[np.ones(g.size, dtype=np.int64), np.zeros(o.size, dtype=np.int64)]
    mse = np.r_[g, o]
    y_pred = (mse < tau).astype(np.int64)
    rep = evaluate_predictions(y_true, y_pred, 2)
    rep.roc = roc_curve(-mse, y_true)
    rep.extra["tau"] = float(tau)
    return rep


# --------------------------------------------------------------------------- PCA


def pca_project(features) -> tuple[np.ndarray, np.ndarray]:
    """Top-two principal-component coordinates and their explained-variance ratios.

    Signs are fixed so each component's largest-magnitude loading is positive. Inputs of
    rank < 2 give a zero second coordinate.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 3:
        raise ValueError("need at least 3 feature vectors")
    c = f - f.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    vt = vt[:2]
    s = np.r_[s, np.zeros(2)][:2]
    tol = max(c.shape) * np.finfo(float).eps * (s[0] if s[0] > 0 else 1.0)
    coords = np.zeros((f.shape[0], 2))
    for k in range(min(2, vt.shape[0])):
        if s[k] <= tol:
            continue
        v = vt[k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        coords[:, k] = c @ v
    total = float(np.sum(c**2))
    ratio = (s**2 / total) if total > 0 else np.zeros(2)
    ratio[s <= tol] = 0.0
    return coords, ratio


# --------------------------------------------------------------------------- gradient check


def gradient_check(model, x, y=None, eps: float = 1e-6, max_coords: int = 40, rng=None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Per parameter tensor, up to ``max_coords`` coordinates are probed and the error is
    ``||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12)`` over them.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = model.loss_and_grad(x, y)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= max_coords else rng.choice(flat.size, max_coords, replace=False)
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            lp, _ = model.loss_and_grad(x, y)
            flat[i] = old - eps
            lm, _ = model.loss_and_grad(x, y)
            flat[i] = old
            num[j] = (lp - lm) / (2 * eps)
        ana = grads[name].reshape(-1)[idx]
        denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
