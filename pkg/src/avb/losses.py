"""CCC metric/loss with analytic gradients, cross-entropy, UAR, overall mean.

CCC follows Lin's definition with population (1/N) moments:
    ccc = 2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CCC_EPS = 1e-12


@dataclass
class CccReport:
    per_dimension: list[float]
    mean_ccc: float


def ccc(pred, target) -> float:
    """Lin's concordance correlation coefficient of two sequences.

    Degenerate case (both sequences constant and equal) returns 0 so a
    pathological batch never divides by zero.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pred and target must be 1-D of equal length")
    n = x.size
    if n < 2:
        raise ValueError("CCC needs at least 2 samples")
    mx, my = x.mean(), y.mean()
    vx = x.var()
    vy = y.var()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom < CCC_EPS:
        return 0.0
    return float(2.0 * cov / denom)


def ccc_per_column(pred: np.ndarray, target: np.ndarray) -> CccReport:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    per = [ccc(pred[:, k], target[:, k]) for k in range(pred.shape[1])]
    return CccReport(per_dimension=per, mean_ccc=float(np.mean(per)))


def ccc_loss_and_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """loss = 1 - mean_k ccc(pred[:,k], target[:,k]); grad is d loss / d pred.

    Column gradient of Lin's CCC with population moments:
        d ccc / d x_i = (2/N) * [ (y_i - my) * denom
                                  - 2 cov * ((x_i - mx) + (mx - my)) ] / denom^2
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim != 2 or x.shape != y.shape:
        raise ValueError("pred/target must be equal-shape (B, K) arrays")
    b, k = x.shape
    if b < 2:
        raise ValueError("CCC loss needs a batch of at least 2")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    vx = (xc ** 2).mean(axis=0)
    vy = (yc ** 2).mean(axis=0)
    cov = (xc * yc).mean(axis=0)
    denom = vx + vy + (mx - my) ** 2
    ccc_k = np.zeros(k)
    grad = np.zeros_like(x)
    ok = denom >= CCC_EPS
    ccc_k[ok] = 2.0 * cov[ok] / denom[ok]
    num = yc[:, ok] * denom[ok] - 2.0 * cov[ok] * (xc[:, ok] + (mx - my)[ok])
    dccc = (2.0 / b) * num / denom[ok] ** 2
    grad[:, ok] = -dccc / k
    loss = 1.0 - float(ccc_k.mean())
    return loss, grad


def xent_loss_and_grad(logits: np.ndarray, class_idx: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy with max-subtraction stabilization."""
    z = np.asarray(logits, dtype=np.float64)
    idx = np.asarray(class_idx, dtype=np.int64)
    b, c = z.shape
    if np.any(idx < 0) or np.any(idx >= c):
        raise ValueError("class index out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - logsumexp[:, None]
    loss = float(-log_probs[np.arange(b), idx].mean())
    probs = np.exp(log_probs)
    grad = probs
    grad[np.arange(b), idx] -= 1.0
    grad /= b
    return loss, grad


def confusion_matrix(true_idx, pred_idx, n_classes: int) -> np.ndarray:
    t = np.asarray(true_idx, dtype=np.int64)
    p = np.asarray(pred_idx, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("true/pred length mismatch")
    if np.any(t < 0) or np.any(t >= n_classes) or np.any(p < 0) or np.any(p >= n_classes):
        raise ValueError("class index out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def uar(confusion: np.ndarray) -> float:
    """Unweighted average recall; classes with zero support are excluded."""
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0):
        raise ValueError("confusion matrix counts must be nonnegative")
    support = cm.sum(axis=1)
    present = support > 0
    if not np.any(present):
        raise ValueError("all classes empty")
    recalls = np.diag(cm)[present] / support[present]
    return float(recalls.mean())


def overall_mean(high: float, two: float, culture: float, type_uar: float) -> float:
    """Arithmetic mean of the three task CCCs and the classification UAR."""
    vals = (high, two, culture, type_uar)
    if any(v is None for v in vals):
        raise ValueError("all four task scores are required")
    return float(sum(vals) / 4.0)
