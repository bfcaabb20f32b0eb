"""Training losses with gradients with respect to the prediction."""
from dataclasses import dataclass

import numpy as np

from .imaging import sobel_adjoint, sobel_gradients, ssim_mean_grad

EDGE_KERNEL = 5
SSIM_WINDOW = 11


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        ws = (self.lambda1, self.lambda2, self.lambda3)
        if not all(np.isfinite(w) and w >= 0 for w in ws):
            raise ValueError(f"loss weights must be finite and >= 0, got {ws}")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one loss weight must be positive")

    def scaled(self, factor):
        return LossWeights(self.lambda1 * factor, self.lambda2 * factor, self.lambda3 * factor)


@dataclass(frozen=True, eq=False)
class LossValue:
    total: float
    l1: float
    edge: float
    structure: float
    grad_wrt_prediction: np.ndarray


def _pair(pred, gt):
    pred = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "values", gt), dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {gt.shape}")
    return pred, gt


def l1_loss(pred, gt):
    pred, gt = _pair(pred, gt)
    diff = pred - gt
    n = diff.size
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def edge_loss(pred, gt, k=EDGE_KERNEL):
    pred, gt = _pair(pred, gt)
    pgx, pgy = sobel_gradients(pred, k)
    tgx, tgy = sobel_gradients(gt, k)
    diff = (np.abs(pgx) + np.abs(pgy)) - (np.abs(tgx) + np.abs(tgy))
    n = diff.size
    s = np.sign(diff) / n
    grad = sobel_adjoint(s * np.sign(pgx), s * np.sign(pgy), k)
    return float(np.abs(diff).sum() / n), grad


def structure_loss(pred, gt, k=SSIM_WINDOW):
    """``1 - mean SSIM``; zero for identical images, at most 2."""
    pred, gt = _pair(pred, gt)
    s, g = ssim_mean_grad(pred, gt, k)
    return 1.0 - s, -g


def total_loss(pred, gt, w=None):
    w = LossWeights() if w is None else w
    pred, gt = _pair(pred, gt)
    l1, g1 = l1_loss(pred, gt)
    edge, ge = edge_loss(pred, gt)
    structure, gs = structure_loss(pred, gt)
    total = w.lambda1 * l1 + w.lambda2 * edge + w.lambda3 * structure
    grad = w.lambda1 * g1 + w.lambda2 * ge + w.lambda3 * gs
    return LossValue(total, l1, edge, structure, grad)
