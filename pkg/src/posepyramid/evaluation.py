"""Pose metrics: root-aligned mean per-joint error in millimeters, percentage
of correct keypoints at a 150 mm threshold, its area under the threshold
sweep, and the error histogram."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

PCK_THRESHOLD_MM = 150.0
AUC_GRID = np.arange(0.0, 151.0, 5.0)  # 31 points, 0..150 inclusive
HIST_BUCKET_MM = 5.0


def _aligned_errors(pred, gt, root: int) -> np.ndarray:
    """Per-joint Euclidean distances (S, N) after root alignment."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    pa = pred - pred[:, root: root + 1, :]
    ga = gt - gt[:, root: root + 1, :]
    return np.linalg.norm(pa - ga, axis=2)


def mpjpe(pred, gt, root: int) -> float:
    """Mean per-joint position error in the input units (millimeters)."""
    return float(_aligned_errors(pred, gt, root).mean())


def pck3d(pred, gt, root: int, threshold: float = PCK_THRESHOLD_MM) -> float:
    """Percentage of joints with aligned error strictly under the threshold."""
    err = _aligned_errors(pred, gt, root)
    return float((err < threshold).mean() * 100.0)


def auc(pred, gt, root: int) -> float:
    """Mean of pck3d over thresholds 0,5,...,150 mm, scaled to [0, 1]."""
    err = _aligned_errors(pred, gt, root)
    vals = [(err < t).mean() for t in AUC_GRID]
    return float(np.mean(vals))


def error_histogram(errors, bucket: float = HIST_BUCKET_MM) -> dict:
    """Bucketed counts of per-joint errors plus mean and variance."""
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        return {"bucket_mm": bucket, "counts": [], "mean": 0.0, "variance": 0.0}
    idx = np.floor(errors / bucket).astype(int)
    counts = np.bincount(idx)
    return {
        "bucket_mm": bucket,
        "counts": counts.tolist(),
        "mean": float(errors.mean()),
        "variance": float(errors.var()),
    }


def histogram_csv(hist: dict) -> str:
    lines = ["bucket_lo_mm,bucket_hi_mm,count"]
    b = hist["bucket_mm"]
    for i, c in enumerate(hist["counts"]):
        lines.append(f"{i * b:.9g},{(i + 1) * b:.9g},{c}")
    return "\n".join(lines) + "\n"


@dataclass
class MetricReport:
    mpjpe_mm: float
    pck_percent: float
    auc: float
    n_samples: int
    histogram: dict
    per_sample_mpjpe_mm: list = field(default_factory=list)
    per_action: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "pck150_percent": self.pck_percent,
            "auc": self.auc,
            "n_samples": self.n_samples,
            "histogram": self.histogram,
            "per_sample_mpjpe_mm": self.per_sample_mpjpe_mm,
            "per_action": self.per_action,
        }


def compute_report(pred, gt, root: int, actions=None) -> MetricReport:
    err = _aligned_errors(pred, gt, root)
    report = MetricReport(
        mpjpe_mm=float(err.mean()),
        pck_percent=float((err < PCK_THRESHOLD_MM).mean() * 100.0),
        auc=float(np.mean([(err < t).mean() for t in AUC_GRID])),
        n_samples=err.shape[0],
        histogram=error_histogram(err),
        per_sample_mpjpe_mm=err.mean(axis=1).tolist(),
    )
    if actions is not None:
        per = {}
        actions = list(actions)
        for tag in sorted(set(actions)):
            mask = np.array([a == tag for a in actions])
            per[tag] = float(err[mask].mean())
        report.per_action = per
    return report
