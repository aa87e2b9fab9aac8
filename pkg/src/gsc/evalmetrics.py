"""Retrieval and noise-detection evaluation.

Recall@K in both directions (rank-based, ties broken by lower candidate
index), detection accuracy/AUC of soft labels against the ground-truth
noise mask, and report assembly with JSON/CSV serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, require_finite

__all__ = [
    "CSV_COLUMNS",
    "DetectionReport",
    "RetrievalReport",
    "assemble_report",
    "csv_row",
    "detection_metrics",
    "recall_at_k",
    "report_from_json",
    "report_to_json",
    "retrieval_report",
]

CSV_COLUMNS = ["mode", "noise", "r1_i2t", "r5_i2t", "r10_i2t",
               "r1_t2i", "r5_t2i", "r10_t2i", "rsum", "det_acc", "det_auc"]


@dataclass(frozen=True)
class RetrievalReport:
    """R@{1,5,10} percentages in both directions."""

    r1_i2t: float
    r5_i2t: float
    r10_i2t: float
    r1_t2i: float
    r5_t2i: float
    r10_t2i: float

    @property
    def recall_sum(self) -> float:
        return (self.r1_i2t + self.r5_i2t + self.r10_i2t
                + self.r1_t2i + self.r5_t2i + self.r10_t2i)


@dataclass(frozen=True)
class DetectionReport:
    """Noise-detection quality of soft labels at threshold 0.5.

    ``auc`` is None when the mask has a single class; the per-class means
    are NaN for an empty class.
    """

    accuracy: float
    auc: float | None
    mean_clean: float
    mean_noisy: float


def recall_at_k(s, gt, k: int) -> float:
    """Percentage of queries whose true match ranks in the top k.

    Rows of ``s`` are queries; ``gt`` maps each query to its target column.
    Ranking is by descending similarity with ties broken toward the lower
    column index, so results are rank-based and deterministic.
    """
    mat = as_matrix(s, "similarity matrix")
    n = mat.shape[0]
    if mat.shape[1] != n:
        raise ValueError(f"similarity matrix must be square, got {mat.shape}")
    gt_arr = np.asarray(gt, dtype=int)
    if not np.array_equal(np.sort(gt_arr), np.arange(n)):
        raise ValueError("gt must be a permutation of range(n)")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    order = np.argsort(-mat, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=int)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(n)[None, :]
    hit = ranks[np.arange(n), gt_arr] < k
    return float(100.0 * hit.mean())


def retrieval_report(s, ks=(1, 5, 10)) -> RetrievalReport:
    """Both-direction report from one pair-similarity matrix (identity truth)."""
    mat = as_matrix(s, "similarity matrix")
    gt = np.arange(mat.shape[0])
    i2t = [recall_at_k(mat, gt, k) for k in ks]
    t2i = [recall_at_k(mat.T, gt, k) for k in ks]
    return RetrievalReport(r1_i2t=i2t[0], r5_i2t=i2t[1], r10_i2t=i2t[2],
                           r1_t2i=t2i[0], r5_t2i=t2i[1], r10_t2i=t2i[2])


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def detection_metrics(y, mask) -> DetectionReport:
    """Accuracy at threshold 0.5 and rank-based AUC of labels vs. noise mask.

    Clean samples (mask False) count as the positive class: a perfect
    labeler assigns them higher values. AUC is the Mann-Whitney statistic
    with midrank tie handling.
    """
    yv = require_finite(np.asarray(y, dtype=float).ravel(), "labels")
    mk = np.asarray(mask, dtype=bool).ravel()
    if yv.shape != mk.shape:
        raise ValueError(f"length mismatch: {yv.shape[0]} labels vs {mk.shape[0]} mask entries")
    clean = ~mk
    accuracy = float(((yv >= 0.5) == clean).mean())
    n_clean = int(clean.sum())
    n_noisy = int(mk.sum())
    if n_clean == 0 or n_noisy == 0:
        auc = None
    else:
        ranks = _average_ranks(yv)
        auc = float((ranks[clean].sum() - n_clean * (n_clean + 1) / 2.0)
                    / (n_clean * n_noisy))
    mean_clean = float(yv[clean].mean()) if n_clean else float("nan")
    mean_noisy = float(yv[mk].mean()) if n_noisy else float("nan")
    return DetectionReport(accuracy=accuracy, auc=auc,
                           mean_clean=mean_clean, mean_noisy=mean_noisy)


def assemble_report(retrieval: RetrievalReport, detection: DetectionReport | None,
                    meta: dict) -> dict:
    """JSON-ready report; detection may be None for clean runs."""
    out = {
        "meta": dict(meta),
        "retrieval": {
            "i2t": {"r1": retrieval.r1_i2t, "r5": retrieval.r5_i2t, "r10": retrieval.r10_i2t},
            "t2i": {"r1": retrieval.r1_t2i, "r5": retrieval.r5_t2i, "r10": retrieval.r10_t2i},
            "recall_sum": retrieval.recall_sum,
        },
        "detection": None,
    }
    if detection is not None:
        out["detection"] = {
            "accuracy": detection.accuracy,
            "auc": detection.auc,
            "mean_clean": detection.mean_clean,
            "mean_noisy": detection.mean_noisy,
        }
    return out


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)


def report_from_json(text: str) -> dict:
    return json.loads(text)


def csv_row(mode: str, noise: float, retrieval: RetrievalReport,
            detection: DetectionReport | None) -> list:
    """One summary row matching CSV_COLUMNS; undefined AUC becomes ''."""
    det_acc = "" if detection is None else detection.accuracy
    det_auc = "" if detection is None or detection.auc is None else detection.auc
    return [mode, noise, retrieval.r1_i2t, retrieval.r5_i2t, retrieval.r10_i2t,
            retrieval.r1_t2i, retrieval.r5_t2i, retrieval.r10_t2i,
            retrieval.recall_sum, det_acc, det_auc]
